#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "celldet/annotations.hpp"
#include "celldet/detector.hpp"
#include "celldet/grid.hpp"

namespace celldet {

enum class PatchOrigin { annotated, detected };
enum class LabelState { positive, unlabeled, pseudo_positive, pseudo_negative };

std::string_view to_string(PatchOrigin o);
std::string_view to_string(LabelState s);

struct Patch {
    std::string image_id;
    Point2 center;
    RealGrid pixels;  // size x size, size odd
    PatchOrigin origin = PatchOrigin::detected;
    LabelState label_state = LabelState::unlabeled;
};

/// size x size crop centered at the nearest integer pixel; out-of-image area is zero.
Patch extract_patch(const ImageRecord& image, Point2 center, int size);

struct PatchPartition {
    std::vector<Patch> positives;  // X_P
    std::vector<Patch> unlabeled;  // X_U
};

/// Positives: one patch per human or pseudo-positive annotation, centered on it.
/// Unlabeled: one patch per detected peak farther than match_radius from every
/// positive-source annotation. Pseudo-negative annotations do not exclude peaks.
PatchPartition partition_patches(const DetectionResult& detections, const AnnotationSet& annotations,
                                 const ImageRecord& image, int size, double match_radius);

/// Writes each patch as `<image_id>_<x>_<y>_<state>.pgm` into `dir`.
void dump_patches(const std::filesystem::path& dir, const std::vector<Patch>& patches);

}  // namespace celldet
