#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "celldet/annotations.hpp"
#include "celldet/grid.hpp"

namespace celldet {

/// Desk-scale stand-in for fluorescence/phase microscopy frames: Gaussian
/// cell blobs over a smooth uneven background with elongated debris streaks
/// and additive Gaussian noise.
struct SynthConfig {
    Shape shape{128, 128};
    int n_cells = 20;
    double cell_sigma = 2.5;
    double min_separation = 12.0;
    double intensity_lo = 0.45;
    double intensity_hi = 0.75;
    double noise_sigma = 0.05;
    double label_fraction = 0.1;
    std::uint64_t seed = 0;
    double background = 0.15;
    double background_ripple = 0.05;  // amplitude of the smooth background variation
    int n_debris = 8;                 // elongated non-cell streaks
    double debris_lo = 0.3;
    double debris_hi = 0.6;
    int max_attempts = 10000;         // rejection-sampling budget per image
};

void validate(const SynthConfig& c);

struct SyntheticDataset {
    std::vector<ImageRecord> images;
    std::vector<AnnotationSet> ground_truth;  // every cell, source human
};

/// Throws InvalidArgument when n_cells cannot be placed at min_separation
/// within the attempt budget. Image ids are `<prefix>NNN`.
SyntheticDataset generate_dataset(const SynthConfig& config, int n_images, const std::string& prefix = "img");

/// Uniform random subset of round(fraction * N) points, tagged human.
AnnotationSet subsample_labels(const AnnotationSet& full, double fraction, std::uint64_t seed);

/// Writes images/<id>.pgm (16 bit) and <annotation_dir>/<id>.csv.
void write_dataset(const std::filesystem::path& root, const std::vector<ImageRecord>& images,
                   const std::vector<AnnotationSet>& annotations, const std::string& annotation_dir);

}  // namespace celldet
