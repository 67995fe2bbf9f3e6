#include "celldet/patch_sampler.hpp"

#include <cmath>

#include "celldet/image_io.hpp"

namespace celldet {

std::string_view to_string(PatchOrigin o) {
    return o == PatchOrigin::annotated ? "annotated" : "detected";
}

std::string_view to_string(LabelState s) {
    switch (s) {
        case LabelState::positive: return "positive";
        case LabelState::unlabeled: return "unlabeled";
        case LabelState::pseudo_positive: return "pseudo_positive";
        case LabelState::pseudo_negative: return "pseudo_negative";
    }
    return "unknown";
}

Patch extract_patch(const ImageRecord& image, Point2 center, int size) {
    if (size < 3 || size % 2 == 0) throw InvalidArgument("patch size must be odd and >= 3");
    const Shape s = image.shape();
    if (!(center.x >= 0.0 && center.y >= 0.0 && center.x <= s.width - 1 && center.y <= s.height - 1)) {
        throw BoundsError("patch center outside image '" + image.image_id + "'");
    }
    const int cx = static_cast<int>(std::lround(center.x));
    const int cy = static_cast<int>(std::lround(center.y));
    const int half = size / 2;
    Patch patch{image.image_id, center, RealGrid(size, size, 0.0), PatchOrigin::detected, LabelState::unlabeled};
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const int sy = cy - half + y;
            const int sx = cx - half + x;
            if (image.pixels.contains(sy, sx)) patch.pixels(y, x) = image.pixels(sy, sx);
        }
    }
    return patch;
}

PatchPartition partition_patches(const DetectionResult& detections, const AnnotationSet& annotations,
                                 const ImageRecord& image, int size, double match_radius) {
    if (!(match_radius > 0.0)) throw InvalidArgument("match_radius must be positive");
    PatchPartition out;
    std::vector<Point2> positive_centers;
    for (const auto& a : annotations.points) {
        if (!is_positive(a.source)) continue;
        Patch p = extract_patch(image, a.position(), size);
        p.origin = PatchOrigin::annotated;
        p.label_state = a.source == Source::human ? LabelState::positive : LabelState::pseudo_positive;
        out.positives.push_back(std::move(p));
        positive_centers.push_back(a.position());
    }
    const double r2 = match_radius * match_radius;
    for (const auto& peak : detections.peaks) {
        const Point2 c = peak.position();
        const bool near_positive = std::any_of(positive_centers.begin(), positive_centers.end(),
                                               [&](Point2 a) { return squared_distance(a, c) <= r2; });
        if (near_positive) continue;
        Patch p = extract_patch(image, c, size);
        p.origin = PatchOrigin::detected;
        p.label_state = LabelState::unlabeled;
        out.unlabeled.push_back(std::move(p));
    }
    return out;
}

void dump_patches(const std::filesystem::path& dir, const std::vector<Patch>& patches) {
    for (const auto& p : patches) {
        const std::string name = p.image_id + "_" + std::to_string(std::lround(p.center.x)) + "_" +
                                 std::to_string(std::lround(p.center.y)) + "_" +
                                 std::string(to_string(p.label_state)) + ".pgm";
        write_image(dir / name, p.pixels, 8);
    }
}

}  // namespace celldet
