#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "celldet/grid.hpp"

namespace celldet {

enum class Source { human, pseudo_positive, pseudo_negative };

std::string_view to_string(Source s);
std::optional<Source> parse_source(std::string_view s);

/// Positive sources contribute a heatmap kernel; every source opens a mask disk.
inline bool is_positive(Source s) { return s != Source::pseudo_negative; }

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double squared_distance(Point2 a, Point2 b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

double distance(Point2 a, Point2 b);

struct AnnotatedPoint {
    double x = 0.0;
    double y = 0.0;
    Source source = Source::human;

    Point2 position() const { return {x, y}; }
    friend bool operator==(const AnnotatedPoint&, const AnnotatedPoint&) = default;
};

struct AnnotationSet {
    std::string image_id;
    std::vector<AnnotatedPoint> points;

    std::vector<Point2> positions(Source s) const;
    std::vector<Point2> positive_positions() const;
    std::size_t count(Source s) const;

    friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

/// Throws BoundsError for points outside [0,W-1]x[0,H-1] and InvalidArgument
/// for exact duplicates (same coordinates and same source).
void validate(const AnnotationSet& set, Shape image_shape);

/// Reads an annotation CSV (`x,y,source` header). Row numbers in errors are
/// 1-based and exclude the header.
AnnotationSet load_annotations(const std::filesystem::path& path, Shape image_shape,
                               std::string image_id = {});
AnnotationSet parse_annotations(std::string_view csv, Shape image_shape, std::string image_id = {});

std::string format_annotations(const AnnotationSet& set);
void save_annotations(const std::filesystem::path& path, const AnnotationSet& set);

/// Reads the `x` and `y` columns of any CSV with a header naming them.
std::vector<Point2> load_points(const std::filesystem::path& path);
std::vector<Point2> parse_points(std::string_view csv);

struct HeatmapTarget {
    RealGrid values;
    double sigma = 0.0;
};

struct LossMask {
    BinaryGrid values;
    double radius = 0.0;

    std::size_t count() const;
};

/// Per-pixel maximum of unit-amplitude Gaussian kernels evaluated at integer
/// pixel centers. Kernel tails below 1e-14 (beyond 8 sigma) are not evaluated.
HeatmapTarget render_heatmap(std::span<const Point2> points, Shape shape, double sigma);

/// Union of closed disks of radius r around every listed point, clipped at borders.
LossMask render_loss_mask(std::span<const Point2> positive_points,
                          std::span<const Point2> negative_points, Shape shape, double radius);

/// Heatmap from positive-source points and mask from all points of the set.
HeatmapTarget render_heatmap(const AnnotationSet& set, Shape shape, double sigma);
LossMask render_loss_mask(const AnnotationSet& set, Shape shape, double radius);

}  // namespace celldet
