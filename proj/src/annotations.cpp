#include "celldet/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"

namespace celldet {

std::string_view to_string(Source s) {
    switch (s) {
        case Source::human: return "human";
        case Source::pseudo_positive: return "pseudo_positive";
        case Source::pseudo_negative: return "pseudo_negative";
    }
    return "unknown";
}

std::optional<Source> parse_source(std::string_view s) {
    if (s == "human") return Source::human;
    if (s == "pseudo_positive") return Source::pseudo_positive;
    if (s == "pseudo_negative") return Source::pseudo_negative;
    return std::nullopt;
}

double distance(Point2 a, Point2 b) { return std::sqrt(squared_distance(a, b)); }

std::vector<Point2> AnnotationSet::positions(Source s) const {
    std::vector<Point2> out;
    for (const auto& p : points) {
        if (p.source == s) out.push_back(p.position());
    }
    return out;
}

std::vector<Point2> AnnotationSet::positive_positions() const {
    std::vector<Point2> out;
    for (const auto& p : points) {
        if (is_positive(p.source)) out.push_back(p.position());
    }
    return out;
}

std::size_t AnnotationSet::count(Source s) const {
    return static_cast<std::size_t>(
        std::count_if(points.begin(), points.end(), [s](const AnnotatedPoint& p) { return p.source == s; }));
}

void validate(const AnnotationSet& set, Shape image_shape) {
    std::string bad;
    for (std::size_t i = 0; i < set.points.size(); ++i) {
        const auto& p = set.points[i];
        const bool inside = std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.y >= 0.0 &&
                            p.x <= image_shape.width - 1 && p.y <= image_shape.height - 1;
        if (!inside) bad += (bad.empty() ? "" : ",") + std::to_string(i + 1);
    }
    if (!bad.empty()) {
        const bool several = bad.find(',') != std::string::npos;
        throw BoundsError("points outside " + to_string(image_shape) + " image at " + (several ? "rows " : "row ") + bad);
    }
    std::set<std::tuple<double, double, Source>> seen;
    for (std::size_t i = 0; i < set.points.size(); ++i) {
        const auto& p = set.points[i];
        if (!seen.emplace(p.x, p.y, p.source).second) {
            throw InvalidArgument("duplicate annotation at row " + std::to_string(i + 1));
        }
    }
}

AnnotationSet parse_annotations(std::string_view csv, Shape image_shape, std::string image_id) {
    AnnotationSet set;
    set.image_id = std::move(image_id);
    const auto lines = split(csv, '\n');
    std::size_t line_no = 0;
    bool header_seen = false;
    std::size_t row = 0;
    for (const auto& raw : lines) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != "x,y,source") {
                throw ParseError("expected header 'x,y,source', got '" + std::string(line) + "'");
            }
            header_seen = true;
            continue;
        }
        ++row;
        const auto fields = split(line, ',');
        const std::string where = "row " + std::to_string(row);
        if (fields.size() != 3) throw ParseError(where + ": expected 3 fields");
        AnnotatedPoint p;
        p.x = parse_double(fields[0], where);
        p.y = parse_double(fields[1], where);
        const auto source = parse_source(trim(fields[2]));
        if (!source) throw ParseError(where + ": unknown source '" + fields[2] + "'");
        p.source = *source;
        set.points.push_back(p);
    }
    if (!header_seen) throw ParseError("missing header 'x,y,source'");
    validate(set, image_shape);
    return set;
}

AnnotationSet load_annotations(const std::filesystem::path& path, Shape image_shape, std::string image_id) {
    if (image_id.empty()) image_id = path.stem().string();
    try {
        return parse_annotations(read_text_file(path), image_shape, std::move(image_id));
    } catch (const ParseError& e) {
        throw ParseError("'" + path.string() + "': " + e.what());
    } catch (const BoundsError& e) {
        throw BoundsError("'" + path.string() + "': " + e.what());
    }
}

std::string format_annotations(const AnnotationSet& set) {
    std::string out = "x,y,source\n";
    for (const auto& p : set.points) {
        out += format_double(p.x) + "," + format_double(p.y) + "," + std::string(to_string(p.source)) + "\n";
    }
    return out;
}

void save_annotations(const std::filesystem::path& path, const AnnotationSet& set) {
    write_file_atomic(path, format_annotations(set));
}

std::vector<Point2> parse_points(std::string_view csv) {
    const auto lines = split(csv, '\n');
    std::vector<Point2> out;
    int xcol = -1;
    int ycol = -1;
    std::size_t row = 0;
    for (const auto& raw : lines) {
        const auto line = trim(raw);
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (xcol < 0) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (trim(fields[i]) == "x") xcol = static_cast<int>(i);
                if (trim(fields[i]) == "y") ycol = static_cast<int>(i);
            }
            if (xcol < 0 || ycol < 0) throw ParseError("point CSV header lacks x and y columns");
            continue;
        }
        ++row;
        const std::string where = "row " + std::to_string(row);
        if (static_cast<int>(fields.size()) <= std::max(xcol, ycol)) throw ParseError(where + ": too few fields");
        out.push_back({parse_double(fields[xcol], where), parse_double(fields[ycol], where)});
    }
    if (xcol < 0) throw ParseError("point CSV is empty");
    return out;
}

std::vector<Point2> load_points(const std::filesystem::path& path) {
    try {
        return parse_points(read_text_file(path));
    } catch (const ParseError& e) {
        throw ParseError("'" + path.string() + "': " + e.what());
    }
}

std::size_t LossMask::count() const {
    return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

HeatmapTarget render_heatmap(std::span<const Point2> points, Shape shape, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("heatmap sigma must be positive");
    HeatmapTarget target{RealGrid(shape, 0.0), sigma};
    const double reach = 8.0 * sigma;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (const auto& c : points) {
        const int y0 = std::max(0, static_cast<int>(std::floor(c.y - reach)));
        const int y1 = std::min(shape.height - 1, static_cast<int>(std::ceil(c.y + reach)));
        const int x0 = std::max(0, static_cast<int>(std::floor(c.x - reach)));
        const int x1 = std::min(shape.width - 1, static_cast<int>(std::ceil(c.x + reach)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double v = std::exp(-squared_distance({double(x), double(y)}, c) * inv);
                double& cell = target.values(y, x);
                cell = std::max(cell, v);
            }
        }
    }
    return target;
}

LossMask render_loss_mask(std::span<const Point2> positive_points, std::span<const Point2> negative_points,
                          Shape shape, double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("mask radius must be positive");
    LossMask mask{BinaryGrid(shape, 0), radius};
    const double r2 = radius * radius;
    auto stamp = [&](Point2 c) {
        const int y0 = std::max(0, static_cast<int>(std::floor(c.y - radius)));
        const int y1 = std::min(shape.height - 1, static_cast<int>(std::ceil(c.y + radius)));
        const int x0 = std::max(0, static_cast<int>(std::floor(c.x - radius)));
        const int x1 = std::min(shape.width - 1, static_cast<int>(std::ceil(c.x + radius)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (squared_distance({double(x), double(y)}, c) <= r2) mask.values(y, x) = 1;
            }
        }
    };
    for (const auto& p : positive_points) stamp(p);
    for (const auto& p : negative_points) stamp(p);
    return mask;
}

HeatmapTarget render_heatmap(const AnnotationSet& set, Shape shape, double sigma) {
    const auto pos = set.positive_positions();
    return render_heatmap(pos, shape, sigma);
}

LossMask render_loss_mask(const AnnotationSet& set, Shape shape, double radius) {
    const auto pos = set.positive_positions();
    const auto neg = set.positions(Source::pseudo_negative);
    return render_loss_mask(pos, neg, shape, radius);
}

}  // namespace celldet
