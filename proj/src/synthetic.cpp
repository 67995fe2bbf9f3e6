#include "celldet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "celldet/errors.hpp"
#include "celldet/image_io.hpp"
#include "celldet/rng.hpp"

namespace celldet {

void validate(const SynthConfig& c) {
    if (c.shape.height < 1 || c.shape.width < 1) throw InvalidArgument("synthetic shape must be non-empty");
    if (c.n_cells < 0) throw InvalidArgument("n_cells must be >= 0");
    if (!(c.min_separation > 0.0)) throw InvalidArgument("min_separation must be positive");
    if (!(c.cell_sigma > 0.0)) throw InvalidArgument("cell_sigma must be positive");
    if (!(c.intensity_lo <= c.intensity_hi)) throw InvalidArgument("intensity range must satisfy lo <= hi");
    if (c.intensity_lo < 0.0 || c.intensity_hi > 1.0) throw InvalidArgument("intensity range must lie in [0,1]");
    if (!(c.noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
    if (!(c.label_fraction > 0.0 && c.label_fraction <= 1.0)) throw InvalidArgument("label_fraction must lie in (0,1]");
    if (c.n_debris < 0) throw InvalidArgument("n_debris must be >= 0");
    if (!(c.debris_lo <= c.debris_hi)) throw InvalidArgument("debris range must satisfy lo <= hi");
    if (c.max_attempts < 1) throw InvalidArgument("max_attempts must be >= 1");
}

namespace {

struct Segment {
    Point2 a;
    Point2 b;
    double amplitude = 0.0;
};

double segment_distance2(Point2 p, const Segment& s) {
    const double vx = s.b.x - s.a.x;
    const double vy = s.b.y - s.a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - s.a.x) * vx + (p.y - s.a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return squared_distance(p, {s.a.x + t * vx, s.a.y + t * vy});
}

constexpr double kBorderMargin = 3.0;
constexpr double kDebrisWidth = 1.2;
constexpr double kDebrisClearance = 7.0;  // minimum gap between a streak and any cell center

}  // namespace

SyntheticDataset generate_dataset(const SynthConfig& config, int n_images, const std::string& prefix) {
    validate(config);
    if (n_images < 0) throw InvalidArgument("n_images must be >= 0");
    SyntheticDataset out;
    const int h = config.shape.height;
    const int w = config.shape.width;
    const double margin_x = std::min(kBorderMargin, (w - 1) / 2.0);
    const double margin_y = std::min(kBorderMargin, (h - 1) / 2.0);

    for (int n = 0; n < n_images; ++n) {
        Rng rng = make_rng(config.seed, "synth-image", static_cast<std::uint64_t>(n));
        std::uniform_real_distribution<double> ux(margin_x, w - 1 - margin_x);
        std::uniform_real_distribution<double> uy(margin_y, h - 1 - margin_y);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        std::vector<Point2> cells;
        int attempts = 0;
        const double sep2 = config.min_separation * config.min_separation;
        while (static_cast<int>(cells.size()) < config.n_cells) {
            if (++attempts > config.max_attempts) {
                throw InvalidArgument("cannot place " + std::to_string(config.n_cells) + " cells at separation " +
                                      std::to_string(config.min_separation) + " within the attempt budget");
            }
            const Point2 c{ux(rng), uy(rng)};
            if (std::all_of(cells.begin(), cells.end(), [&](Point2 o) { return squared_distance(o, c) >= sep2; })) {
                cells.push_back(c);
            }
        }

        std::vector<Segment> debris;
        attempts = 0;
        while (static_cast<int>(debris.size()) < config.n_debris && attempts < config.max_attempts) {
            ++attempts;
            const Point2 mid{ux(rng), uy(rng)};
            const double angle = unit(rng) * std::numbers::pi;
            const double half = 4.0 + 5.0 * unit(rng);
            const double amp = config.debris_lo + (config.debris_hi - config.debris_lo) * unit(rng);
            Segment s{{mid.x - half * std::cos(angle), mid.y - half * std::sin(angle)},
                      {mid.x + half * std::cos(angle), mid.y + half * std::sin(angle)},
                      amp};
            const double clear2 = kDebrisClearance * kDebrisClearance;
            if (std::all_of(cells.begin(), cells.end(), [&](Point2 c) { return segment_distance2(c, s) >= clear2; })) {
                debris.push_back(s);
            }
        }

        const double fx = (0.5 + unit(rng)) / w;
        const double fy = (0.5 + unit(rng)) / h;
        const double phase_x = unit(rng) * 2.0 * std::numbers::pi;
        const double phase_y = unit(rng) * 2.0 * std::numbers::pi;
        std::vector<double> amplitudes;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            amplitudes.push_back(config.intensity_lo + (config.intensity_hi - config.intensity_lo) * unit(rng));
        }

        ImageRecord image;
        char id[32];
        std::snprintf(id, sizeof(id), "%03d", n);
        image.image_id = prefix + id;
        image.pixels = RealGrid(h, w);
        std::normal_distribution<double> noise(0.0, 1.0);
        const double cell_inv = 1.0 / (2.0 * config.cell_sigma * config.cell_sigma);
        const double debris_inv = 1.0 / (2.0 * kDebrisWidth * kDebrisWidth);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const Point2 q{double(x), double(y)};
                double v = config.background + config.background_ripple * std::sin(2.0 * std::numbers::pi * fx * x + phase_x) *
                                                   std::cos(2.0 * std::numbers::pi * fy * y + phase_y);
                for (std::size_t i = 0; i < cells.size(); ++i) {
                    v += amplitudes[i] * std::exp(-squared_distance(q, cells[i]) * cell_inv);
                }
                for (const auto& s : debris) v += s.amplitude * std::exp(-segment_distance2(q, s) * debris_inv);
                if (config.noise_sigma > 0.0) v += config.noise_sigma * noise(rng);
                image.pixels(y, x) = std::clamp(v, 0.0, 1.0);
            }
        }

        AnnotationSet gt{image.image_id, {}};
        for (const auto& c : cells) gt.points.push_back({c.x, c.y, Source::human});
        out.images.push_back(std::move(image));
        out.ground_truth.push_back(std::move(gt));
    }
    return out;
}

AnnotationSet subsample_labels(const AnnotationSet& full, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("label fraction must lie in (0,1]");
    const std::size_t n = full.points.size();
    const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(seed, "subsample:" + full.image_id);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(k, n));
    std::sort(idx.begin(), idx.end());
    AnnotationSet out{full.image_id, {}};
    for (auto i : idx) {
        auto p = full.points[i];
        p.source = Source::human;
        out.points.push_back(p);
    }
    return out;
}

void write_dataset(const std::filesystem::path& root, const std::vector<ImageRecord>& images,
                   const std::vector<AnnotationSet>& annotations, const std::string& annotation_dir) {
    for (const auto& img : images) write_image(root / "images" / (img.image_id + ".pgm"), img.pixels, 16);
    for (const auto& a : annotations) save_annotations(root / annotation_dir / (a.image_id + ".csv"), a);
}

}  // namespace celldet
