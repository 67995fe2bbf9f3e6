#include "celldet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <spdlog/spdlog.h>

#include "celldet/io_util.hpp"
#include "celldet/nn/checkpoint.hpp"

namespace celldet {

struct HeatmapNet::Layers {
    std::vector<nn::DoubleConv> encoders;
    std::vector<nn::MaxPool2> pools;
    nn::DoubleConv bottleneck;
    std::vector<nn::DoubleConv> decoders;  // decoders[i] runs at the resolution of encoders[i]
    nn::Conv2d head;

    explicit Layers(const UNetSpec& s)
        : bottleneck(s.base_channels << (s.levels - 1), s.base_channels << s.levels),
          head(s.base_channels, 1, 1) {
        for (int i = 0; i < s.levels; ++i) {
            const int in = i == 0 ? 1 : s.base_channels << (i - 1);
            const int out = s.base_channels << i;
            encoders.emplace_back(in, out);
            pools.emplace_back();
            decoders.emplace_back((s.base_channels << (i + 1)) + out, out);
        }
    }
};

HeatmapNet::HeatmapNet(UNetSpec spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    if (spec.levels < 1 || spec.levels > 6) throw InvalidArgument("unet levels must be in [1,6]");
    if (spec.base_channels < 1) throw InvalidArgument("unet base channels must be positive");
    layers_ = std::make_unique<Layers>(spec);
    Rng rng(seed);
    for (auto& e : layers_->encoders) e.initialize(rng);
    layers_->bottleneck.initialize(rng);
    for (auto& d : layers_->decoders) d.initialize(rng);
    layers_->head.initialize(rng);
}

HeatmapNet::HeatmapNet(const HeatmapNet& other)
    : spec_(other.spec_), seed_(other.seed_), layers_(std::make_unique<Layers>(*other.layers_)) {}

HeatmapNet& HeatmapNet::operator=(const HeatmapNet& other) {
    if (this != &other) {
        spec_ = other.spec_;
        seed_ = other.seed_;
        layers_ = std::make_unique<Layers>(*other.layers_);
    }
    return *this;
}

HeatmapNet::HeatmapNet(HeatmapNet&&) noexcept = default;
HeatmapNet& HeatmapNet::operator=(HeatmapNet&&) noexcept = default;
HeatmapNet::~HeatmapNet() = default;

bool HeatmapNet::accepts(Shape s) const {
    return s.height >= spec_.stride() && s.width >= spec_.stride() && s.height % spec_.stride() == 0 &&
           s.width % spec_.stride() == 0;
}

nn::Tensor HeatmapNet::forward(const nn::Tensor& input) {
    auto& L = *layers_;
    std::vector<nn::Tensor> skips;
    nn::Tensor x = input;
    for (int i = 0; i < spec_.levels; ++i) {
        skips.push_back(L.encoders[i].forward(x));
        x = L.pools[i].forward(skips.back());
    }
    x = L.bottleneck.forward(x);
    for (int i = spec_.levels - 1; i >= 0; --i) {
        x = L.decoders[i].forward(nn::concat_channels(nn::upsample2(x), skips[i]));
    }
    return L.head.forward(x);
}

void HeatmapNet::backward(const nn::Tensor& grad_out) {
    auto& L = *layers_;
    std::vector<nn::Tensor> skip_grads(spec_.levels);
    nn::Tensor g = L.head.backward(grad_out);
    for (int i = 0; i < spec_.levels; ++i) {
        nn::Tensor g_up;
        nn::split_channels(L.decoders[i].backward(g), spec_.base_channels << (i + 1), g_up, skip_grads[i]);
        g = nn::upsample2_backward(g_up);
    }
    g = L.bottleneck.backward(g);
    for (int i = spec_.levels - 1; i >= 0; --i) {
        g = L.pools[i].backward(g);
        for (std::size_t j = 0; j < g.data.size(); ++j) g.data[j] += skip_grads[i].data[j];
        g = L.encoders[i].backward(g);
    }
}

std::vector<nn::Parameter*> HeatmapNet::parameters() {
    std::vector<nn::Parameter*> out;
    auto& L = *layers_;
    for (auto& e : L.encoders) e.collect(out);
    L.bottleneck.collect(out);
    for (auto& d : L.decoders) d.collect(out);
    out.push_back(&L.head.weight());
    out.push_back(&L.head.bias());
    return out;
}

std::vector<float> HeatmapNet::flat_parameters() const {
    std::vector<float> out;
    for (auto* p : const_cast<HeatmapNet*>(this)->parameters()) {
        out.insert(out.end(), p->value.begin(), p->value.end());
    }
    return out;
}

void HeatmapNet::save(const std::filesystem::path& path) const {
    nn::Checkpoint ckpt;
    ckpt.kind = nn::ModelKind::heatmap_net;
    ckpt.architecture = {{"type", "unet"},
                         {"levels", std::to_string(spec_.levels)},
                         {"base_channels", std::to_string(spec_.base_channels)},
                         {"in_channels", "1"},
                         {"seed", std::to_string(seed_)}};
    for (auto* p : const_cast<HeatmapNet*>(this)->parameters()) ckpt.arrays.emplace_back(p->value.begin(), p->value.end());
    nn::save_checkpoint(path, ckpt);
}

HeatmapNet HeatmapNet::load(const std::filesystem::path& path) {
    const auto ckpt = nn::load_checkpoint(path);
    if (ckpt.kind != nn::ModelKind::heatmap_net) throw ParseError("checkpoint is not a heatmap net");
    auto text = [&](const char* key) -> const std::string& {
        const auto it = ckpt.architecture.find(key);
        if (it == ckpt.architecture.end()) throw ParseError(std::string("checkpoint lacks '") + key + "'");
        return it->second;
    };
    auto field = [&](const char* key) { return parse_int(text(key), key); };
    UNetSpec spec{static_cast<int>(field("levels")), static_cast<int>(field("base_channels"))};
    HeatmapNet net(spec, parse_uint64(text("seed"), "seed"));
    auto params = net.parameters();
    if (params.size() != ckpt.arrays.size()) throw ParseError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->size() != ckpt.arrays[i].size()) throw ParseError("checkpoint parameter size mismatch");
        params[i]->value.assign(ckpt.arrays[i].begin(), ckpt.arrays[i].end());
    }
    return net;
}

void validate(const TrainConfig& c) {
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
        throw InvalidArgument("detector learning_rate must be >= 0");
    }
    if (c.epochs < 0) throw InvalidArgument("detector epochs must be >= 0");
    if (c.batch_size < 1) throw InvalidArgument("detector batch_size must be >= 1");
    if (c.crop_size < 0) throw InvalidArgument("detector crop_size must be >= 0");
    if (c.crop_size > 0 && c.crop_size % c.architecture.stride() != 0) {
        throw InvalidArgument("detector crop_size must be a multiple of the net stride");
    }
}

namespace {

struct LossTerms {
    double loss = 0.0;
    std::size_t count = 0;
};

LossTerms masked_sum(const RealGrid& pred, const RealGrid& target, const BinaryGrid& mask) {
    LossTerms t;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.values()[i]) {
            const double d = pred.values()[i] - target.values()[i];
            sum += d * d;
            ++t.count;
        }
    }
    t.loss = sum / static_cast<double>(std::max<std::size_t>(1, t.count));
    return t;
}

void check_shapes(const RealGrid& pred, const HeatmapTarget& target, const LossMask& mask) {
    require_same_shape(pred.shape(), target.values.shape(), "masked loss prediction/target");
    require_same_shape(pred.shape(), mask.values.shape(), "masked loss prediction/mask");
}

nn::Tensor to_tensor(const RealGrid& g) {
    nn::Tensor t(1, g.height(), g.width());
    std::transform(g.begin(), g.end(), t.data.begin(), [](double v) { return static_cast<float>(v); });
    return t;
}

RealGrid to_grid(const nn::Tensor& t) {
    RealGrid g(t.height, t.width);
    std::transform(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(g.size()), g.begin(),
                   [](float v) { return static_cast<double>(v); });
    return g;
}

template <class T>
Grid<T> crop(const Grid<T>& g, int y0, int x0, int size) {
    Grid<T> out(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) out(y, x) = g(y0 + y, x0 + x);
    }
    return out;
}

struct CropOrigin {
    int y = 0;
    int x = 0;
};

// Picks a mask pixel uniformly, then a crop origin uniformly among those whose
// window contains it, so every crop carries supervision when the mask allows.
CropOrigin pick_crop(const TrainingSample& s, int size, Rng& rng, const std::vector<std::size_t>& mask_pixels) {
    const int h = s.image.pixels.height();
    const int w = s.image.pixels.width();
    auto uniform = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    if (mask_pixels.empty()) return {uniform(0, h - size), uniform(0, w - size)};
    const std::size_t idx = mask_pixels[std::uniform_int_distribution<std::size_t>(0, mask_pixels.size() - 1)(rng)];
    const int py = static_cast<int>(idx / w);
    const int px = static_cast<int>(idx % w);
    return {uniform(std::max(0, py - size + 1), std::min(py, h - size)),
            uniform(std::max(0, px - size + 1), std::min(px, w - size))};
}

}  // namespace

double masked_mse_loss(const RealGrid& pred, const HeatmapTarget& target, const LossMask& mask) {
    check_shapes(pred, target, mask);
    const auto t = masked_sum(pred, target.values, mask.values);
    if (t.count == 0) spdlog::warn("masked_mse_loss: mask is all zero, loss is 0");
    return t.loss;
}

RealGrid masked_mse_gradient(const RealGrid& pred, const HeatmapTarget& target, const LossMask& mask) {
    check_shapes(pred, target, mask);
    const std::size_t n = std::max<std::size_t>(1, mask.count());
    RealGrid g(pred.shape(), 0.0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.values.values()[i]) {
            g.values()[i] = 2.0 * (pred.values()[i] - target.values.values()[i]) / static_cast<double>(n);
        }
    }
    return g;
}

TrainedDetector train_detector(const std::vector<TrainingSample>& dataset, const TrainConfig& config) {
    return train_detector(dataset, config, HeatmapNet(config.architecture, config.seed));
}

TrainedDetector train_detector(const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                               HeatmapNet init) {
    validate(config);
    if (dataset.empty()) throw InvalidArgument("train_detector: empty dataset");
    std::vector<std::vector<std::size_t>> mask_pixels(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& s = dataset[i];
        require_same_shape(s.image.shape(), s.target.values.shape(), "training target");
        require_same_shape(s.image.shape(), s.mask.values.shape(), "training mask");
        const Shape shape = s.image.shape();
        if (config.crop_size > 0) {
            if (shape.height < config.crop_size || shape.width < config.crop_size) {
                throw ShapeError("image '" + s.image.image_id + "' is smaller than the training crop");
            }
        } else if (!init.accepts(shape)) {
            throw ShapeError("image '" + s.image.image_id + "' shape " + to_string(shape) +
                             " is not a multiple of the net stride");
        }
        for (std::size_t j = 0; j < s.mask.values.size(); ++j) {
            if (s.mask.values.values()[j]) mask_pixels[i].push_back(j);
        }
        if (mask_pixels[i].empty()) {
            spdlog::warn("train_detector: image '{}' has an all-zero loss mask", s.image.image_id);
        }
    }

    TrainedDetector result{std::move(init), {}};
    HeatmapNet& net = result.net;
    nn::Optimizer optimizer(net.parameters(), config.optimizer, config.learning_rate, config.momentum);
    Rng rng = make_rng(config.seed, "detector-train");
    std::vector<std::size_t> order(dataset.size());

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const float inv_batch = 1.0f / static_cast<float>(end - start);
            double batch_loss = 0.0;
            optimizer.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = dataset[order[b]];
                RealGrid image = s.image.pixels;
                RealGrid target = s.target.values;
                BinaryGrid mask = s.mask.values;
                if (config.crop_size > 0) {
                    const auto o = pick_crop(s, config.crop_size, rng, mask_pixels[order[b]]);
                    image = crop(image, o.y, o.x, config.crop_size);
                    target = crop(target, o.y, o.x, config.crop_size);
                    mask = crop(mask, o.y, o.x, config.crop_size);
                }
                const RealGrid pred = to_grid(net.forward(to_tensor(image)));
                const auto terms = masked_sum(pred, target, mask);
                if (!std::isfinite(terms.loss)) {
                    throw NumericError("train_detector: non-finite loss at epoch " + std::to_string(epoch) +
                                       " on image '" + s.image.image_id + "'");
                }
                batch_loss += terms.loss;
                nn::Tensor grad(1, pred.height(), pred.width());
                const double scale = 2.0 / static_cast<double>(std::max<std::size_t>(1, terms.count));
                for (std::size_t j = 0; j < pred.size(); ++j) {
                    if (mask.values()[j]) {
                        grad.data[j] = static_cast<float>(scale * (pred.values()[j] - target.values()[j]) * inv_batch);
                    }
                }
                net.backward(grad);
            }
            optimizer.step();
            epoch_sum += batch_loss / static_cast<double>(end - start);
            ++steps;
        }
        result.epoch_loss.push_back(epoch_sum / std::max(1, steps));
        spdlog::debug("detector epoch {} loss {:.6g}", epoch, result.epoch_loss.back());
    }
    return result;
}

double evaluate_masked_loss(HeatmapNet& net, const std::vector<TrainingSample>& dataset) {
    if (dataset.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : dataset) {
        const RealGrid pred = predict_heatmap_padded(net, s.image);
        total += masked_sum(pred, s.target.values, s.mask.values).loss;
    }
    return total / static_cast<double>(dataset.size());
}

RealGrid predict_heatmap(HeatmapNet& net, const ImageRecord& image) {
    if (!net.accepts(image.shape())) {
        throw ShapeError("image '" + image.image_id + "' shape " + to_string(image.shape()) +
                         " is incompatible with net stride " + std::to_string(net.spec().stride()));
    }
    return to_grid(net.forward(to_tensor(image.pixels)));
}

namespace {

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

int round_up(int v, int m) { return std::max(m, (v + m - 1) / m * m); }

}  // namespace

RealGrid predict_heatmap_padded(HeatmapNet& net, const ImageRecord& image) {
    const Shape s = image.shape();
    if (net.accepts(s)) return predict_heatmap(net, image);
    const int stride = net.spec().stride();
    ImageRecord padded{image.image_id, RealGrid(round_up(s.height, stride), round_up(s.width, stride)), {}};
    for (int y = 0; y < padded.pixels.height(); ++y) {
        for (int x = 0; x < padded.pixels.width(); ++x) {
            padded.pixels(y, x) = image.pixels(reflect_index(y, s.height), reflect_index(x, s.width));
        }
    }
    const RealGrid full = predict_heatmap(net, padded);
    RealGrid out(s);
    for (int y = 0; y < s.height; ++y) {
        for (int x = 0; x < s.width; ++x) out(y, x) = full(y, x);
    }
    return out;
}

std::vector<Point2> DetectionResult::positions() const {
    std::vector<Point2> out;
    out.reserve(peaks.size());
    for (const auto& p : peaks) out.push_back(p.position());
    return out;
}

std::vector<Peak> detect_peaks(const RealGrid& heatmap, double th) {
    for (double v : heatmap) {
        if (!std::isfinite(v)) throw NumericError("detect_peaks: heatmap has non-finite values");
    }
    std::vector<Peak> peaks;
    if (heatmap.empty()) return peaks;
    const auto [lo_it, hi_it] = std::minmax_element(heatmap.begin(), heatmap.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (!(hi > lo)) return peaks;
    const double scale = 255.0 / (hi - lo);

    const int h = heatmap.height();
    const int w = heatmap.width();
    BinaryGrid visited(h, w, 0);
    std::vector<std::pair<int, int>> plateau;
    std::queue<std::pair<int, int>> frontier;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (visited(y, x)) continue;
            const double v = heatmap(y, x);
            bool greater = false;
            bool tie = false;
            for (int dy = -1; dy <= 1 && !greater; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if ((dy == 0 && dx == 0) || !heatmap.contains(y + dy, x + dx)) continue;
                    const double n = heatmap(y + dy, x + dx);
                    if (n > v) {
                        greater = true;
                        break;
                    }
                    if (n == v) tie = true;
                }
            }
            if (greater) continue;
            if (tie) {
                // Flood the equal-valued plateau; it is a maximum only if no
                // pixel bordering it is larger. Raster order makes (y, x) its
                // smallest member.
                plateau.clear();
                frontier.push({y, x});
                visited(y, x) = 1;
                bool is_max = true;
                while (!frontier.empty()) {
                    const auto [cy, cx] = frontier.front();
                    frontier.pop();
                    plateau.emplace_back(cy, cx);
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int ny = cy + dy;
                            const int nx = cx + dx;
                            if ((dy == 0 && dx == 0) || !heatmap.contains(ny, nx)) continue;
                            const double n = heatmap(ny, nx);
                            if (n > v) is_max = false;
                            if (n == v && !visited(ny, nx)) {
                                visited(ny, nx) = 1;
                                frontier.push({ny, nx});
                            }
                        }
                    }
                }
                if (!is_max) continue;
            }
            const double normalized = (v - lo) * scale;
            if (normalized > th) peaks.push_back({x, y, normalized});
        }
    }
    return peaks;
}

std::string format_detections(const DetectionResult& result) {
    std::string out = "x,y,value\n";
    for (const auto& p : result.peaks) {
        out += std::to_string(p.x) + "," + std::to_string(p.y) + "," + format_double(p.value) + "\n";
    }
    return out;
}

void save_detections(const std::filesystem::path& path, const DetectionResult& result) {
    write_file_atomic(path, format_detections(result));
}

}  // namespace celldet
