#include "celldet/pu_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "celldet/io_util.hpp"
#include "celldet/nn/checkpoint.hpp"
#include "celldet/nn/optim.hpp"
#include "celldet/rng.hpp"

namespace celldet {

std::string_view to_string(SurrogateLoss k) {
    return k == SurrogateLoss::zero_one ? "zero_one" : "sigmoid";
}

SurrogateLoss parse_surrogate(std::string_view s) {
    if (s == "zero_one") return SurrogateLoss::zero_one;
    if (s == "sigmoid") return SurrogateLoss::sigmoid;
    throw ParseError("unknown surrogate loss '" + std::string(s) + "'");
}

double pointwise_loss(double score, int label, SurrogateLoss kind) {
    const double margin = score * label;
    if (kind == SurrogateLoss::zero_one) {
        const double sign = margin > 0 ? 1.0 : (margin < 0 ? -1.0 : 0.0);
        return (1.0 - sign) / 2.0;
    }
    // 1 / (1 + e^m), written to avoid overflow for large |m|.
    if (margin >= 0) {
        const double e = std::exp(-margin);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(margin));
}

namespace {

void check_risk_inputs(std::span<const double> p, std::span<const double> u, double prior) {
    if (p.empty()) throw InvalidArgument("pu_risk: positive scores are empty");
    if (u.empty()) throw InvalidArgument("pu_risk: unlabeled scores are empty");
    if (!(prior > 0.0 && prior < 1.0)) throw InvalidArgument("pu_risk: prior must lie in (0,1)");
}

double mean_loss(std::span<const double> scores, int label, SurrogateLoss kind) {
    double sum = 0.0;
    for (double s : scores) sum += pointwise_loss(s, label, kind);
    return sum / static_cast<double>(scores.size());
}

}  // namespace

double pu_risk(std::span<const double> scores_p, std::span<const double> scores_u, double prior,
               SurrogateLoss kind) {
    check_risk_inputs(scores_p, scores_u, prior);
    const double rp_plus = mean_loss(scores_p, +1, kind);
    const double rp_minus = mean_loss(scores_p, -1, kind);
    const double ru_minus = mean_loss(scores_u, -1, kind);
    return prior * rp_plus + std::max(0.0, ru_minus - prior * rp_minus);
}

PuRiskGradient pu_risk_gradient(std::span<const double> scores_p, std::span<const double> scores_u, double prior) {
    check_risk_inputs(scores_p, scores_u, prior);
    constexpr auto kind = SurrogateLoss::sigmoid;
    const double np = static_cast<double>(scores_p.size());
    const double nu = static_cast<double>(scores_u.size());
    const double inner = mean_loss(scores_u, -1, kind) - prior * mean_loss(scores_p, -1, kind);

    PuRiskGradient g;
    g.clamped = !(inner > 0.0);
    g.risk = prior * mean_loss(scores_p, +1, kind) + std::max(0.0, inner);
    // d/ds l(s, y) = -y * l * (1 - l) for the sigmoid loss.
    auto dloss = [](double s, int y) {
        const double l = pointwise_loss(s, y, kind);
        return -y * l * (1.0 - l);
    };
    g.d_scores_p.resize(scores_p.size());
    g.d_scores_u.assign(scores_u.size(), 0.0);
    for (std::size_t i = 0; i < scores_p.size(); ++i) {
        double d = prior / np * dloss(scores_p[i], +1);
        if (!g.clamped) d -= prior / np * dloss(scores_p[i], -1);
        g.d_scores_p[i] = d;
    }
    if (!g.clamped) {
        for (std::size_t k = 0; k < scores_u.size(); ++k) g.d_scores_u[k] = dloss(scores_u[k], -1) / nu;
    }
    return g;
}

void validate(const PUConfig& c) {
    if (!(c.prior > 0.0 && c.prior < 1.0)) throw InvalidArgument("PU prior must lie in (0,1)");
    if (!(c.learning_rate >= 0.0)) throw InvalidArgument("PU learning_rate must be >= 0");
    if (c.epochs < 0) throw InvalidArgument("PU epochs must be >= 0");
    if (c.batch_size < 1) throw InvalidArgument("PU batch_size must be >= 1");
    if (c.feature_dim < 1) throw InvalidArgument("PU feature_dim must be >= 1");
}

PatchBackbone::PatchBackbone(int patch_size, int feature_dim, std::uint64_t seed)
    : patch_size_(patch_size), feature_dim_(feature_dim) {
    if (patch_size < 8) throw InvalidArgument("patch backbone needs patches of at least 8x8");
    if (feature_dim < 1) throw InvalidArgument("feature_dim must be >= 1");
    const int widths[3] = {std::max(1, feature_dim / 4), std::max(1, feature_dim / 2), feature_dim};
    int in = 1;
    for (int w : widths) {
        convs.emplace_back(in, w, 3);
        relus_.emplace_back();
        pools_.emplace_back();
        in = w;
    }
    Rng rng(seed);
    for (auto& c : convs) c.initialize(rng);
}

std::vector<float> PatchBackbone::forward(const RealGrid& patch) {
    if (patch.height() != patch_size_ || patch.width() != patch_size_) {
        throw ShapeError("patch size " + to_string(patch.shape()) + " does not match backbone size " +
                         std::to_string(patch_size_));
    }
    nn::Tensor x(1, patch_size_, patch_size_);
    std::transform(patch.begin(), patch.end(), x.data.begin(), [](double v) { return static_cast<float>(v); });
    for (std::size_t i = 0; i < convs.size(); ++i) {
        x = pools_[i].forward(relus_[i].forward(convs[i].forward(x)));
    }
    pooled_h_ = x.height;
    pooled_w_ = x.width;
    std::vector<float> features(feature_dim_);
    const float inv = 1.0f / static_cast<float>(x.plane());
    for (int c = 0; c < feature_dim_; ++c) {
        const float* ch = x.channel(c);
        float sum = 0.0f;
        for (std::size_t j = 0; j < x.plane(); ++j) sum += ch[j];
        features[c] = sum * inv;
    }
    return features;
}

void PatchBackbone::backward(std::span<const float> grad_features) {
    nn::Tensor g(feature_dim_, pooled_h_, pooled_w_);
    const float inv = 1.0f / static_cast<float>(g.plane());
    for (int c = 0; c < feature_dim_; ++c) {
        float* ch = g.channel(c);
        std::fill(ch, ch + g.plane(), grad_features[c] * inv);
    }
    for (std::size_t i = convs.size(); i-- > 0;) {
        g = convs[i].backward(relus_[i].backward(pools_[i].backward(g)));
    }
}

std::vector<nn::Parameter*> PatchBackbone::parameters() {
    std::vector<nn::Parameter*> out;
    for (auto& c : convs) {
        out.push_back(&c.weight());
        out.push_back(&c.bias());
    }
    return out;
}

std::vector<float> PatchBackbone::flat_parameters() const {
    std::vector<float> out;
    for (auto* p : const_cast<PatchBackbone*>(this)->parameters()) {
        out.insert(out.end(), p->value.begin(), p->value.end());
    }
    return out;
}

FeatureExtractor::FeatureExtractor(std::shared_ptr<const PatchBackbone> backbone) : backbone_(std::move(backbone)) {}

std::vector<double> FeatureExtractor::extract(const RealGrid& patch) const {
    PatchBackbone scratch = *backbone_;
    const auto f = scratch.forward(patch);
    return {f.begin(), f.end()};
}

PUClassifier::PUClassifier(std::shared_ptr<const PatchBackbone> backbone, std::vector<float> head_weights,
                           float head_bias, std::uint64_t seed)
    : backbone_(std::move(backbone)), head_w_(std::move(head_weights)), head_b_(head_bias), seed_(seed) {
    if (static_cast<int>(head_w_.size()) != backbone_->feature_dim()) {
        throw ShapeError("classifier head size does not match feature dimension");
    }
}

double PUClassifier::score(const RealGrid& patch) const {
    PatchBackbone scratch = *backbone_;
    const auto f = scratch.forward(patch);
    double s = head_b_;
    for (std::size_t i = 0; i < f.size(); ++i) s += static_cast<double>(head_w_[i]) * f[i];
    return s;
}

std::vector<double> PUClassifier::scores(const std::vector<Patch>& patches) const {
    PatchBackbone scratch = *backbone_;
    std::vector<double> out;
    out.reserve(patches.size());
    for (const auto& p : patches) {
        const auto f = scratch.forward(p.pixels);
        double s = head_b_;
        for (std::size_t i = 0; i < f.size(); ++i) s += static_cast<double>(head_w_[i]) * f[i];
        out.push_back(s);
    }
    return out;
}

std::vector<float> PUClassifier::flat_parameters() const {
    auto out = backbone_->flat_parameters();
    out.insert(out.end(), head_w_.begin(), head_w_.end());
    out.push_back(head_b_);
    return out;
}

namespace {

int common_patch_size(const std::vector<Patch>& a, const std::vector<Patch>& b) {
    const int size = a.front().pixels.height();
    auto check = [size](const std::vector<Patch>& list) {
        for (const auto& p : list) {
            if (p.pixels.height() != size || p.pixels.width() != size) {
                throw ShapeError("train_pu: patches differ in size");
            }
        }
    };
    check(a);
    check(b);
    return size;
}

}  // namespace

PUTrainingResult train_pu(const std::vector<Patch>& positives, const std::vector<Patch>& unlabeled,
                          const PUConfig& config) {
    validate(config);
    if (config.surrogate != SurrogateLoss::sigmoid) {
        throw InvalidArgument("train_pu: the zero_one loss is evaluation-only; train with sigmoid");
    }
    if (positives.empty() || unlabeled.empty()) throw InvalidArgument("train_pu: empty positive or unlabeled set");
    const int size = common_patch_size(positives, unlabeled);

    PatchBackbone backbone(size, config.feature_dim, derive_seed(config.seed, "pu-backbone"));
    nn::Parameter head_w(static_cast<std::size_t>(config.feature_dim));
    nn::Parameter head_b(1);
    {
        Rng rng = make_rng(config.seed, "pu-head");
        std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / config.feature_dim));
        for (auto& w : head_w.value) w = static_cast<float>(normal(rng));
    }
    auto params = backbone.parameters();
    params.push_back(&head_w);
    params.push_back(&head_b);
    nn::Optimizer optimizer(params, nn::OptimizerKind::adam, config.learning_rate);

    Rng rng = make_rng(config.seed, "pu-train");
    std::vector<std::size_t> p_order(positives.size());
    std::vector<std::size_t> u_order(unlabeled.size());
    std::vector<double> epoch_risk;

    auto score_of = [&](const Patch& p, std::vector<float>& features) {
        features = backbone.forward(p.pixels);
        double s = head_b.value[0];
        for (std::size_t i = 0; i < features.size(); ++i) s += static_cast<double>(head_w.value[i]) * features[i];
        return s;
    };
    // Backpropagates d(risk)/d(score) through the head and the backbone; the
    // backbone's caches must hold this patch's forward pass.
    auto backprop = [&](const std::vector<float>& features, double d_score) {
        std::vector<float> d_features(features.size());
        for (std::size_t i = 0; i < features.size(); ++i) {
            head_w.grad[i] += static_cast<float>(d_score * features[i]);
            d_features[i] = static_cast<float>(d_score * head_w.value[i]);
        }
        head_b.grad[0] += static_cast<float>(d_score);
        backbone.backward(d_features);
    };

    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t p_batch = std::min(positives.size(), batch);
    std::vector<float> features;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(p_order.begin(), p_order.end(), std::size_t{0});
        std::iota(u_order.begin(), u_order.end(), std::size_t{0});
        std::shuffle(p_order.begin(), p_order.end(), rng);
        std::shuffle(u_order.begin(), u_order.end(), rng);
        std::size_t p_cursor = 0;
        double risk_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < u_order.size(); start += batch) {
            const std::size_t end = std::min(u_order.size(), start + batch);
            std::vector<std::size_t> p_idx;
            for (std::size_t k = 0; k < p_batch; ++k) {
                p_idx.push_back(p_order[p_cursor]);
                p_cursor = (p_cursor + 1) % p_order.size();
            }
            std::vector<double> sp;
            std::vector<double> su;
            for (auto i : p_idx) sp.push_back(score_of(positives[i], features));
            for (std::size_t k = start; k < end; ++k) su.push_back(score_of(unlabeled[u_order[k]], features));
            const auto grad = pu_risk_gradient(sp, su, config.prior);
            if (!std::isfinite(grad.risk)) {
                throw NumericError("train_pu: non-finite risk at epoch " + std::to_string(epoch));
            }
            risk_sum += grad.risk;
            ++batches;
            optimizer.zero_grad();
            for (std::size_t k = 0; k < p_idx.size(); ++k) {
                score_of(positives[p_idx[k]], features);
                backprop(features, grad.d_scores_p[k]);
            }
            if (!grad.clamped) {
                for (std::size_t k = start; k < end; ++k) {
                    score_of(unlabeled[u_order[k]], features);
                    backprop(features, grad.d_scores_u[k - start]);
                }
            }
            optimizer.step();
        }
        epoch_risk.push_back(risk_sum / std::max(1, batches));
        spdlog::debug("pu epoch {} risk {:.6g}", epoch, epoch_risk.back());
    }

    auto shared = std::make_shared<const PatchBackbone>(std::move(backbone));
    PUClassifier classifier(shared, {head_w.value.begin(), head_w.value.end()}, head_b.value[0], config.seed);
    return {std::move(classifier), FeatureExtractor(shared), std::move(epoch_risk)};
}

FeatureMatrix extract_features(const FeatureExtractor& extractor, const std::vector<Patch>& patches) {
    if (patches.empty()) throw InvalidArgument("extract_features: empty patch list");
    PatchBackbone scratch = extractor.backbone();
    FeatureMatrix out(static_cast<Eigen::Index>(patches.size()), extractor.feature_dim());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const auto f = scratch.forward(patches[i].pixels);
        for (int j = 0; j < extractor.feature_dim(); ++j) out(static_cast<Eigen::Index>(i), j) = f[j];
    }
    return out;
}

std::string format_feature_csv(const FeatureMatrix& features) {
    std::string out;
    for (Eigen::Index j = 0; j < features.cols(); ++j) out += (j ? ",f" : "f") + std::to_string(j);
    out += "\n";
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
            if (j) out += ",";
            out += format_double(features(i, j));
        }
        out += "\n";
    }
    return out;
}

void save_extractor(const std::filesystem::path& path, const PUClassifier& classifier) {
    nn::Checkpoint ckpt;
    ckpt.kind = nn::ModelKind::patch_classifier;
    const auto& b = *classifier.backbone();
    ckpt.architecture = {{"type", "patch_cnn"},
                         {"patch_size", std::to_string(b.patch_size())},
                         {"feature_dim", std::to_string(b.feature_dim())},
                         {"seed", std::to_string(classifier.seed())}};
    for (const auto& conv : b.convs) {
        ckpt.arrays.emplace_back(conv.weight().value.begin(), conv.weight().value.end());
        ckpt.arrays.emplace_back(conv.bias().value.begin(), conv.bias().value.end());
    }
    ckpt.arrays.push_back(classifier.head_weights());
    ckpt.arrays.push_back({classifier.head_bias()});
    nn::save_checkpoint(path, ckpt);
}

PUClassifier load_classifier(const std::filesystem::path& path) {
    const auto ckpt = nn::load_checkpoint(path);
    if (ckpt.kind != nn::ModelKind::patch_classifier) throw ParseError("checkpoint is not a patch classifier");
    auto text = [&](const char* key) -> const std::string& {
        const auto it = ckpt.architecture.find(key);
        if (it == ckpt.architecture.end()) throw ParseError(std::string("checkpoint lacks '") + key + "'");
        return it->second;
    };
    auto field = [&](const char* key) { return parse_int(text(key), key); };
    const auto seed = parse_uint64(text("seed"), "seed");
    PatchBackbone backbone(static_cast<int>(field("patch_size")), static_cast<int>(field("feature_dim")), 0);
    auto params = backbone.parameters();
    if (ckpt.arrays.size() != params.size() + 2) throw ParseError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->size() != ckpt.arrays[i].size()) throw ParseError("checkpoint parameter size mismatch");
        params[i]->value.assign(ckpt.arrays[i].begin(), ckpt.arrays[i].end());
    }
    const auto& head_b = ckpt.arrays.back();
    if (head_b.size() != 1) throw ParseError("checkpoint head bias malformed");
    return PUClassifier(std::make_shared<const PatchBackbone>(std::move(backbone)), ckpt.arrays[params.size()],
                        head_b[0], seed);
}

}  // namespace celldet
