#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "celldet/nn/layers.hpp"
#include "celldet/patch_sampler.hpp"

namespace celldet {

enum class SurrogateLoss { zero_one, sigmoid };

std::string_view to_string(SurrogateLoss k);
SurrogateLoss parse_surrogate(std::string_view s);

/// zero_one: (1 - sign(score * label)) / 2 with sign(0) = 0.
/// sigmoid:  1 / (1 + exp(score * label)).
double pointwise_loss(double score, int label, SurrogateLoss kind);

/// Non-negative PU risk:
///   prior * Rp+ + max{0, Ru- - prior * Rp-}
/// where Rp+ / Rp- are mean losses of the positive scores against +1 / -1 and
/// Ru- is the mean loss of the unlabeled scores against -1.
double pu_risk(std::span<const double> scores_p, std::span<const double> scores_u, double prior,
               SurrogateLoss kind);

struct PuRiskGradient {
    double risk = 0.0;
    std::vector<double> d_scores_p;
    std::vector<double> d_scores_u;
    bool clamped = false;
};

/// Risk and its gradient for the sigmoid surrogate. When the negative-risk
/// term is clamped it contributes zero gradient.
PuRiskGradient pu_risk_gradient(std::span<const double> scores_p, std::span<const double> scores_u,
                                double prior);

struct PUConfig {
    double prior = 0.5;
    SurrogateLoss surrogate = SurrogateLoss::sigmoid;
    double learning_rate = 1e-3;
    int epochs = 30;
    int batch_size = 64;
    std::uint64_t seed = 0;
    int feature_dim = 32;
};

void validate(const PUConfig& c);

/// Three conv(3x3)-ReLU-maxpool blocks followed by global average pooling.
/// Channel widths are d/4, d/2, d.
class PatchBackbone {
public:
    PatchBackbone(int patch_size, int feature_dim, std::uint64_t seed);

    int patch_size() const { return patch_size_; }
    int feature_dim() const { return feature_dim_; }

    std::vector<float> forward(const RealGrid& patch);
    void backward(std::span<const float> grad_features);
    std::vector<nn::Parameter*> parameters();
    std::vector<float> flat_parameters() const;

    // Public for the checkpoint container.
    std::vector<nn::Conv2d> convs;

private:
    int patch_size_;
    int feature_dim_;
    std::vector<nn::Relu> relus_;
    std::vector<nn::MaxPool2> pools_;
    int pooled_h_ = 0;
    int pooled_w_ = 0;
};

/// The feature layers of a trained classifier; immutable after training.
class FeatureExtractor {
public:
    explicit FeatureExtractor(std::shared_ptr<const PatchBackbone> backbone);

    int feature_dim() const { return backbone_->feature_dim(); }
    int patch_size() const { return backbone_->patch_size(); }
    std::vector<double> extract(const RealGrid& patch) const;
    const PatchBackbone& backbone() const { return *backbone_; }

private:
    std::shared_ptr<const PatchBackbone> backbone_;
};

/// Backbone plus a single linear output whose sign is the predicted class.
class PUClassifier {
public:
    PUClassifier(std::shared_ptr<const PatchBackbone> backbone, std::vector<float> head_weights,
                 float head_bias, std::uint64_t seed);

    double score(const RealGrid& patch) const;
    std::vector<double> scores(const std::vector<Patch>& patches) const;
    std::shared_ptr<const PatchBackbone> backbone() const { return backbone_; }
    const std::vector<float>& head_weights() const { return head_w_; }
    float head_bias() const { return head_b_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<float> flat_parameters() const;

private:
    std::shared_ptr<const PatchBackbone> backbone_;
    std::vector<float> head_w_;
    float head_b_;
    std::uint64_t seed_;
};

struct PUTrainingResult {
    PUClassifier classifier;
    FeatureExtractor extractor;
    std::vector<double> epoch_risk;  // surrogate risk per epoch
};

/// Minimizes the sigmoid-surrogate non-negative PU risk by minibatch Adam; the
/// clamp is applied per batch.
PUTrainingResult train_pu(const std::vector<Patch>& positives, const std::vector<Patch>& unlabeled,
                          const PUConfig& config);

using FeatureMatrix = Eigen::MatrixXd;

/// Row i is the feature vector of patch i.
FeatureMatrix extract_features(const FeatureExtractor& extractor, const std::vector<Patch>& patches);

std::string format_feature_csv(const FeatureMatrix& features);

void save_extractor(const std::filesystem::path& path, const PUClassifier& classifier);
PUClassifier load_classifier(const std::filesystem::path& path);

}  // namespace celldet
