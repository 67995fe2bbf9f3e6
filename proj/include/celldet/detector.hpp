#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "celldet/annotations.hpp"
#include "celldet/grid.hpp"
#include "celldet/nn/layers.hpp"
#include "celldet/nn/optim.hpp"

namespace celldet {

struct UNetSpec {
    int levels = 3;          // number of 2x downsamplings
    int base_channels = 16;  // channels at full resolution; doubled per level

    int stride() const { return 1 << levels; }
    friend bool operator==(const UNetSpec&, const UNetSpec&) = default;
};

/// Encoder-decoder regression network with skip connections. Output shape
/// equals input shape; input sides must be multiples of spec.stride().
class HeatmapNet {
public:
    explicit HeatmapNet(UNetSpec spec = {}, std::uint64_t seed = 0);
    HeatmapNet(const HeatmapNet& other);
    HeatmapNet& operator=(const HeatmapNet& other);
    HeatmapNet(HeatmapNet&&) noexcept;
    HeatmapNet& operator=(HeatmapNet&&) noexcept;
    ~HeatmapNet();

    const UNetSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    bool accepts(Shape s) const;
    nn::Tensor forward(const nn::Tensor& x);
    /// Accumulates parameter gradients for the last forward() call.
    void backward(const nn::Tensor& grad_out);
    std::vector<nn::Parameter*> parameters();

    /// Flat copy of every parameter value in a fixed order.
    std::vector<float> flat_parameters() const;

    void save(const std::filesystem::path& path) const;
    static HeatmapNet load(const std::filesystem::path& path);

private:
    struct Layers;
    UNetSpec spec_;
    std::uint64_t seed_;
    std::unique_ptr<Layers> layers_;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 60;
    int batch_size = 2;
    std::uint64_t seed = 0;
    nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
    double momentum = 0.9;
    /// Side of the square training crop (multiple of the net stride); 0 trains on whole images.
    int crop_size = 64;
    UNetSpec architecture{};
};

void validate(const TrainConfig& c);

struct TrainingSample {
    ImageRecord image;
    HeatmapTarget target;
    LossMask mask;
};

struct TrainedDetector {
    HeatmapNet net;
    /// Mean masked loss over each epoch's optimization steps.
    std::vector<double> epoch_loss;
};

/// Sum of squared residuals over mask pixels divided by max(1, mask count).
/// An all-zero mask gives 0 and logs a warning.
double masked_mse_loss(const RealGrid& pred, const HeatmapTarget& target, const LossMask& mask);
/// Gradient of masked_mse_loss with respect to `pred`.
RealGrid masked_mse_gradient(const RealGrid& pred, const HeatmapTarget& target, const LossMask& mask);

/// Trains a freshly initialized net (seeded by config.seed).
TrainedDetector train_detector(const std::vector<TrainingSample>& dataset, const TrainConfig& config);
/// Continues training from `init`, e.g. for fine-tuning across iterations.
TrainedDetector train_detector(const std::vector<TrainingSample>& dataset, const TrainConfig& config,
                               HeatmapNet init);

/// Masked loss of the net on whole images, averaged over samples.
double evaluate_masked_loss(HeatmapNet& net, const std::vector<TrainingSample>& dataset);

/// Raw forward pass. Throws ShapeError if either side is not a multiple of the stride.
RealGrid predict_heatmap(HeatmapNet& net, const ImageRecord& image);
/// Reflect-pads to the next stride multiple, predicts, and crops back.
RealGrid predict_heatmap_padded(HeatmapNet& net, const ImageRecord& image);

struct Peak {
    int x = 0;
    int y = 0;
    double value = 0.0;  // on the normalized 0-255 scale

    Point2 position() const { return {static_cast<double>(x), static_cast<double>(y)}; }
    friend bool operator==(const Peak&, const Peak&) = default;
};

struct DetectionResult {
    std::string image_id;
    std::vector<Peak> peaks;

    std::vector<Point2> positions() const;
};

/// Min-max normalizes to 0-255 and returns the strict 8-neighbourhood maxima
/// whose normalized value exceeds th. Equal-valued connected plateaus that are
/// maxima contribute only their smallest (y, x) pixel. Ordered by (y, x).
std::vector<Peak> detect_peaks(const RealGrid& heatmap, double th);

std::string format_detections(const DetectionResult& result);
void save_detections(const std::filesystem::path& path, const DetectionResult& result);

}  // namespace celldet
