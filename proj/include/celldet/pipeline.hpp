#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "celldet/annotations.hpp"
#include "celldet/detector.hpp"
#include "celldet/evaluator.hpp"
#include "celldet/pu_learner.hpp"
#include "celldet/rank_selector.hpp"

namespace celldet {

/// Every tunable of the training loop. Zero-valued sigma / patch_size / min_sep
/// mean "derive from mask_radius".
struct PipelineConfig {
    std::uint64_t seed = 0;
    int iterations = 2;
    double mask_radius = 15.0;
    double sigma = 0.0;       // default mask_radius / 3
    int patch_size = 0;       // default 2 * round(mask_radius) + 1
    double min_sep = 0.0;     // default mask_radius
    double match_radius = 15.0;
    double th = 128.0;
    bool finetune = false;    // keep training the previous detector instead of retraining
    TrainConfig detector;
    PUConfig pu;
    SelectionConfig selection;

    double effective_sigma() const;
    int effective_patch_size() const;
    double effective_min_sep() const;
};

void validate(const PipelineConfig& c);

struct TrainingImage {
    ImageRecord image;
    AnnotationSet annotations;                 // human labels
    std::optional<AnnotationSet> ground_truth;  // full labels, when known (synthetic runs)
};

struct EvaluationImage {
    ImageRecord image;
    AnnotationSet ground_truth;
};

struct PipelineData {
    std::vector<TrainingImage> train;
    std::vector<EvaluationImage> test;
};

struct IterationRecord {
    int iteration = 0;
    std::size_t detections = 0;          // peaks on training images
    std::size_t positives = 0;           // |X_P| used for this round's selection
    std::size_t unlabeled = 0;           // |X_U|
    std::size_t selected_positive = 0;   // pseudo labels added this round
    std::size_t selected_negative = 0;
    std::size_t pseudo_positive_total = 0;
    std::size_t pseudo_negative_total = 0;
    double detector_loss = 0.0;          // final-epoch masked training loss
    std::optional<MatchTotals> train;
    std::optional<MatchTotals> test;
};

std::string format_iteration_record(const IterationRecord& r);
std::string format_metrics_history(const std::vector<IterationRecord>& history);
/// Fixed-width per-iteration summary table.
std::string format_summary_table(const std::vector<IterationRecord>& history);

struct PipelineState {
    int iteration = 0;
    std::map<std::string, AnnotationSet> annotations;  // human + accumulated pseudo labels
    std::shared_ptr<const HeatmapNet> detector;
    std::string checkpoint_ref;                        // path of the saved detector, if persisted
    std::map<std::string, DetectionResult> detections;  // current detector on the training images
    std::vector<IterationRecord> history;
};

/// Appends new pseudo labels. A new point is dropped if it lies within min_sep
/// of any existing point, of an opposite-source new point, or of an earlier
/// accepted new point.
AnnotationSet merge_pseudo_labels(const AnnotationSet& existing, const std::vector<Point2>& new_positive,
                                  const std::vector<Point2>& new_negative, double min_sep);

/// Optional on-disk persistence: `<root>/iter<k>/{checkpoints,annotations,
/// detections,heatmaps}/` plus `metrics.txt`, and `<root>/metrics.txt` with
/// the whole history. Each iteration directory is staged and renamed into place.
struct RunDirectory {
    std::filesystem::path root;
};

/// Trains on human labels only, detects, and records iteration 0.
PipelineState initialize_pipeline(const PipelineData& data, const PipelineConfig& config,
                                  const std::optional<RunDirectory>& run = std::nullopt);

/// One pass of patch partition, PU feature learning, ranking and selection,
/// label merge, target regeneration, detector retraining and detection.
PipelineState run_iteration(const PipelineState& state, const PipelineData& data, const PipelineConfig& config,
                            const std::optional<RunDirectory>& run = std::nullopt);

PipelineState run_pipeline(const PipelineData& data, int n_iterations, const PipelineConfig& config,
                           const std::optional<RunDirectory>& run = std::nullopt);

/// Heatmap (positive kernels) and mask (all disks) for one image's annotations.
TrainingSample make_training_sample(const ImageRecord& image, const AnnotationSet& annotations,
                                    const PipelineConfig& config);

DetectionResult detect(HeatmapNet& net, const ImageRecord& image, double th);

}  // namespace celldet
