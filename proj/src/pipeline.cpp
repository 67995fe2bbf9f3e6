#include "celldet/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include <spdlog/spdlog.h>

#include "celldet/image_io.hpp"
#include "celldet/io_util.hpp"
#include "celldet/patch_sampler.hpp"
#include "celldet/rng.hpp"

namespace celldet {

namespace fs = std::filesystem;

double PipelineConfig::effective_sigma() const { return sigma > 0.0 ? sigma : mask_radius / 3.0; }

int PipelineConfig::effective_patch_size() const {
    return patch_size > 0 ? patch_size : 2 * static_cast<int>(std::lround(mask_radius)) + 1;
}

double PipelineConfig::effective_min_sep() const { return min_sep > 0.0 ? min_sep : mask_radius; }

void validate(const PipelineConfig& c) {
    if (c.iterations < 0) throw InvalidArgument("iterations must be >= 0");
    if (!(c.mask_radius > 0.0)) throw InvalidArgument("mask_radius must be positive");
    if (c.sigma < 0.0) throw InvalidArgument("sigma must be >= 0 (0 derives it from mask_radius)");
    if (c.patch_size < 0 || (c.patch_size > 0 && c.patch_size % 2 == 0)) {
        throw InvalidArgument("patch_size must be odd (0 derives it from mask_radius)");
    }
    if (c.min_sep < 0.0) throw InvalidArgument("min_sep must be >= 0 (0 derives it from mask_radius)");
    if (!(c.match_radius > 0.0)) throw InvalidArgument("match_radius must be positive");
    if (!(c.th > 0.0 && c.th < 255.0)) throw InvalidArgument("th must lie in (0,255)");
    validate(c.detector);
    validate(c.pu);
    validate(c.selection);
}

namespace {

void append(std::string& out, const std::string& key, const std::string& value) {
    out += key + "=" + value + "\n";
}

void append_totals(std::string& out, const std::string& prefix, const MatchTotals& t) {
    const auto prf = t.prf();
    append(out, prefix + ".tp", std::to_string(t.tp));
    append(out, prefix + ".fp", std::to_string(t.fp));
    append(out, prefix + ".fn", std::to_string(t.fn));
    append(out, prefix + ".precision", format_double(prf.precision));
    append(out, prefix + ".recall", format_double(prf.recall));
    append(out, prefix + ".f_score", format_double(prf.f_score));
}

}  // namespace

std::string format_iteration_record(const IterationRecord& r) {
    std::string out;
    append(out, "iteration", std::to_string(r.iteration));
    append(out, "detections", std::to_string(r.detections));
    append(out, "positives", std::to_string(r.positives));
    append(out, "unlabeled", std::to_string(r.unlabeled));
    append(out, "selected_positive", std::to_string(r.selected_positive));
    append(out, "selected_negative", std::to_string(r.selected_negative));
    append(out, "pseudo_positive_total", std::to_string(r.pseudo_positive_total));
    append(out, "pseudo_negative_total", std::to_string(r.pseudo_negative_total));
    append(out, "detector_loss", format_double(r.detector_loss));
    if (r.train) append_totals(out, "train", *r.train);
    if (r.test) append_totals(out, "test", *r.test);
    return out;
}

std::string format_metrics_history(const std::vector<IterationRecord>& history) {
    std::string out;
    for (const auto& r : history) {
        out += "[iteration " + std::to_string(r.iteration) + "]\n";
        out += format_iteration_record(r);
    }
    return out;
}

std::string format_summary_table(const std::vector<IterationRecord>& history) {
    std::string out = "iter  dets  +pseudo  -pseudo  train P / R / F          test P / R / F\n";
    char line[256];
    for (const auto& r : history) {
        auto prf = [](const std::optional<MatchTotals>& t, char* buf, std::size_t n) {
            if (!t) {
                std::snprintf(buf, n, "%-24s", "-");
                return;
            }
            const auto m = t->prf();
            std::snprintf(buf, n, "%.3f / %.3f / %.3f   ", m.precision, m.recall, m.f_score);
        };
        char train[64];
        char test[64];
        prf(r.train, train, sizeof(train));
        prf(r.test, test, sizeof(test));
        std::snprintf(line, sizeof(line), "%4d  %4zu  %7zu  %7zu  %s %s\n", r.iteration, r.detections,
                      r.pseudo_positive_total, r.pseudo_negative_total, train, test);
        out += line;
    }
    return out;
}

AnnotationSet merge_pseudo_labels(const AnnotationSet& existing, const std::vector<Point2>& new_positive,
                                  const std::vector<Point2>& new_negative, double min_sep) {
    if (!(min_sep > 0.0)) throw InvalidArgument("min_sep must be positive");
    const double sep2 = min_sep * min_sep;
    auto near_any = [sep2](Point2 p, const std::vector<Point2>& others) {
        return std::any_of(others.begin(), others.end(), [&](Point2 o) { return squared_distance(o, p) < sep2; });
    };
    std::vector<Point2> existing_points;
    for (const auto& p : existing.points) existing_points.push_back(p.position());

    AnnotationSet out = existing;
    std::vector<Point2> accepted;
    auto admit = [&](const std::vector<Point2>& proposals, const std::vector<Point2>& opposite, Source source) {
        for (const auto& p : proposals) {
            if (near_any(p, existing_points) || near_any(p, opposite) || near_any(p, accepted)) continue;
            accepted.push_back(p);
            out.points.push_back({p.x, p.y, source});
        }
    };
    admit(new_positive, new_negative, Source::pseudo_positive);
    admit(new_negative, new_positive, Source::pseudo_negative);
    return out;
}

TrainingSample make_training_sample(const ImageRecord& image, const AnnotationSet& annotations,
                                    const PipelineConfig& config) {
    return {image, render_heatmap(annotations, image.shape(), config.effective_sigma()),
            render_loss_mask(annotations, image.shape(), config.mask_radius)};
}

DetectionResult detect(HeatmapNet& net, const ImageRecord& image, double th) {
    return {image.image_id, detect_peaks(predict_heatmap_padded(net, image), th)};
}

namespace {

struct StepOutputs {
    std::shared_ptr<const HeatmapNet> detector;
    double final_loss = 0.0;
    std::map<std::string, DetectionResult> train_detections;
    std::map<std::string, RealGrid> train_heatmaps;
    std::map<std::string, DetectionResult> test_detections;
    std::optional<MatchTotals> train_totals;
    std::optional<MatchTotals> test_totals;
};

// Trains the detector on the current labels, then detects and evaluates.
StepOutputs train_and_detect(const PipelineData& data, const std::map<std::string, AnnotationSet>& annotations,
                             const PipelineConfig& config, int iteration, const HeatmapNet* previous) {
    std::vector<TrainingSample> samples;
    for (const auto& t : data.train) {
        samples.push_back(make_training_sample(t.image, annotations.at(t.image.image_id), config));
    }
    TrainConfig tc = config.detector;
    tc.seed = derive_seed(config.seed, "detector", static_cast<std::uint64_t>(iteration));
    auto trained = (config.finetune && previous) ? train_detector(samples, tc, *previous) : train_detector(samples, tc);

    StepOutputs out;
    out.final_loss = trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back();
    HeatmapNet& net = trained.net;

    bool have_train_gt = true;
    MatchTotals train_totals;
    for (const auto& t : data.train) {
        RealGrid heatmap = predict_heatmap_padded(net, t.image);
        DetectionResult det{t.image.image_id, detect_peaks(heatmap, config.th)};
        if (t.ground_truth) {
            const auto gt = t.ground_truth->positions(Source::human);
            train_totals.add(match_points(det.positions(), gt, config.match_radius));
        } else {
            have_train_gt = false;
        }
        out.train_heatmaps.emplace(t.image.image_id, std::move(heatmap));
        out.train_detections.emplace(t.image.image_id, std::move(det));
    }
    if (have_train_gt) out.train_totals = train_totals;

    if (!data.test.empty()) {
        MatchTotals test_totals;
        for (const auto& e : data.test) {
            auto det = detect(net, e.image, config.th);
            test_totals.add(match_points(det.positions(), e.ground_truth.positions(Source::human), config.match_radius));
            out.test_detections.emplace(e.image.image_id, std::move(det));
        }
        out.test_totals = test_totals;
    }
    out.detector = std::make_shared<const HeatmapNet>(std::move(net));
    return out;
}

struct SelectionArtifacts {
    std::optional<PUClassifier> classifier;
    std::vector<Candidate> candidates;
    Selection selection;
};

void persist_iteration(const RunDirectory& run, const PipelineState& state, const StepOutputs& step,
                       const SelectionArtifacts* sel) {
    const fs::path final_dir = run.root / ("iter" + std::to_string(state.iteration));
    const fs::path stage = run.root / ("iter" + std::to_string(state.iteration) + ".staging");
    fs::remove_all(stage);
    fs::create_directories(stage / "checkpoints");
    step.detector->save(stage / "checkpoints" / "detector.ckpt");
    for (const auto& [id, set] : state.annotations) save_annotations(stage / "annotations" / (id + ".csv"), set);
    for (const auto& [id, det] : step.train_detections) save_detections(stage / "detections" / (id + ".csv"), det);
    for (const auto& [id, det] : step.test_detections) save_detections(stage / "test_detections" / (id + ".csv"), det);
    for (const auto& [id, hm] : step.train_heatmaps) write_heatmap_image(stage / "heatmaps" / (id + ".pgm"), hm);
    if (sel && sel->classifier) {
        save_extractor(stage / "checkpoints" / "pu.ckpt", *sel->classifier);
        for (const auto& [id, set] : state.annotations) {
            write_file_atomic(stage / "ranked" / (id + "_positive.csv"),
                              format_ranked_list(sel->candidates, sel->selection.positive_scores, id));
            write_file_atomic(stage / "ranked" / (id + "_negative.csv"),
                              format_ranked_list(sel->candidates, sel->selection.negative_scores, id));
        }
    }
    write_file_atomic(stage / "metrics.txt", format_iteration_record(state.history.back()));
    fs::remove_all(final_dir);
    fs::rename(stage, final_dir);
    write_file_atomic(run.root / "metrics.txt", format_metrics_history(state.history));
}

IterationRecord base_record(int iteration, const StepOutputs& step,
                            const std::map<std::string, AnnotationSet>& annotations) {
    IterationRecord r;
    r.iteration = iteration;
    for (const auto& [id, det] : step.train_detections) r.detections += det.peaks.size();
    for (const auto& [id, set] : annotations) {
        r.pseudo_positive_total += set.count(Source::pseudo_positive);
        r.pseudo_negative_total += set.count(Source::pseudo_negative);
    }
    r.detector_loss = step.final_loss;
    r.train = step.train_totals;
    r.test = step.test_totals;
    return r;
}

void check_data(const PipelineData& data) {
    if (data.train.empty()) throw InvalidArgument("pipeline needs at least one training image");
    for (const auto& t : data.train) {
        validate(t.image);
        validate(t.annotations, t.image.shape());
    }
}

}  // namespace

PipelineState initialize_pipeline(const PipelineData& data, const PipelineConfig& config,
                                  const std::optional<RunDirectory>& run) {
    validate(config);
    check_data(data);
    PipelineState state;
    for (const auto& t : data.train) {
        auto set = t.annotations;
        set.image_id = t.image.image_id;
        if (!state.annotations.emplace(set.image_id, std::move(set)).second) {
            throw InvalidArgument("duplicate training image id '" + t.image.image_id + "'");
        }
    }
    auto step = train_and_detect(data, state.annotations, config, 0, nullptr);
    state.iteration = 0;
    state.detector = step.detector;
    state.detections = step.train_detections;
    state.history.push_back(base_record(0, step, state.annotations));
    if (run) {
        persist_iteration(*run, state, step, nullptr);
        state.checkpoint_ref = (run->root / "iter0" / "checkpoints" / "detector.ckpt").string();
    }
    spdlog::info("iteration 0: {} detections", state.history.back().detections);
    return state;
}

PipelineState run_iteration(const PipelineState& state, const PipelineData& data, const PipelineConfig& config,
                            const std::optional<RunDirectory>& run) {
    validate(config);
    check_data(data);
    const int k = state.iteration + 1;
    const int patch = config.effective_patch_size();

    // Patches from the current detections, then PU feature learning.
    std::vector<Patch> positives;
    std::vector<Patch> unlabeled;
    SelectionArtifacts sel;
    for (const auto& t : data.train) {
        const auto& id = t.image.image_id;
        auto part = partition_patches(state.detections.at(id), state.annotations.at(id), t.image, patch,
                                      config.match_radius);
        for (auto& p : part.positives) positives.push_back(std::move(p));
        for (auto& p : part.unlabeled) {
            sel.candidates.push_back({id, p.center});
            unlabeled.push_back(std::move(p));
        }
    }

    PipelineState next = state;
    next.iteration = k;
    if (!positives.empty() && !unlabeled.empty()) {
        PUConfig pc = config.pu;
        pc.seed = derive_seed(config.seed, "pu", static_cast<std::uint64_t>(k));
        auto pu = train_pu(positives, unlabeled, pc);
        // Rank on the learned features and select.
        const auto f_pos = extract_features(pu.extractor, positives);
        const auto f_unl = extract_features(pu.extractor, unlabeled);
        sel.selection = select_pseudo_labels(f_unl, sel.candidates, f_pos, config.selection);
        sel.classifier = std::move(pu.classifier);
    } else {
        spdlog::warn("iteration {}: {} positive and {} unlabeled patches, skipping selection", k, positives.size(),
                     unlabeled.size());
    }

    // Register the pseudo labels.
    std::map<std::string, std::pair<std::vector<Point2>, std::vector<Point2>>> proposals;
    for (const auto& c : sel.selection.positive_centers) proposals[c.image_id].first.push_back(c.center);
    for (const auto& c : sel.selection.negative_centers) proposals[c.image_id].second.push_back(c.center);
    for (const auto& [id, lists] : proposals) {
        next.annotations[id] =
            merge_pseudo_labels(next.annotations.at(id), lists.first, lists.second, config.effective_min_sep());
    }

    auto step = train_and_detect(data, next.annotations, config, k, state.detector.get());
    next.detector = step.detector;
    next.detections = step.train_detections;
    IterationRecord r = base_record(k, step, next.annotations);
    r.positives = positives.size();
    r.unlabeled = unlabeled.size();
    r.selected_positive = r.pseudo_positive_total - state.history.back().pseudo_positive_total;
    r.selected_negative = r.pseudo_negative_total - state.history.back().pseudo_negative_total;
    next.history.push_back(r);
    if (run) {
        persist_iteration(*run, next, step, &sel);
        next.checkpoint_ref = (run->root / ("iter" + std::to_string(k)) / "checkpoints" / "detector.ckpt").string();
    }
    spdlog::info("iteration {}: |X_P|={} |X_U|={} +{} / -{} pseudo labels, {} detections", k, r.positives,
                 r.unlabeled, r.selected_positive, r.selected_negative, r.detections);
    return next;
}

PipelineState run_pipeline(const PipelineData& data, int n_iterations, const PipelineConfig& config,
                           const std::optional<RunDirectory>& run) {
    if (n_iterations < 0) throw InvalidArgument("n_iterations must be >= 0");
    PipelineState state = initialize_pipeline(data, config, run);
    for (int i = 0; i < n_iterations; ++i) state = run_iteration(state, data, config, run);
    return state;
}

}  // namespace celldet
