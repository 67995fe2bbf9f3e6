// celldet: command-line entry point.
//
//   celldet synth    --out DIR               synthetic benchmark + desk-scale pipeline.cfg
//   celldet train    --data DIR --out DIR    one detector training on human labels
//   celldet detect   --checkpoint F --images DIR --out DIR
//   celldet iterate  --data DIR --out DIR    full pseudo-labeling loop
//   celldet rank     --run DIR               print the top of each ranked list
//   celldet evaluate --detections P --ground-truth P
//   celldet report   --run DIR --data DIR --out DIR
//
// Failures print one line `error: <kind>: <message>` on stderr.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "celldet/config.hpp"
#include "celldet/errors.hpp"
#include "celldet/evaluator.hpp"
#include "celldet/image_io.hpp"
#include "celldet/io_util.hpp"
#include "celldet/pipeline.hpp"
#include "celldet/rng.hpp"
#include "celldet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace celldet;

namespace {

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) {
        fs::create_directories(dir);
        const auto path = dir / ".lock";
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw IoError("cannot open lock file " + path.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw IoError("run directory " + dir.string() + " is in use by another process");
        }
    }
    ~RunLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> direct;  // key -> raw value, only for flags actually given

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
        add(app, "--seed", "seed", "root seed");
        add(app, "--iterations", "iterations", "pseudo-labeling iterations");
        add(app, "--alpha", "alpha", "fraction of unlabeled patches taken as positives");
        add(app, "--beta", "beta", "fraction of unlabeled patches taken as negatives");
        add(app, "--p", "p", "P-classification push exponent");
        add(app, "--prior", "prior", "PU class prior");
        add(app, "--th", "th", "peak threshold on the 0-255 scale");
        add(app, "--match-radius", "match_radius", "evaluation match radius (px)");
        app->add_option("--set", sets, "override any key: --set key=value (repeatable)")->allow_extra_args(false);
    }

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { direct[key] = v; }, help);
    }

    ResolvedConfig resolve(ResolvedConfig base = {}) const {
        if (!config_path.empty()) {
            base = parse_config_text(read_text_file(config_path), std::move(base), ConfigOrigin::file);
        }
        for (const auto& [k, v] : direct) base.set(k, v, ConfigOrigin::flag);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            base.set(trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1),
                     ConfigOrigin::flag);
        }
        validate(base);
        return base;
    }
};

void write_resolved_config(const fs::path& dir, const ResolvedConfig& c) {
    write_file_atomic(dir / "config.cfg", serialize(c));
}

std::vector<ImageRecord> load_images(const fs::path& dir) {
    std::vector<ImageRecord> out;
    for (const auto& p : list_files(dir, ".pgm")) out.push_back(read_image(p));
    if (out.empty()) throw IoError("no .pgm images in " + dir.string());
    return out;
}

std::optional<AnnotationSet> maybe_load(const fs::path& path, const ImageRecord& image) {
    if (!fs::exists(path)) return std::nullopt;
    return load_annotations(path, image.pixels.shape(), image.image_id);
}

// Layout written by `synth`: <root>/<split>/images/*.pgm, <root>/<split>/{annotations,ground_truth}/*.csv.
PipelineData load_pipeline_data(const fs::path& root) {
    PipelineData data;
    for (auto& image : load_images(root / "train" / "images")) {
        const auto ann_path = root / "train" / "annotations" / (image.image_id + ".csv");
        auto ann = maybe_load(ann_path, image);
        if (!ann) throw IoError("missing annotation file " + ann_path.string());
        auto gt = maybe_load(root / "train" / "ground_truth" / (image.image_id + ".csv"), image);
        data.train.push_back({std::move(image), std::move(*ann), std::move(gt)});
    }
    if (fs::exists(root / "test" / "images")) {
        for (auto& image : load_images(root / "test" / "images")) {
            const auto gt_path = root / "test" / "ground_truth" / (image.image_id + ".csv");
            auto gt = maybe_load(gt_path, image);
            if (!gt) throw IoError("missing ground truth " + gt_path.string());
            data.test.push_back({std::move(image), std::move(*gt)});
        }
    }
    return data;
}

int cmd_synth(const ConfigFlags& flags, const fs::path& out) {
    const auto config = flags.resolve(desk_scale_defaults());
    RunLock lock(out);
    const auto splits = make_synthetic_splits(config);
    const auto& train = splits.train;
    const auto& test = splits.test;
    const auto& labels = splits.train_labels;
    write_dataset(out / "train", train.images, labels, "annotations");
    write_dataset(out / "train", train.images, train.ground_truth, "ground_truth");
    write_dataset(out / "test", test.images, test.ground_truth, "ground_truth");
    write_file_atomic(out / "pipeline.cfg", serialize(config));
    std::size_t n_labels = 0, n_cells = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        n_labels += labels[i].points.size();
        n_cells += train.ground_truth[i].points.size();
    }
    std::cout << "train_images=" << train.images.size() << "\ntest_images=" << test.images.size()
              << "\ntrain_cells=" << n_cells << "\ntrain_labels=" << n_labels << "\nconfig="
              << (out / "pipeline.cfg").string() << "\n";
    return 0;
}

int cmd_train(const ConfigFlags& flags, const fs::path& data_root, const fs::path& out) {
    const auto config = flags.resolve();
    RunLock lock(out);
    write_resolved_config(out, config);
    const auto data = load_pipeline_data(data_root);
    std::vector<TrainingSample> samples;
    for (const auto& t : data.train) samples.push_back(make_training_sample(t.image, t.annotations, config.pipeline));
    auto train_config = config.pipeline.detector;
    train_config.seed = derive_seed(config.pipeline.seed, "detector", 0);
    const auto trained = train_detector(samples, train_config);
    trained.net.save(out / "detector.ckpt");
    std::string log;
    for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
        log += "epoch=" + std::to_string(e) + " loss=" + format_double(trained.epoch_loss[e]) + "\n";
    }
    write_file_atomic(out / "loss.txt", log);
    std::cout << "checkpoint=" << (out / "detector.ckpt").string() << "\nfinal_loss="
              << format_double(trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back()) << "\n";
    return 0;
}

int cmd_detect(const ConfigFlags& flags, const fs::path& checkpoint, const fs::path& images, const fs::path& out,
               bool heatmaps) {
    const auto config = flags.resolve();
    RunLock lock(out);
    auto net = HeatmapNet::load(checkpoint);
    std::size_t total = 0;
    for (const auto& image : load_images(images)) {
        const auto heatmap = predict_heatmap_padded(net, image);
        DetectionResult result{image.image_id, detect_peaks(heatmap, config.pipeline.th)};
        save_detections(out / (image.image_id + ".csv"), result);
        if (heatmaps) write_heatmap_image(out / "heatmaps" / (image.image_id + ".pgm"), heatmap);
        total += result.peaks.size();
        std::cout << image.image_id << " detections=" << result.peaks.size() << "\n";
    }
    std::cout << "total=" << total << "\n";
    return 0;
}

int cmd_iterate(const ConfigFlags& flags, const fs::path& data_root, const fs::path& out) {
    const auto config = flags.resolve();
    RunLock lock(out);
    write_resolved_config(out, config);
    const auto data = load_pipeline_data(data_root);
    const auto state = run_pipeline(data, config.pipeline.iterations, config.pipeline, RunDirectory{out});
    std::cout << format_summary_table(state.history);
    return 0;
}

// Point files are matched by stem when both arguments are directories.
std::vector<std::pair<fs::path, fs::path>> pair_files(const fs::path& det, const fs::path& gt) {
    if (fs::is_directory(det) != fs::is_directory(gt)) {
        throw InvalidArgument("--detections and --ground-truth must both be files or both be directories");
    }
    if (!fs::is_directory(det)) return {{det, gt}};
    std::vector<std::pair<fs::path, fs::path>> out;
    for (const auto& g : list_files(gt, ".csv")) {
        const auto d = det / g.filename();
        if (!fs::exists(d)) throw IoError("no detections for " + g.filename().string());
        out.emplace_back(d, g);
    }
    return out;
}

int cmd_evaluate(const ConfigFlags& flags, const fs::path& det, const fs::path& gt, bool greedy, bool pairs) {
    const auto config = flags.resolve();
    const auto method = greedy ? MatchMethod::greedy : MatchMethod::optimal;
    MatchTotals totals;
    const auto files = pair_files(det, gt);
    for (const auto& [d, g] : files) {
        const auto report = match_points(load_points(d), load_points(g), config.pipeline.match_radius, method);
        totals.add(report);
        if (files.size() > 1) {
            std::cout << "[" << g.stem().string() << "] tp=" << report.tp << " fp=" << report.fp
                      << " fn=" << report.fn << " f_score=" << format_double(report.prf.f_score) << "\n";
        } else if (pairs) {
            std::cout << format_match_report(report);
            return 0;
        }
    }
    const auto prf = totals.prf();
    std::cout << "tp=" << totals.tp << "\nfp=" << totals.fp << "\nfn=" << totals.fn
              << "\nprecision=" << format_double(prf.precision) << "\nrecall=" << format_double(prf.recall)
              << "\nf_score=" << format_double(prf.f_score) << "\n";
    return 0;
}

std::vector<fs::path> iteration_dirs(const fs::path& run) {
    std::vector<std::pair<int, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(run)) {
        const auto name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("iter", 0) != 0 || name.find('.') != std::string::npos) continue;
        found.emplace_back(static_cast<int>(parse_int(name.substr(4), "iteration directory")), entry.path());
    }
    std::sort(found.begin(), found.end());
    std::vector<fs::path> out;
    for (auto& [k, p] : found) out.push_back(std::move(p));
    return out;
}

int cmd_rank(const fs::path& run, std::optional<int> iteration, int top) {
    bool any = false;
    for (const auto& dir : iteration_dirs(run)) {
        if (iteration && dir.filename() != "iter" + std::to_string(*iteration)) continue;
        if (!fs::exists(dir / "ranked")) continue;
        for (const auto& file : list_files(dir / "ranked", ".csv")) {
            any = true;
            const auto lines = split(read_text_file(file), '\n');
            std::cout << "== " << dir.filename().string() << "/" << file.filename().string() << " ("
                      << (lines.size() > 1 ? lines.size() - 2 : 0) << " rows)\n";
            for (std::size_t i = 0; i < lines.size() && i <= static_cast<std::size_t>(top); ++i) {
                if (!lines[i].empty()) std::cout << lines[i] << "\n";
            }
        }
    }
    if (!any) throw IoError("no ranked lists under " + run.string());
    return 0;
}

// `[iteration k]` blocks of key=value lines.
std::vector<std::map<std::string, double>> parse_metrics_history(const std::string& text) {
    std::vector<std::map<std::string, double>> out;
    for (const auto& raw : split(text, '\n')) {
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            out.emplace_back();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || out.empty()) continue;
        out.back()[std::string(line.substr(0, eq))] = parse_double(line.substr(eq + 1), "metric");
    }
    return out;
}

std::string metrics_svg(const std::vector<std::map<std::string, double>>& history) {
    const std::vector<std::pair<std::string, std::string>> series = {
        {"train.precision", "#1f77b4"}, {"train.recall", "#2ca02c"}, {"train.f_score", "#d62728"},
        {"test.precision", "#9467bd"},  {"test.recall", "#8c564b"},  {"test.f_score", "#ff7f0e"}};
    const double w = 480, h = 300, left = 50, right = 150, top = 20, bottom = 40;
    const double pw = w - left - right, ph = h - top - bottom;
    const std::size_t n = history.size();
    auto px = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
    auto py = [&](double v) { return top + ph * (1.0 - v); };

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (int g = 0; g <= 4; ++g) {
        const double y = py(g / 4.0);
        s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
          << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 8 << "\" y=\"" << y + 4
          << "\" font-size=\"11\" text-anchor=\"end\">" << g / 4.0 << "</text>\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
        s << "<text x=\"" << px(i) << "\" y=\"" << h - bottom + 16 << "\" font-size=\"11\" text-anchor=\"middle\">"
          << i << "</text>\n";
    }
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 6 << "\" font-size=\"12\" text-anchor=\"middle\">iteration</text>\n";
    int legend = 0;
    for (const auto& [key, color] : series) {
        std::string points;
        for (std::size_t i = 0; i < n; ++i) {
            const auto it = history[i].find(key);
            if (it == history[i].end()) continue;
            points += std::to_string(px(i)) + "," + std::to_string(py(it->second)) + " ";
        }
        if (points.empty()) continue;
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
        const double ly = top + 14.0 * legend++;
        s << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 30 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << w - right + 35 << "\" y=\""
          << ly + 4 << "\" font-size=\"11\">" << key << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

int cmd_report(const fs::path& run, const fs::path& data_root, const fs::path& out, int marker) {
    RunLock lock(out);
    const auto history = parse_metrics_history(read_text_file(run / "metrics.txt"));
    write_file_atomic(out / "metrics.svg", metrics_svg(history));

    const Rgb human{40, 120, 255}, pseudo_pos{255, 220, 0}, pseudo_neg{255, 40, 40}, detection{0, 230, 0};
    std::size_t written = 0;
    for (const auto& image : load_images(data_root / "train" / "images")) {
        for (const auto& dir : iteration_dirs(run)) {
            ColorImage overlay(image.pixels);
            const auto det = dir / "detections" / (image.image_id + ".csv");
            if (fs::exists(det)) {
                for (const auto& p : load_points(det)) overlay.draw_marker(p.x, p.y, marker + 2, detection);
            }
            const auto ann = dir / "annotations" / (image.image_id + ".csv");
            if (fs::exists(ann)) {
                for (const auto& a : load_annotations(ann, image.pixels.shape(), image.image_id).points) {
                    const Rgb c = a.source == Source::human ? human
                                  : a.source == Source::pseudo_positive ? pseudo_pos : pseudo_neg;
                    overlay.draw_marker(a.x, a.y, marker, c);
                }
            }
            write_color_image(out / dir.filename() / (image.image_id + ".ppm"), overlay);
            ++written;
        }
    }
    std::cout << "overlays=" << written << "\nplot=" << (out / "metrics.svg").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cell detection from partial point annotations with PU-learned pseudo labels"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    ConfigFlags flags;
    std::string out, data, checkpoint, images, detections, ground_truth, run;
    bool greedy = false, pairs = false, heatmaps = false;
    std::optional<int> rank_iteration;
    int top = 10, marker = 3;

    auto* synth = app.add_subcommand("synth", "generate a synthetic benchmark");
    flags.attach(synth);
    synth->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train one detector on the human labels");
    flags.attach(train);
    train->add_option("--data", data, "dataset root (train/images, train/annotations)")->required();
    train->add_option("--out", out, "output directory")->required();

    auto* detect = app.add_subcommand("detect", "run a detector checkpoint and extract peaks");
    flags.attach(detect);
    detect->add_option("--checkpoint", checkpoint, "detector checkpoint")->required()->check(CLI::ExistingFile);
    detect->add_option("--images", images, "directory of .pgm images")->required()->check(CLI::ExistingDirectory);
    detect->add_option("--out", out, "output directory")->required();
    detect->add_flag("--heatmaps", heatmaps, "also write normalized heatmaps");

    auto* iterate = app.add_subcommand("iterate", "run the pseudo-labeling loop");
    flags.attach(iterate);
    iterate->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
    iterate->add_option("--out", out, "run directory")->required();

    auto* rank = app.add_subcommand("rank", "print the top of each saved ranked list");
    rank->add_option("--run", run, "run directory")->required()->check(CLI::ExistingDirectory);
    rank->add_option("--iteration", rank_iteration, "only this iteration");
    rank->add_option("--top", top, "rows per list")->check(CLI::NonNegativeNumber);

    auto* evaluate = app.add_subcommand("evaluate", "precision / recall / F-score against ground truth");
    flags.attach(evaluate);
    evaluate->add_option("--detections", detections, "x,y CSV file or directory")->required()->check(CLI::ExistingPath);
    evaluate->add_option("--ground-truth", ground_truth, "x,y CSV file or directory")->required()->check(CLI::ExistingPath);
    evaluate->add_flag("--greedy", greedy, "greedy nearest-pair matching instead of optimal assignment");
    evaluate->add_flag("--pairs", pairs, "list matched pairs (single file only)");

    auto* report = app.add_subcommand("report", "overlay images and a metrics plot for a run");
    report->add_option("--run", run, "run directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
    report->add_option("--out", out, "output directory")->required();
    report->add_option("--marker", marker, "marker half-size (px)")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string message = e.what();
        if (argc > 1 && argv[1][0] != '-') {
            const std::string name = argv[1];
            const auto subs = app.get_subcommands([&](CLI::App* s) { return s->get_name() == name; });
            if (subs.empty()) message = "unknown subcommand '" + name + "'";
        }
        std::cerr << "error: usage: " << message << "\n" << app.help();
        return 2;
    }

    auto logger = spdlog::stderr_color_mt("celldet");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*synth) return cmd_synth(flags, out);
        if (*train) return cmd_train(flags, data, out);
        if (*detect) return cmd_detect(flags, checkpoint, images, out, heatmaps);
        if (*iterate) return cmd_iterate(flags, data, out);
        if (*rank) return cmd_rank(run, rank_iteration, top);
        if (*evaluate) return cmd_evaluate(flags, detections, ground_truth, greedy, pairs);
        if (*report) return cmd_report(run, data, out, marker);
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
