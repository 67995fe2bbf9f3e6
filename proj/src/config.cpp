#include "celldet/config.hpp"

#include <functional>
#include <limits>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"
#include "celldet/rng.hpp"

namespace celldet {

std::string_view to_string(ConfigOrigin o) {
    switch (o) {
        case ConfigOrigin::default_value: return "default";
        case ConfigOrigin::file: return "file";
        case ConfigOrigin::flag: return "flag";
    }
    return "unknown";
}

namespace {

struct Field {
    std::string key;
    std::function<std::string(const ResolvedConfig&)> get;
    std::function<void(ResolvedConfig&, std::string_view)> set;
};

template <class T>
using Accessor = T& (*)(ResolvedConfig&);

template <class T>
Field field(std::string key, Accessor<T> access) {
    Field f;
    f.key = key;
    f.get = [access](const ResolvedConfig& c) -> std::string {
        const T& v = access(const_cast<ResolvedConfig&>(c));
        if constexpr (std::is_same_v<T, double>) {
            return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
            return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_integral_v<T>) {
            return std::to_string(v);
        } else {
            return std::string(to_string(v));
        }
    };
    f.set = [access, key](ResolvedConfig& c, std::string_view text) {
        T& v = access(c);
        if constexpr (std::is_same_v<T, double>) {
            v = parse_double(text, key);
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1") {
                v = true;
            } else if (text == "false" || text == "0") {
                v = false;
            } else {
                throw ParseError(key + ": expected true or false");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            v = std::string(text);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            v = parse_uint64(text, key);
        } else if constexpr (std::is_integral_v<T>) {
            const auto parsed = parse_int(text, key);
            if (parsed < std::numeric_limits<T>::min() || parsed > std::numeric_limits<T>::max()) {
                throw ParseError(key + ": out of range");
            }
            v = static_cast<T>(parsed);
        } else if constexpr (std::is_same_v<T, nn::OptimizerKind>) {
            v = nn::parse_optimizer(text);
        } else if constexpr (std::is_same_v<T, SurrogateLoss>) {
            v = parse_surrogate(text);
        } else {
            v = parse_negative_selection(text);
        }
    };
    return f;
}

#define CELLDET_FIELD(T, key, expr) field<T>(key, +[](ResolvedConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        CELLDET_FIELD(std::string, "name", c.name),
        CELLDET_FIELD(std::uint64_t, "seed", c.pipeline.seed),
        CELLDET_FIELD(int, "iterations", c.pipeline.iterations),
        CELLDET_FIELD(double, "alpha", c.pipeline.selection.alpha),
        CELLDET_FIELD(double, "beta", c.pipeline.selection.beta),
        CELLDET_FIELD(double, "p", c.pipeline.selection.p),
        CELLDET_FIELD(double, "prior", c.pipeline.pu.prior),
        CELLDET_FIELD(double, "th", c.pipeline.th),
        CELLDET_FIELD(double, "match_radius", c.pipeline.match_radius),
        CELLDET_FIELD(double, "mask_radius", c.pipeline.mask_radius),
        CELLDET_FIELD(double, "sigma", c.pipeline.sigma),
        CELLDET_FIELD(int, "patch_size", c.pipeline.patch_size),
        CELLDET_FIELD(double, "min_sep", c.pipeline.min_sep),
        CELLDET_FIELD(bool, "finetune", c.pipeline.finetune),
        CELLDET_FIELD(int, "det_levels", c.pipeline.detector.architecture.levels),
        CELLDET_FIELD(int, "det_base_channels", c.pipeline.detector.architecture.base_channels),
        CELLDET_FIELD(double, "det_learning_rate", c.pipeline.detector.learning_rate),
        CELLDET_FIELD(int, "det_epochs", c.pipeline.detector.epochs),
        CELLDET_FIELD(int, "det_batch_size", c.pipeline.detector.batch_size),
        CELLDET_FIELD(nn::OptimizerKind, "det_optimizer", c.pipeline.detector.optimizer),
        CELLDET_FIELD(double, "det_momentum", c.pipeline.detector.momentum),
        CELLDET_FIELD(int, "det_crop_size", c.pipeline.detector.crop_size),
        CELLDET_FIELD(SurrogateLoss, "pu_surrogate", c.pipeline.pu.surrogate),
        CELLDET_FIELD(double, "pu_learning_rate", c.pipeline.pu.learning_rate),
        CELLDET_FIELD(int, "pu_epochs", c.pipeline.pu.epochs),
        CELLDET_FIELD(int, "pu_batch_size", c.pipeline.pu.batch_size),
        CELLDET_FIELD(int, "pu_feature_dim", c.pipeline.pu.feature_dim),
        CELLDET_FIELD(double, "rank_l2", c.pipeline.selection.l2),
        CELLDET_FIELD(double, "rank_learning_rate", c.pipeline.selection.learning_rate),
        CELLDET_FIELD(int, "rank_max_iterations", c.pipeline.selection.max_iterations),
        CELLDET_FIELD(double, "rank_tolerance", c.pipeline.selection.tolerance),
        CELLDET_FIELD(NegativeSelection, "negative_selection", c.pipeline.selection.negative_selection),
        CELLDET_FIELD(int, "synth_height", c.synth.shape.height),
        CELLDET_FIELD(int, "synth_width", c.synth.shape.width),
        CELLDET_FIELD(int, "synth_cells", c.synth.n_cells),
        CELLDET_FIELD(double, "synth_cell_sigma", c.synth.cell_sigma),
        CELLDET_FIELD(double, "synth_min_separation", c.synth.min_separation),
        CELLDET_FIELD(double, "synth_intensity_lo", c.synth.intensity_lo),
        CELLDET_FIELD(double, "synth_intensity_hi", c.synth.intensity_hi),
        CELLDET_FIELD(double, "synth_noise_sigma", c.synth.noise_sigma),
        CELLDET_FIELD(double, "synth_label_fraction", c.synth.label_fraction),
        CELLDET_FIELD(double, "synth_background", c.synth.background),
        CELLDET_FIELD(double, "synth_background_ripple", c.synth.background_ripple),
        CELLDET_FIELD(int, "synth_debris", c.synth.n_debris),
        CELLDET_FIELD(double, "synth_debris_lo", c.synth.debris_lo),
        CELLDET_FIELD(double, "synth_debris_hi", c.synth.debris_hi),
        CELLDET_FIELD(int, "synth_max_attempts", c.synth.max_attempts),
        CELLDET_FIELD(int, "train_images", c.train_images),
        CELLDET_FIELD(int, "test_images", c.test_images),
    };
    return table;
}

#undef CELLDET_FIELD

const Field& find_field(std::string_view key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown key '" + std::string(key) + "'");
}

void require(bool ok, const char* key, const std::string& message) {
    if (!ok) throw ConfigError(std::string(key) + ": " + message);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.key);
        return out;
    }();
    return keys;
}

std::string ResolvedConfig::get(std::string_view key) const { return find_field(key).get(*this); }

void ResolvedConfig::set(std::string_view key, std::string_view value, ConfigOrigin origin) {
    const auto& f = find_field(key);
    try {
        f.set(*this, trim(value));
    } catch (const ParseError& e) {
        throw ConfigError(std::string(key) + ": " + e.what());
    }
    origins[f.key] = origin;
    if (key == "seed") apply_root_seed();
}

void ResolvedConfig::apply_root_seed() { synth.seed = derive_seed(pipeline.seed, "synth"); }

ResolvedConfig desk_scale_defaults() {
    ResolvedConfig c;
    c.pipeline.mask_radius = 6.0;
    c.pipeline.match_radius = 6.0;
    return c;
}

void validate(const ResolvedConfig& c) {
    const auto& p = c.pipeline;
    require(!c.name.empty() && c.name.find_first_of("/\\") == std::string::npos, "name",
            "must be a non-empty plain directory name");
    require(p.iterations >= 0, "iterations", "must be >= 0");
    require(p.selection.alpha >= 0.0 && p.selection.alpha <= 1.0, "alpha", "must lie in [0,1]");
    require(p.selection.beta >= 0.0 && p.selection.beta <= 1.0, "beta", "must lie in [0,1]");
    require(p.selection.alpha + p.selection.beta <= 1.0, "alpha", "alpha + beta must not exceed 1");
    require(p.selection.p >= 1.0, "p", "must be >= 1");
    require(p.pu.prior > 0.0 && p.pu.prior < 1.0, "prior", "must lie in (0,1)");
    require(p.th > 0.0 && p.th < 255.0, "th", "must lie in (0,255)");
    require(p.match_radius > 0.0, "match_radius", "must be positive");
    require(p.mask_radius > 0.0, "mask_radius", "must be positive");
    require(p.sigma >= 0.0, "sigma", "must be >= 0 (0 = mask_radius / 3)");
    require(p.patch_size >= 0 && (p.patch_size == 0 || p.patch_size % 2 == 1), "patch_size",
            "must be odd (0 = 2 * round(mask_radius) + 1)");
    require(p.effective_patch_size() >= 8, "patch_size", "the patch backbone needs patches of at least 8x8");
    require(p.min_sep >= 0.0, "min_sep", "must be >= 0 (0 = mask_radius)");
    require(p.detector.architecture.levels >= 1 && p.detector.architecture.levels <= 6, "det_levels",
            "must lie in [1,6]");
    require(p.detector.architecture.base_channels >= 1, "det_base_channels", "must be >= 1");
    require(p.detector.learning_rate >= 0.0, "det_learning_rate", "must be >= 0");
    require(p.detector.epochs >= 0, "det_epochs", "must be >= 0");
    require(p.detector.batch_size >= 1, "det_batch_size", "must be >= 1");
    require(p.detector.crop_size >= 0 && p.detector.crop_size % p.detector.architecture.stride() == 0,
            "det_crop_size", "must be a multiple of 2^det_levels (0 = whole images)");
    require(p.pu.surrogate == SurrogateLoss::sigmoid, "pu_surrogate", "training requires the sigmoid surrogate");
    require(p.pu.learning_rate >= 0.0, "pu_learning_rate", "must be >= 0");
    require(p.pu.epochs >= 0, "pu_epochs", "must be >= 0");
    require(p.pu.batch_size >= 1, "pu_batch_size", "must be >= 1");
    require(p.pu.feature_dim >= 1, "pu_feature_dim", "must be >= 1");
    require(p.selection.l2 >= 0.0, "rank_l2", "must be >= 0");
    require(p.selection.learning_rate >= 0.0, "rank_learning_rate", "must be >= 0");
    require(p.selection.max_iterations >= 0, "rank_max_iterations", "must be >= 0");
    require(p.selection.tolerance >= 0.0, "rank_tolerance", "must be >= 0");
    require(c.synth.shape.height >= 1, "synth_height", "must be >= 1");
    require(c.synth.shape.width >= 1, "synth_width", "must be >= 1");
    require(c.synth.n_cells >= 0, "synth_cells", "must be >= 0");
    require(c.synth.cell_sigma > 0.0, "synth_cell_sigma", "must be positive");
    require(c.synth.min_separation > 0.0, "synth_min_separation", "must be positive");
    require(c.synth.intensity_lo >= 0.0 && c.synth.intensity_lo <= c.synth.intensity_hi &&
                c.synth.intensity_hi <= 1.0,
            "synth_intensity_lo", "need 0 <= synth_intensity_lo <= synth_intensity_hi <= 1");
    require(c.synth.noise_sigma >= 0.0, "synth_noise_sigma", "must be >= 0");
    require(c.synth.label_fraction > 0.0 && c.synth.label_fraction <= 1.0, "synth_label_fraction",
            "must lie in (0,1]");
    require(c.synth.n_debris >= 0, "synth_debris", "must be >= 0");
    require(c.synth.debris_lo <= c.synth.debris_hi, "synth_debris_lo", "must not exceed synth_debris_hi");
    require(c.synth.max_attempts >= 1, "synth_max_attempts", "must be >= 1");
    require(c.train_images >= 1, "train_images", "must be >= 1");
    require(c.test_images >= 0, "test_images", "must be >= 0");
}

std::string serialize(const ResolvedConfig& c) {
    std::string out = "# celldet resolved configuration: key=value  # origin\n";
    for (const auto& f : fields()) {
        const auto it = c.origins.find(f.key);
        const auto origin = it == c.origins.end() ? ConfigOrigin::default_value : it->second;
        out += f.key + "=" + f.get(c) + "  # " + std::string(to_string(origin)) + "\n";
    }
    return out;
}

ResolvedConfig parse_config_text(std::string_view text, ResolvedConfig base, ConfigOrigin origin) {
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
        }
        base.set(trim(line.substr(0, eq)), line.substr(eq + 1), origin);
    }
    return base;
}

ResolvedConfig parse_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
    ResolvedConfig c;
    if (file) c = parse_config_text(read_text_file(*file), std::move(c), ConfigOrigin::file);
    for (const auto& [k, v] : overrides) c.set(k, v, ConfigOrigin::flag);
    validate(c);
    return c;
}

SyntheticSplits make_synthetic_splits(const ResolvedConfig& c) {
    SyntheticSplits out;
    out.train = generate_dataset(c.synth, c.train_images, "train");
    SynthConfig test_config = c.synth;
    test_config.seed = derive_seed(c.pipeline.seed, "synth-test");
    out.test = generate_dataset(test_config, c.test_images, "test");
    const auto label_seed = derive_seed(c.pipeline.seed, "labels");
    for (const auto& gt : out.train.ground_truth) {
        out.train_labels.push_back(subsample_labels(gt, c.synth.label_fraction, label_seed));
    }
    return out;
}

PipelineData SyntheticSplits::pipeline_data() const {
    PipelineData data;
    for (std::size_t i = 0; i < train.images.size(); ++i) {
        data.train.push_back({train.images[i], train_labels[i], train.ground_truth[i]});
    }
    for (std::size_t i = 0; i < test.images.size(); ++i) data.test.push_back({test.images[i], test.ground_truth[i]});
    return data;
}

}  // namespace celldet
