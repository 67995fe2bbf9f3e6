#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "celldet/pipeline.hpp"
#include "celldet/synthetic.hpp"

namespace celldet {

enum class ConfigOrigin { default_value, file, flag };

std::string_view to_string(ConfigOrigin o);

/// Every tunable with its resolved value and where it came from.
struct ResolvedConfig {
    ResolvedConfig() { apply_root_seed(); }

    std::string name = "run";
    PipelineConfig pipeline;
    SynthConfig synth;
    int train_images = 10;
    int test_images = 20;
    std::map<std::string, ConfigOrigin> origins;

    /// Value of `key` in its serialized form; throws ConfigError for unknown keys.
    std::string get(std::string_view key) const;
    void set(std::string_view key, std::string_view value, ConfigOrigin origin);

    /// Seeds of every component, derived from the single root seed.
    void apply_root_seed();
};

/// Defaults rescaled for small synthetic images (mask and match radius 6 px).
ResolvedConfig desk_scale_defaults();

/// Every recognized key, in serialization order.
const std::vector<std::string>& config_keys();

/// Cross-field checks; throws ConfigError naming the offending key.
void validate(const ResolvedConfig& c);

/// `key=value` lines in config_keys() order, `#` comment header.
std::string serialize(const ResolvedConfig& c);

/// Parses `key=value` text (blank lines and `#` comments ignored) on top of `base`.
ResolvedConfig parse_config_text(std::string_view text, ResolvedConfig base = {},
                                 ConfigOrigin origin = ConfigOrigin::file);

/// Precedence: overrides > file > defaults. Validates the result.
ResolvedConfig parse_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::pair<std::string, std::string>>& overrides);

/// Train and test splits generated from `c.synth`, with the sparse human
/// labels drawn from the training ground truth. The test split uses its own
/// seed derived from the root seed.
struct SyntheticSplits {
    SyntheticDataset train;
    std::vector<AnnotationSet> train_labels;
    SyntheticDataset test;

    PipelineData pipeline_data() const;
};

SyntheticSplits make_synthetic_splits(const ResolvedConfig& c);

}  // namespace celldet
