#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "celldet/nn/tensor.hpp"

namespace celldet::nn {

// Binary container: 16-byte header (8-byte magic "CELLDETK", u32 version,
// u32 model kind), then the architecture as length-prefixed `key=value` text,
// then the parameter arrays (u32 count, each u64 length + little-endian f32).

enum class ModelKind : std::uint32_t { heatmap_net = 1, patch_classifier = 2 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelKind kind = ModelKind::heatmap_net;
    std::map<std::string, std::string> architecture;
    std::vector<std::vector<float>> arrays;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace celldet::nn
