#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace celldet::nn {

// Fixed alignment keeps Eigen's vectorized kernels on the same code path for
// every allocation, so results do not depend on where malloc put a buffer.
using FloatBuffer = std::vector<float, Eigen::aligned_allocator<float>>;

/// One sample, channel-major (C, H, W) in single precision.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    FloatBuffer data;

    Tensor() = default;
    Tensor(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    float* channel(int c) { return data.data() + c * plane(); }
    const float* channel(int c) const { return data.data() + c * plane(); }
    float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    float at(int c, int y, int x) const {
        return data[c * plane() + static_cast<std::size_t>(y) * width + x];
    }
};

/// Trainable array with its accumulated gradient.
struct Parameter {
    FloatBuffer value;
    FloatBuffer grad;

    explicit Parameter(std::size_t n = 0) : value(n, 0.0f), grad(n, 0.0f) {}
    std::size_t size() const { return value.size(); }
};

}  // namespace celldet::nn
