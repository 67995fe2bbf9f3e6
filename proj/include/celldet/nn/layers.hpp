#pragma once

#include <cstdint>
#include <vector>

#include "celldet/nn/tensor.hpp"
#include "celldet/rng.hpp"

namespace celldet::nn {

// Layers cache what backward() needs from the most recent forward() call, so
// samples are processed strictly one at a time: forward, backward, next.

/// Square convolution, stride 1, zero "same" padding, odd kernel size.
class Conv2d {
public:
    Conv2d(int in_channels, int out_channels, int kernel);

    /// He-normal weights, zero bias.
    void initialize(Rng& rng);

    Tensor forward(const Tensor& x);
    /// Accumulates parameter gradients; returns the input gradient.
    Tensor backward(const Tensor& grad_out);

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }

private:
    void im2col(const Tensor& x);

    int in_;
    int out_;
    int kernel_;
    Parameter weight_;  // out x (in * k * k), row-major
    Parameter bias_;
    FloatBuffer columns_;  // (in * k * k) x (H * W), row-major
    int cached_h_ = 0;
    int cached_w_ = 0;
};

class Relu {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    std::vector<std::uint8_t> active_;
};

/// 2x2 max pooling, stride 2, trailing odd rows/columns dropped.
class MaxPool2 {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out) const;

private:
    std::vector<std::uint32_t> argmax_;
    int in_c_ = 0;
    int in_h_ = 0;
    int in_w_ = 0;
};

/// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& grad_out);

/// Channel concatenation [a; b] and its split.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int first_channels, Tensor& ga, Tensor& gb);

/// conv3x3 -> ReLU -> conv3x3 -> ReLU
class DoubleConv {
public:
    DoubleConv(int in_channels, int out_channels);
    void initialize(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Parameter*>& out);

private:
    Conv2d conv1_;
    Relu relu1_;
    Conv2d conv2_;
    Relu relu2_;
};

}  // namespace celldet::nn
