#pragma once

#include <string_view>
#include <vector>

#include "celldet/nn/tensor.hpp"

namespace celldet::nn {

enum class OptimizerKind { sgd, momentum, adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

/// First-order update over a fixed parameter list. step() consumes and zeroes
/// the accumulated gradients.
class Optimizer {
public:
    Optimizer(std::vector<Parameter*> params, OptimizerKind kind, double learning_rate,
              double momentum = 0.9);

    void zero_grad();
    void scale_grad(float factor);
    void step();

private:
    std::vector<Parameter*> params_;
    OptimizerKind kind_;
    double lr_;
    double momentum_;
    long long t_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

}  // namespace celldet::nn
