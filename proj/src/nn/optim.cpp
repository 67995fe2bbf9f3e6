#include "celldet/nn/optim.hpp"

#include <cmath>

#include "celldet/errors.hpp"

namespace celldet::nn {

std::string_view to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::momentum: return "momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "unknown";
}

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "momentum") return OptimizerKind::momentum;
    if (s == "adam") return OptimizerKind::adam;
    throw ParseError("unknown optimizer '" + std::string(s) + "'");
}

Optimizer::Optimizer(std::vector<Parameter*> params, OptimizerKind kind, double learning_rate, double momentum)
    : params_(std::move(params)), kind_(kind), lr_(learning_rate), momentum_(momentum) {
    for (auto* p : params_) {
        m_.emplace_back(p->size(), 0.0f);
        if (kind_ == OptimizerKind::adam) v_.emplace_back(p->size(), 0.0f);
    }
}

void Optimizer::zero_grad() {
    for (auto* p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void Optimizer::scale_grad(float factor) {
    for (auto* p : params_) {
        for (auto& g : p->grad) g *= factor;
    }
}

void Optimizer::step() {
    ++t_;
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& value = params_[i]->value;
        auto& grad = params_[i]->grad;
        auto& m = m_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = grad[j];
            switch (kind_) {
                case OptimizerKind::sgd:
                    value[j] = static_cast<float>(value[j] - lr_ * g);
                    break;
                case OptimizerKind::momentum:
                    m[j] = static_cast<float>(momentum_ * m[j] + g);
                    value[j] = static_cast<float>(value[j] - lr_ * m[j]);
                    break;
                case OptimizerKind::adam: {
                    auto& v = v_[i];
                    m[j] = static_cast<float>(beta1 * m[j] + (1.0 - beta1) * g);
                    v[j] = static_cast<float>(beta2 * v[j] + (1.0 - beta2) * g * g);
                    const double mhat = m[j] / bc1;
                    const double vhat = v[j] / bc2;
                    value[j] = static_cast<float>(value[j] - lr_ * mhat / (std::sqrt(vhat) + eps));
                    break;
                }
            }
            grad[j] = 0.0f;
        }
    }
}

}  // namespace celldet::nn
