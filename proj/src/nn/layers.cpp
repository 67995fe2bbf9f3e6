#include "celldet/nn/layers.hpp"

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "celldet/errors.hpp"

namespace celldet::nn {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias_(static_cast<std::size_t>(out_channels)) {
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("conv kernel must be odd");
}

void Conv2d::initialize(Rng& rng) {
    const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : weight_.value) w = static_cast<float>(normal(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

void Conv2d::im2col(const Tensor& x) {
    const int h = x.height;
    const int w = x.width;
    const int pad = kernel_ / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    columns_.assign(static_cast<std::size_t>(in_) * kernel_ * kernel_ * hw, 0.0f);
    for (int c = 0; c < in_; ++c) {
        const float* src = x.channel(c);
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx) {
                float* dst = columns_.data() + ((static_cast<std::size_t>(c) * kernel_ + ky) * kernel_ + kx) * hw;
                const int dy = ky - pad;
                const int dx = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const int xs = std::max(0, -dx);
                    const int xe = std::min(w, w - dx);
                    const float* srow = src + static_cast<std::size_t>(sy) * w + dx;
                    float* drow = dst + static_cast<std::size_t>(y) * w;
                    for (int xx = xs; xx < xe; ++xx) drow[xx] = srow[xx];
                }
            }
        }
    }
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.channels != in_) throw ShapeError("conv input channel mismatch");
    cached_h_ = x.height;
    cached_w_ = x.width;
    const int hw = x.height * x.width;
    const int k = in_ * kernel_ * kernel_;
    im2col(x);
    Tensor y(out_, x.height, x.width);
    ConstMatrixMap wmat(weight_.value.data(), out_, k);
    ConstMatrixMap col(columns_.data(), k, hw);
    MatrixMap ymat(y.data.data(), out_, hw);
    ymat.noalias() = wmat * col;
    for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias_.value[o];
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const int h = cached_h_;
    const int w = cached_w_;
    const int hw = h * w;
    const int k = in_ * kernel_ * kernel_;
    ConstMatrixMap dy(grad_out.data.data(), out_, hw);
    ConstMatrixMap col(columns_.data(), k, hw);
    MatrixMap dw(weight_.grad.data(), out_, k);
    dw.noalias() += dy * col.transpose();
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.row(o).sum();

    ConstMatrixMap wmat(weight_.value.data(), out_, k);
    RowMatrix dcol = wmat.transpose() * dy;

    Tensor dx(in_, h, w);
    const int pad = kernel_ / 2;
    for (int c = 0; c < in_; ++c) {
        float* dst = dx.channel(c);
        for (int ky = 0; ky < kernel_; ++ky) {
            for (int kx = 0; kx < kernel_; ++kx) {
                const float* src = dcol.data() + ((static_cast<std::size_t>(c) * kernel_ + ky) * kernel_ + kx) * hw;
                const int dyo = ky - pad;
                const int dxo = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dyo;
                    if (sy < 0 || sy >= h) continue;
                    const int xs = std::max(0, -dxo);
                    const int xe = std::min(w, w - dxo);
                    float* drow = dst + static_cast<std::size_t>(sy) * w + dxo;
                    const float* srow = src + static_cast<std::size_t>(y) * w;
                    for (int xx = xs; xx < xe; ++xx) drow[xx] += srow[xx];
                }
            }
        }
    }
    return dx;
}

Tensor Relu::forward(const Tensor& x) {
    Tensor y = x;
    active_.resize(x.data.size());
    for (std::size_t i = 0; i < y.data.size(); ++i) {
        active_[i] = y.data[i] > 0.0f;
        if (!active_[i]) y.data[i] = 0.0f;
    }
    return y;
}

Tensor Relu::backward(const Tensor& grad_out) const {
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        if (!active_[i]) g.data[i] = 0.0f;
    }
    return g;
}

Tensor MaxPool2::forward(const Tensor& x) {
    in_c_ = x.channels;
    in_h_ = x.height;
    in_w_ = x.width;
    const int oh = x.height / 2;
    const int ow = x.width / 2;
    if (oh < 1 || ow < 1) throw ShapeError("max-pool input smaller than 2x2");
    Tensor y(x.channels, oh, ow);
    argmax_.resize(y.data.size());
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c) {
        const float* src = x.channel(c);
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx, ++o) {
                std::uint32_t best = static_cast<std::uint32_t>(2 * yy * x.width + 2 * xx);
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const auto idx = static_cast<std::uint32_t>((2 * yy + dy) * x.width + 2 * xx + dx);
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                argmax_[o] = best;
                y.data[o] = src[best];
            }
        }
    }
    return y;
}

Tensor MaxPool2::backward(const Tensor& grad_out) const {
    Tensor g(in_c_, in_h_, in_w_);
    const std::size_t plane_out = grad_out.plane();
    for (int c = 0; c < in_c_; ++c) {
        float* dst = g.channel(c);
        for (std::size_t i = 0; i < plane_out; ++i) {
            dst[argmax_[c * plane_out + i]] += grad_out.data[c * plane_out + i];
        }
    }
    return g;
}

Tensor upsample2(const Tensor& x) {
    Tensor y(x.channels, 2 * x.height, 2 * x.width);
    for (int c = 0; c < x.channels; ++c) {
        for (int yy = 0; yy < y.height; ++yy) {
            for (int xx = 0; xx < y.width; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
        }
    }
    return y;
}

Tensor upsample2_backward(const Tensor& grad_out) {
    Tensor g(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
    for (int c = 0; c < grad_out.channels; ++c) {
        for (int yy = 0; yy < grad_out.height; ++yy) {
            for (int xx = 0; xx < grad_out.width; ++xx) g.at(c, yy / 2, xx / 2) += grad_out.at(c, yy, xx);
        }
    }
    return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw ShapeError("concat spatial mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
    return y;
}

void split_channels(const Tensor& g, int first_channels, Tensor& ga, Tensor& gb) {
    ga = Tensor(first_channels, g.height, g.width);
    gb = Tensor(g.channels - first_channels, g.height, g.width);
    const auto split_at = g.data.begin() + static_cast<std::ptrdiff_t>(ga.data.size());
    std::copy(g.data.begin(), split_at, ga.data.begin());
    std::copy(split_at, g.data.end(), gb.data.begin());
}

DoubleConv::DoubleConv(int in_channels, int out_channels)
    : conv1_(in_channels, out_channels, 3), conv2_(out_channels, out_channels, 3) {}

void DoubleConv::initialize(Rng& rng) {
    conv1_.initialize(rng);
    conv2_.initialize(rng);
}

Tensor DoubleConv::forward(const Tensor& x) {
    return relu2_.forward(conv2_.forward(relu1_.forward(conv1_.forward(x))));
}

Tensor DoubleConv::backward(const Tensor& grad_out) {
    return conv1_.backward(relu1_.backward(conv2_.backward(relu2_.backward(grad_out))));
}

void DoubleConv::collect(std::vector<Parameter*>& out) {
    out.push_back(&conv1_.weight());
    out.push_back(&conv1_.bias());
    out.push_back(&conv2_.weight());
    out.push_back(&conv2_.bias());
}

}  // namespace celldet::nn
