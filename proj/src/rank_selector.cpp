#include "celldet/rank_selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"

namespace celldet {

namespace {

constexpr double kScoreClip = 50.0;

struct Objective {
    const Eigen::MatrixXd& pos;
    const Eigen::VectorXd& pos_weight;
    const Eigen::MatrixXd& neg;
    double p;
    double l2;

    struct Eval {
        double loss = 0.0;  // without penalty
        double penalized = 0.0;
        Eigen::VectorXd grad_lambda;
        double grad_bias = 0.0;
        std::size_t clipped = 0;
    };

    Eval evaluate(const Eigen::VectorXd& lambda, double bias, bool with_grad) const {
        Eval e;
        if (with_grad) e.grad_lambda = Eigen::VectorXd::Zero(lambda.size());
        const Eigen::VectorXd sp = pos * lambda;
        for (Eigen::Index i = 0; i < sp.size(); ++i) {
            const double f = sp(i) + bias;
            const bool clip = std::abs(f) > kScoreClip;
            e.clipped += clip;
            const double term = pos_weight(i) * std::exp(-std::clamp(f, -kScoreClip, kScoreClip));
            e.loss += term;
            if (with_grad && !clip) {
                e.grad_lambda -= term * pos.row(i).transpose();
                e.grad_bias -= term;
            }
        }
        const Eigen::VectorXd sn = neg * lambda;
        for (Eigen::Index k = 0; k < sn.size(); ++k) {
            const double f = sn(k) + bias;
            const bool clip = std::abs(f) > kScoreClip;
            e.clipped += clip;
            const double term = std::exp(std::clamp(f, -kScoreClip, kScoreClip)) / p;
            e.loss += term;
            if (with_grad && !clip) {
                e.grad_lambda += term * neg.row(k).transpose();
                e.grad_bias += term;
            }
        }
        e.penalized = e.loss + l2 * lambda.squaredNorm();
        if (with_grad) e.grad_lambda += 2.0 * l2 * lambda;
        return e;
    }
};

void check_dims(const Eigen::MatrixXd& pos, const Eigen::MatrixXd& neg) {
    if (pos.rows() < 1 || neg.rows() < 1) throw InvalidArgument("ranker needs at least one row on each side");
    if (pos.cols() != neg.cols()) throw ShapeError("ranker feature dimension mismatch");
}

}  // namespace

Eigen::VectorXd RankModel::scores(const Eigen::MatrixXd& features) const {
    if (features.cols() != lambda.size()) throw ShapeError("rank model dimension mismatch");
    return (features * lambda).array() + bias;
}

std::string_view to_string(NegativeSelection m) {
    return m == NegativeSelection::opposed_top ? "opposed_top" : "original_bottom";
}

NegativeSelection parse_negative_selection(std::string_view s) {
    if (s == "opposed_top") return NegativeSelection::opposed_top;
    if (s == "original_bottom") return NegativeSelection::original_bottom;
    throw ParseError("unknown negative selection mode '" + std::string(s) + "'");
}

void validate(const SelectionConfig& c) {
    if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0,1]");
    if (!(c.beta >= 0.0 && c.beta <= 1.0)) throw InvalidArgument("beta must lie in [0,1]");
    if (c.alpha + c.beta > 1.0) throw InvalidArgument("alpha + beta must not exceed 1");
    if (!(c.p >= 1.0) || !std::isfinite(c.p)) throw InvalidArgument("p must be >= 1");
    if (!(c.l2 >= 0.0)) throw InvalidArgument("ranker l2 must be >= 0");
    if (!(c.learning_rate >= 0.0)) throw InvalidArgument("ranker learning_rate must be >= 0");
    if (c.max_iterations < 0) throw InvalidArgument("ranker max_iterations must be >= 0");
}

double pclass_loss(const RankModel& model, const Eigen::MatrixXd& positives, const Eigen::MatrixXd& negatives) {
    check_dims(positives, negatives);
    if (model.lambda.size() != positives.cols()) throw ShapeError("rank model dimension mismatch");
    if (!(model.p >= 1.0)) throw InvalidArgument("p must be >= 1");
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(positives.rows());
    const Objective obj{positives, ones, negatives, model.p, 0.0};
    const auto e = obj.evaluate(model.lambda, model.bias, false);
    if (e.clipped) spdlog::warn("pclass_loss: {} scores clipped to +/-{}", e.clipped, kScoreClip);
    return e.loss;
}

RankTrainingResult train_ranker(const Eigen::MatrixXd& positives, const Eigen::MatrixXd& negatives,
                                const SelectionConfig& config) {
    check_dims(positives, negatives);
    return train_ranker_weighted(positives, Eigen::VectorXd::Ones(positives.rows()), negatives, config);
}

RankTrainingResult train_ranker_weighted(const Eigen::MatrixXd& positives, const Eigen::VectorXd& positive_weights,
                                         const Eigen::MatrixXd& negatives, const SelectionConfig& config) {
    validate(config);
    check_dims(positives, negatives);
    if (positive_weights.size() != positives.rows()) throw ShapeError("positive weight count mismatch");

    const Objective obj{positives, positive_weights, negatives, config.p, config.l2};
    RankTrainingResult result;
    result.model.lambda = Eigen::VectorXd::Zero(positives.cols());
    result.model.bias = 0.0;
    result.model.p = config.p;

    auto current = obj.evaluate(result.model.lambda, result.model.bias, true);
    result.initial_loss = current.loss;
    double step = config.learning_rate;
    bool done = !(step > 0.0);
    while (!done && result.iterations < config.max_iterations) {
        const double gnorm2 = current.grad_lambda.squaredNorm() + current.grad_bias * current.grad_bias;
        if (!std::isfinite(gnorm2)) throw NumericError("train_ranker: non-finite gradient");
        if (gnorm2 <= config.tolerance * config.tolerance) break;
        ++result.iterations;
        // Armijo backtracking from a step allowed to grow 2x per iteration.
        done = true;
        double t = step * 2.0;
        for (int halvings = 0; halvings < 80; ++halvings, t *= 0.5) {
            const Eigen::VectorXd lambda = result.model.lambda - t * current.grad_lambda;
            const double bias = result.model.bias - t * current.grad_bias;
            auto next = obj.evaluate(lambda, bias, true);
            if (std::isfinite(next.penalized) && next.penalized <= current.penalized - 0.5 * t * gnorm2) {
                const double decrease = current.penalized - next.penalized;
                result.model.lambda = lambda;
                result.model.bias = bias;
                current = std::move(next);
                step = t;
                done = decrease <= config.tolerance * std::max(1.0, current.penalized);
                break;
            }
        }
    }
    if (!std::isfinite(current.loss)) throw NumericError("train_ranker: non-finite loss");
    if (current.clipped) spdlog::warn("train_ranker: {} scores clipped at the solution", current.clipped);
    result.final_loss = current.loss;
    return result;
}

std::vector<std::size_t> rank_descending(const Eigen::VectorXd& scores) {
    std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    });
    return order;
}

Selection select_pseudo_labels(const Eigen::MatrixXd& unlabeled, const std::vector<Candidate>& centers,
                               const Eigen::MatrixXd& positives, const SelectionConfig& config) {
    validate(config);
    if (static_cast<Eigen::Index>(centers.size()) != unlabeled.rows()) {
        throw ShapeError("select_pseudo_labels: one center per unlabeled row required");
    }
    Selection sel;
    const auto n_u = static_cast<std::size_t>(unlabeled.rows());
    if (n_u == 0) return sel;
    if (positives.rows() < 1) throw InvalidArgument("select_pseudo_labels: no positive rows");

    const auto forward = train_ranker(positives, unlabeled, config);
    sel.positive_scores = forward.model.scores(unlabeled);
    const auto opposed = train_ranker(unlabeled, positives, config);
    sel.negative_scores = opposed.model.scores(unlabeled);

    const auto count = [n_u](double fraction) {
        return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_u) + 1e-9));
    };
    const std::size_t n_pos = count(config.alpha);
    const std::size_t n_neg = count(config.beta);

    const auto pos_order = rank_descending(sel.positive_scores);
    std::vector<std::size_t> pos_rows(pos_order.begin(), pos_order.begin() + static_cast<std::ptrdiff_t>(n_pos));
    std::vector<std::size_t> neg_rows;
    if (config.negative_selection == NegativeSelection::opposed_top) {
        const auto neg_order = rank_descending(sel.negative_scores);
        neg_rows.assign(neg_order.begin(), neg_order.begin() + static_cast<std::ptrdiff_t>(n_neg));
    } else {
        neg_rows.assign(pos_order.end() - static_cast<std::ptrdiff_t>(n_neg), pos_order.end());
        std::reverse(neg_rows.begin(), neg_rows.end());
    }

    auto contains = [](const std::vector<std::size_t>& v, std::size_t x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    for (auto r : pos_rows) {
        if (!contains(neg_rows, r)) sel.positive_rows.push_back(r);
    }
    for (auto r : neg_rows) {
        if (!contains(pos_rows, r)) sel.negative_rows.push_back(r);
    }
    for (auto r : sel.positive_rows) sel.positive_centers.push_back(centers[r]);
    for (auto r : sel.negative_rows) sel.negative_centers.push_back(centers[r]);
    return sel;
}

std::string format_ranked_list(const std::vector<Candidate>& centers, const Eigen::VectorXd& scores,
                               const std::optional<std::string>& image_id) {
    if (static_cast<Eigen::Index>(centers.size()) != scores.size()) throw ShapeError("ranked list size mismatch");
    std::string out = "rank,x,y,score\n";
    const auto order = rank_descending(scores);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const auto& c = centers[order[r]];
        if (image_id && c.image_id != *image_id) continue;
        out += std::to_string(r + 1) + "," + format_double(c.center.x) + "," + format_double(c.center.y) + "," +
               format_double(scores(static_cast<Eigen::Index>(order[r]))) + "\n";
    }
    return out;
}

}  // namespace celldet
