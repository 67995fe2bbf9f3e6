#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "celldet/annotations.hpp"

namespace celldet {

/// Linear scoring function f(x) = lambda . x + bias with push exponent p.
struct RankModel {
    Eigen::VectorXd lambda;
    double bias = 0.0;
    double p = 4.0;

    Eigen::VectorXd scores(const Eigen::MatrixXd& features) const;
};

enum class NegativeSelection {
    opposed_top,      // top of the ranking learned with roles swapped
    original_bottom,  // bottom of the original ranking
};

std::string_view to_string(NegativeSelection m);
NegativeSelection parse_negative_selection(std::string_view s);

struct SelectionConfig {
    double alpha = 0.05;
    double beta = 0.05;
    double p = 4.0;
    double l2 = 1e-4;
    /// Initial step of the backtracking line search; 0 disables training.
    double learning_rate = 1.0;
    int max_iterations = 1000;
    double tolerance = 1e-9;
    NegativeSelection negative_selection = NegativeSelection::opposed_top;
};

void validate(const SelectionConfig& c);

/// sum_i exp(-f(pos_i)) + (1/p) sum_k exp(f(neg_k)); scores clipped to [-50, 50].
double pclass_loss(const RankModel& model, const Eigen::MatrixXd& positives,
                   const Eigen::MatrixXd& negatives);

struct RankTrainingResult {
    RankModel model;
    double initial_loss = 0.0;  // at lambda = 0, bias = 0
    double final_loss = 0.0;    // without the L2 penalty
    int iterations = 0;
};

/// Minimizes the P-classification loss plus l2 * |lambda|^2 by full-batch
/// gradient descent with backtracking line search, starting from zero.
RankTrainingResult train_ranker(const Eigen::MatrixXd& positives, const Eigen::MatrixXd& negatives,
                                const SelectionConfig& config);

/// Same objective with a per-row weight on each positive term.
RankTrainingResult train_ranker_weighted(const Eigen::MatrixXd& positives,
                                         const Eigen::VectorXd& positive_weights,
                                         const Eigen::MatrixXd& negatives, const SelectionConfig& config);

/// Indices ordered by descending score; equal scores keep input order.
std::vector<std::size_t> rank_descending(const Eigen::VectorXd& scores);

struct Candidate {
    std::string image_id;
    Point2 center;
};

struct Selection {
    std::vector<std::size_t> positive_rows;  // into the unlabeled matrix
    std::vector<std::size_t> negative_rows;
    Eigen::VectorXd positive_scores;  // unlabeled rows scored by the forward ranker
    Eigen::VectorXd negative_scores;  // unlabeled rows scored by the opposed ranker
    std::vector<Candidate> positive_centers;
    std::vector<Candidate> negative_centers;
};

/// Trains the forward ranker (positives vs unlabeled) and the opposed ranker
/// (unlabeled vs positives); keeps floor(alpha * N_u) top rows of the former and
/// floor(beta * N_u) top rows of the latter, dropping rows chosen by both.
Selection select_pseudo_labels(const Eigen::MatrixXd& unlabeled, const std::vector<Candidate>& centers,
                               const Eigen::MatrixXd& positives, const SelectionConfig& config);

/// `rank,x,y,score` rows, best first. With `image_id` set, only that image's
/// rows are written but ranks stay global.
std::string format_ranked_list(const std::vector<Candidate>& centers, const Eigen::VectorXd& scores,
                               const std::optional<std::string>& image_id = std::nullopt);

}  // namespace celldet
