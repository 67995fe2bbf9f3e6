#pragma once

// Independent reference implementations used to cross-check the library.
// They follow the defining formulas literally and share no code with src/.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "celldet/annotations.hpp"

namespace oracle {

// Per-sample losses written out from their definitions.
inline double zero_one(double score, int label) {
    const double m = score * label;
    const double sign = m > 0 ? 1.0 : (m < 0 ? -1.0 : 0.0);
    return (1.0 - sign) / 2.0;
}

inline double sigmoid(double score, int label) { return 1.0 / (1.0 + std::exp(score * label)); }

// pi * (1/n_p) sum l(g(x_p), +1) + max{0, (1/n_u) sum l(g(x_u), -1) - pi * (1/n_p) sum l(g(x_p), -1)}
inline double pu_risk(const std::vector<double>& sp, const std::vector<double>& su, double prior, bool use_sigmoid,
                      bool* clamped = nullptr) {
    auto loss = [&](double s, int y) { return use_sigmoid ? sigmoid(s, y) : zero_one(s, y); };
    double rp_plus = 0.0, rp_minus = 0.0, ru_minus = 0.0;
    for (double s : sp) rp_plus += loss(s, +1);
    for (double s : sp) rp_minus += loss(s, -1);
    for (double s : su) ru_minus += loss(s, -1);
    rp_plus /= static_cast<double>(sp.size());
    rp_minus /= static_cast<double>(sp.size());
    ru_minus /= static_cast<double>(su.size());
    const double inner = ru_minus - prior * rp_minus;
    if (clamped) *clamped = inner < 0.0;
    return prior * rp_plus + std::max(0.0, inner);
}

// sum_i exp(-f(x_i)) + (1/p) sum_k exp(f(x_k)), f(x) = lambda . x + bias
inline double pclass_loss(const Eigen::VectorXd& lambda, double bias, double p, const Eigen::MatrixXd& pos,
                          const Eigen::MatrixXd& neg) {
    auto f = [&](const Eigen::MatrixXd& m, Eigen::Index i) {
        double s = bias;
        for (Eigen::Index j = 0; j < m.cols(); ++j) s += lambda(j) * m(i, j);
        return s;
    };
    double a = 0.0, b = 0.0;
    for (Eigen::Index i = 0; i < pos.rows(); ++i) a += std::exp(-f(pos, i));
    for (Eigen::Index k = 0; k < neg.rows(); ++k) b += std::exp(f(neg, k));
    return a + b / p;
}

struct Matching {
    std::size_t cardinality = 0;
    double total_distance = 0.0;
};

// Enumerates every one-to-one partial matching within the threshold and keeps
// the largest, breaking ties by smallest total distance.
inline Matching best_matching(const std::vector<celldet::Point2>& det, const std::vector<celldet::Point2>& gt,
                              double threshold) {
    Matching best;
    std::vector<bool> used(gt.size(), false);
    std::size_t card = 0;
    double dist = 0.0;
    auto better = [&](std::size_t c, double d) {
        return c > best.cardinality || (c == best.cardinality && d < best.total_distance - 1e-12);
    };
    auto rec = [&](auto&& self, std::size_t i) -> void {
        if (i == det.size()) {
            if (better(card, dist)) best = {card, dist};
            return;
        }
        self(self, i + 1);
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (used[j]) continue;
            const double d = std::hypot(det[i].x - gt[j].x, det[i].y - gt[j].y);
            if (d > threshold) continue;
            used[j] = true;
            ++card;
            dist += d;
            self(self, i + 1);
            dist -= d;
            --card;
            used[j] = false;
        }
    };
    rec(rec, 0);
    return best;
}

struct TableRow {
    int iteration;
    double precision;
    double recall;
    double f_score;
};

// Reference per-iteration precision, recall and F rows (training and test images).
inline constexpr std::array<TableRow, 6> kTrainTable{{{0, 0.337, 0.999, 0.504},
                                                      {1, 0.732, 0.997, 0.844},
                                                      {2, 0.963, 0.998, 0.980},
                                                      {3, 0.956, 0.997, 0.976},
                                                      {4, 0.946, 0.995, 0.970},
                                                      {5, 0.952, 0.996, 0.973}}};
inline constexpr std::array<TableRow, 6> kTestTable{{{0, 0.245, 0.999, 0.394},
                                                     {1, 0.622, 0.999, 0.767},
                                                     {2, 0.910, 0.999, 0.952},
                                                     {3, 0.896, 0.998, 0.944},
                                                     {4, 0.918, 0.997, 0.956},
                                                     {5, 0.888, 0.998, 0.940}}};

}  // namespace oracle
