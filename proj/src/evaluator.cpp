#include "celldet/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <spdlog/spdlog.h>

#include "celldet/errors.hpp"
#include "celldet/io_util.hpp"

namespace celldet {

namespace {

// Minimum-cost assignment of every row to a distinct column (rows <= cols),
// Kuhn-Munkres with potentials. Returns the column chosen for each row.
std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    const std::size_t m = n ? cost[0].size() : 0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        owner[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = owner[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (owner[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<std::size_t> row_to_col(n, 0);
    for (std::size_t j = 1; j <= m; ++j) {
        if (owner[j]) row_to_col[owner[j] - 1] = j - 1;
    }
    return row_to_col;
}

std::vector<MatchPair> optimal_pairs(std::span<const Point2> det, std::span<const Point2> gt, double threshold) {
    const bool det_rows = det.size() <= gt.size();
    const auto rows = det_rows ? det : gt;
    const auto cols = det_rows ? gt : det;
    // Any infeasible edge costs more than a full set of feasible ones, so
    // cardinality is maximized before total distance is minimized.
    const double infeasible = (static_cast<double>(rows.size()) + 1.0) * (threshold + 1.0) * 2.0;
    std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const double d = distance(rows[i], cols[j]);
            cost[i][j] = d <= threshold ? d : infeasible;
        }
    }
    std::vector<MatchPair> pairs;
    const auto assignment = solve_assignment(cost);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t j = assignment[i];
        if (cost[i][j] >= infeasible) continue;
        pairs.push_back(det_rows ? MatchPair{i, j, cost[i][j]} : MatchPair{j, i, cost[i][j]});
    }
    return pairs;
}

std::vector<MatchPair> greedy_pairs(std::span<const Point2> det, std::span<const Point2> gt, double threshold) {
    std::vector<MatchPair> candidates;
    for (std::size_t i = 0; i < det.size(); ++i) {
        for (std::size_t j = 0; j < gt.size(); ++j) {
            const double d = distance(det[i], gt[j]);
            if (d <= threshold) candidates.push_back({i, j, d});
        }
    }
    std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
        return std::tie(a.distance, a.detection, a.ground_truth) < std::tie(b.distance, b.detection, b.ground_truth);
    });
    std::vector<char> det_used(det.size(), 0), gt_used(gt.size(), 0);
    std::vector<MatchPair> pairs;
    for (const auto& c : candidates) {
        if (det_used[c.detection] || gt_used[c.ground_truth]) continue;
        det_used[c.detection] = gt_used[c.ground_truth] = 1;
        pairs.push_back(c);
    }
    return pairs;
}

}  // namespace

double MatchReport::total_distance() const {
    double sum = 0.0;
    for (const auto& p : pairs) sum += p.distance;
    return sum;
}

MatchReport match_points(std::span<const Point2> detections, std::span<const Point2> ground_truth, double threshold,
                         MatchMethod method) {
    if (!(threshold > 0.0)) throw InvalidArgument("match threshold must be positive");
    MatchReport r;
    r.pairs = method == MatchMethod::optimal ? optimal_pairs(detections, ground_truth, threshold)
                                             : greedy_pairs(detections, ground_truth, threshold);
    std::sort(r.pairs.begin(), r.pairs.end(),
              [](const MatchPair& a, const MatchPair& b) { return a.detection < b.detection; });
    r.tp = r.pairs.size();
    r.fp = detections.size() - r.tp;
    r.fn = ground_truth.size() - r.tp;
    r.prf = compute_prf(r.tp, r.fp, r.fn);
    return r;
}

PRF compute_prf(std::size_t tp, std::size_t fp, std::size_t fn) {
    auto ratio = [](double num, double den, const char* what) {
        if (den == 0.0) {
            spdlog::debug("compute_prf: {} is 0/0, reported as 0", what);
            return 0.0;
        }
        return num / den;
    };
    PRF m;
    m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp), "precision");
    m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn), "recall");
    m.f_score = ratio(2.0 * m.precision * m.recall, m.precision + m.recall, "f-score");
    return m;
}

void MatchTotals::add(const MatchReport& r) {
    tp += r.tp;
    fp += r.fp;
    fn += r.fn;
}

std::string format_match_report(const MatchReport& report) {
    std::string out;
    out += "tp=" + std::to_string(report.tp) + "\n";
    out += "fp=" + std::to_string(report.fp) + "\n";
    out += "fn=" + std::to_string(report.fn) + "\n";
    out += "precision=" + format_double(report.prf.precision) + "\n";
    out += "recall=" + format_double(report.prf.recall) + "\n";
    out += "f_score=" + format_double(report.prf.f_score) + "\n";
    for (const auto& p : report.pairs) {
        out += "pair=" + std::to_string(p.detection) + "," + std::to_string(p.ground_truth) + "," +
               format_double(p.distance) + "\n";
    }
    return out;
}

}  // namespace celldet
