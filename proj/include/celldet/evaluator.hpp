#pragma once

#include <span>
#include <string>
#include <vector>

#include "celldet/annotations.hpp"

namespace celldet {

struct MatchPair {
    std::size_t detection = 0;
    std::size_t ground_truth = 0;
    double distance = 0.0;

    friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
};

struct MatchReport {
    std::vector<MatchPair> pairs;  // ordered by detection index
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    PRF prf;

    double total_distance() const;
};

enum class MatchMethod { optimal, greedy };

/// One-to-one matching within `threshold`: maximum cardinality, then minimum
/// total distance (optimal); greedy takes the globally closest pair repeatedly.
MatchReport match_points(std::span<const Point2> detections, std::span<const Point2> ground_truth,
                         double threshold, MatchMethod method = MatchMethod::optimal);

/// 0/0 ratios are defined as 0.
PRF compute_prf(std::size_t tp, std::size_t fp, std::size_t fn);

/// Accumulates counts over several images.
struct MatchTotals {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    void add(const MatchReport& r);
    PRF prf() const { return compute_prf(tp, fp, fn); }
};

/// Structured text: counts, P/R/F, then one `pair=` line per match.
std::string format_match_report(const MatchReport& report);

}  // namespace celldet
