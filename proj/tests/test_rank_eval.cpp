#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "celldet/errors.hpp"
#include "celldet/evaluator.hpp"
#include "celldet/rank_selector.hpp"
#include "oracles.hpp"

using namespace celldet;

namespace {

Eigen::MatrixXd gaussian_rows(std::mt19937_64& rng, int n, int d, double mean, double sd = 1.0) {
    std::normal_distribution<double> g(0.0, sd);
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = g(rng) + (j == 0 ? mean : 0.0);
    }
    return m;
}

std::vector<Candidate> candidates(int n) {
    std::vector<Candidate> out;
    for (int i = 0; i < n; ++i) out.push_back({"img", {static_cast<double>(i), 0.0}});
    return out;
}

}  // namespace

TEST_CASE("pclass_loss examples") {
    RankModel zero{Eigen::VectorXd::Zero(3), 0.0, 4.0};
    CHECK(pclass_loss(zero, Eigen::MatrixXd::Random(2, 3), Eigen::MatrixXd::Random(4, 3)) == 3.0);

    RankModel unit{Eigen::VectorXd::Ones(1), 0.0, 1.0};
    Eigen::MatrixXd pos(1, 1), neg(1, 1);
    pos << 1.0;
    neg << -1.0;
    CHECK(pclass_loss(unit, pos, neg) == doctest::Approx(0.73576).epsilon(1e-5));
    unit.p = 4.0;
    CHECK(pclass_loss(unit, pos, neg) == doctest::Approx(0.45985).epsilon(1e-5));
}

TEST_CASE("pclass_loss equals term-by-term summation") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 5);
        RankModel m{Eigen::VectorXd(d), g(rng), trial % 2 ? 1.0 : 4.0};
        for (int j = 0; j < d; ++j) m.lambda(j) = g(rng);
        const auto pos = gaussian_rows(rng, 1 + static_cast<int>(rng() % 6), d, 0.5);
        const auto neg = gaussian_rows(rng, 1 + static_cast<int>(rng() % 6), d, -0.5);
        CHECK(std::abs(pclass_loss(m, pos, neg) - oracle::pclass_loss(m.lambda, m.bias, m.p, pos, neg)) < 1e-9);
    }
}

TEST_CASE("pclass_loss with p=1 is symmetric under negation and role swap") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        RankModel m{Eigen::VectorXd(3), g(rng), 1.0};
        for (int j = 0; j < 3; ++j) m.lambda(j) = g(rng);
        const auto pos = gaussian_rows(rng, 4, 3, 1.0), neg = gaussian_rows(rng, 6, 3, -1.0);
        RankModel flipped{-m.lambda, -m.bias, 1.0};
        CHECK(pclass_loss(m, pos, neg) == doctest::Approx(pclass_loss(flipped, neg, pos)).epsilon(1e-12));
    }
}

TEST_CASE("train_ranker contracts") {
    SUBCASE("separable data is ranked perfectly") {
        Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(5, 3), unl = Eigen::MatrixXd::Zero(8, 3);
        pos.col(0).setConstant(1.0);
        unl.col(0).setConstant(-1.0);
        const auto r = train_ranker(pos, unl, SelectionConfig{});
        CHECK(r.model.scores(pos).minCoeff() > r.model.scores(unl).maxCoeff());
        CHECK(r.final_loss < r.initial_loss);
    }
    SUBCASE("zero learning rate") {
        std::mt19937_64 rng(3);
        SelectionConfig c;
        c.learning_rate = 0.0;
        const auto r = train_ranker(gaussian_rows(rng, 6, 4, 1), gaussian_rows(rng, 10, 4, 0), c);
        CHECK(r.model.lambda.isZero(0.0));
        CHECK(r.model.bias == 0.0);
        CHECK(r.final_loss == 6.0 + 10.0 / 4.0);
    }
    SUBCASE("duplicated positives equal a weight of two") {
        std::mt19937_64 rng(4);
        const auto pos = gaussian_rows(rng, 6, 3, 1.0), unl = gaussian_rows(rng, 12, 3, -0.5);
        Eigen::MatrixXd dup(12, 3);
        dup << pos, pos;
        SelectionConfig c;
        c.tolerance = 0.0;
        c.max_iterations = 5000;
        const auto a = train_ranker(dup, unl, c);
        const auto b = train_ranker_weighted(pos, Eigen::VectorXd::Constant(6, 2.0), unl, c);
        const double cosine = a.model.lambda.dot(b.model.lambda) / (a.model.lambda.norm() * b.model.lambda.norm());
        CHECK(cosine > 1.0 - 1e-8);
        CHECK(a.final_loss == doctest::Approx(b.final_loss).epsilon(1e-8));
    }
    SUBCASE("gradient descent reaches a stationary point of the penalized objective") {
        std::mt19937_64 rng(5);
        const auto pos = gaussian_rows(rng, 10, 2, 0.5), unl = gaussian_rows(rng, 20, 2, -0.5);
        SelectionConfig c;
        c.tolerance = 0.0;
        c.max_iterations = 5000;
        const auto r = train_ranker(pos, unl, c);
        auto objective = [&](const Eigen::VectorXd& lam, double b) {
            return pclass_loss({lam, b, c.p}, pos, unl) + c.l2 * lam.squaredNorm();
        };
        const double base = objective(r.model.lambda, r.model.bias);
        for (int j = 0; j < 2; ++j) {
            Eigen::VectorXd up = r.model.lambda, down = r.model.lambda;
            up(j) += 1e-5;
            down(j) -= 1e-5;
            CHECK(std::abs((objective(up, r.model.bias) - objective(down, r.model.bias)) / 2e-5) < 1e-4);
        }
        CHECK(std::abs((objective(r.model.lambda, r.model.bias + 1e-5) - objective(r.model.lambda, r.model.bias - 1e-5)) / 2e-5) < 1e-4);
        CHECK(base <= r.initial_loss);
    }
}

TEST_CASE("rank_descending is stable and rank based") {
    Eigen::VectorXd s(6);
    s << 0.5, 2.0, 0.5, -1.0, 2.0, 0.5;
    CHECK(rank_descending(s) == std::vector<std::size_t>{1, 4, 0, 2, 5, 3});
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd v(30);
        for (int i = 0; i < 30; ++i) v(i) = std::round(g(rng) * 3) / 3;
        const Eigen::VectorXd t = (v.array() * 2.0).exp() + 7.0;
        CHECK(rank_descending(v) == rank_descending(t));
    }
}

TEST_CASE("select_pseudo_labels counts and disjointness") {
    std::mt19937_64 rng(7);
    const auto pos = gaussian_rows(rng, 8, 4, 3.0);
    SUBCASE("N_u=20 selects one of each") {
        const auto unl = gaussian_rows(rng, 20, 4, 0.0, 2.0);
        const auto sel = select_pseudo_labels(unl, candidates(20), pos, SelectionConfig{});
        REQUIRE(sel.positive_rows.size() == 1);
        REQUIRE(sel.negative_rows.size() == 1);
        CHECK(sel.positive_rows[0] != sel.negative_rows[0]);
        Eigen::Index best = 0;
        sel.positive_scores.maxCoeff(&best);
        CHECK(sel.positive_rows[0] == static_cast<std::size_t>(best));
        CHECK(sel.positive_centers[0].center.x == static_cast<double>(best));
    }
    SUBCASE("N_u=5 selects no positives") {
        const auto unl = gaussian_rows(rng, 5, 4, 0.0);
        const auto sel = select_pseudo_labels(unl, candidates(5), pos, SelectionConfig{});
        CHECK(sel.positive_rows.empty());
        CHECK(sel.negative_rows.empty());
    }
    SUBCASE("rows chosen by both rankers are dropped from both") {
        const auto unl = gaussian_rows(rng, 40, 4, 0.0, 2.0);
        SelectionConfig c;
        c.alpha = 0.5;
        c.beta = 0.5;
        const auto sel = select_pseudo_labels(unl, candidates(40), pos, c);
        CHECK(sel.positive_rows.size() <= 20);
        for (auto r : sel.positive_rows) {
            CHECK(std::find(sel.negative_rows.begin(), sel.negative_rows.end(), r) == sel.negative_rows.end());
        }
    }
    SUBCASE("selection is reproducible") {
        const auto unl = gaussian_rows(rng, 60, 4, 0.0, 2.0);
        SelectionConfig c;
        c.alpha = 0.2;
        c.beta = 0.2;
        const auto a = select_pseudo_labels(unl, candidates(60), pos, c);
        const auto b = select_pseudo_labels(unl, candidates(60), pos, c);
        CHECK(a.positive_rows == b.positive_rows);
        CHECK(a.negative_rows == b.negative_rows);
    }
    SUBCASE("original_bottom reads the forward ranking from the bottom") {
        const auto unl = gaussian_rows(rng, 40, 4, 0.0, 2.0);
        SelectionConfig c;
        c.alpha = 0.1;
        c.beta = 0.1;
        c.negative_selection = NegativeSelection::original_bottom;
        const auto sel = select_pseudo_labels(unl, candidates(40), pos, c);
        const auto order = rank_descending(sel.positive_scores);
        REQUIRE(sel.negative_rows.size() == 4);
        CHECK(std::is_permutation(sel.negative_rows.begin(), sel.negative_rows.end(), order.end() - 4));
    }
}

TEST_CASE("ranked list format") {
    const auto c = candidates(3);
    Eigen::VectorXd s(3);
    s << 0.5, 2.0, -1.0;
    CHECK(format_ranked_list(c, s) == "rank,x,y,score\n1,1,0,2\n2,0,0,0.5\n3,2,0,-1\n");
}

TEST_CASE("match_points examples") {
    const std::vector<Point2> a{{1, 2}, {5, 5}, {9, 1}};
    SUBCASE("identity") {
        const auto r = match_points(a, a, 15);
        CHECK(r.tp == 3);
        CHECK(r.fp == 0);
        CHECK(r.fn == 0);
        CHECK(r.total_distance() == 0.0);
    }
    SUBCASE("the closer of two detections is matched") {
        const std::vector<Point2> gt{{0, 0}}, det{{3, 0}, {4, 0}};
        const auto r = match_points(det, gt, 15);
        REQUIRE(r.pairs.size() == 1);
        CHECK(r.pairs[0].detection == 0);
        CHECK(r.tp == 1);
        CHECK(r.fp == 1);
        CHECK(r.fn == 0);
    }
    SUBCASE("beyond the threshold") {
        const std::vector<Point2> gt{{0, 0}}, det{{16, 0}};
        const auto r = match_points(det, gt, 15);
        CHECK(r.pairs.empty());
        CHECK(r.fp == 1);
        CHECK(r.fn == 1);
    }
    SUBCASE("cardinality wins over distance") {
        // Greedy takes the 1 px pair and strands both others.
        const std::vector<Point2> det{{0, 0}, {10, 0}}, gt{{9, 0}, {19, 0}};
        const auto opt = match_points(det, gt, 10);
        CHECK(opt.tp == 2);
        const auto greedy = match_points(det, gt, 10, MatchMethod::greedy);
        CHECK(greedy.tp == 1);
    }
    SUBCASE("empty inputs") {
        const auto r = match_points({}, {}, 15);
        CHECK(r.tp == 0);
        CHECK(r.prf.f_score == 0.0);
    }
}

TEST_CASE("match_points equals brute-force enumeration") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 30.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Point2> det(rng() % 8), gt(rng() % 8);
        for (auto& p : det) p = {u(rng), u(rng)};
        for (auto& p : gt) p = {u(rng), u(rng)};
        const double thr = 5.0 + static_cast<double>(rng() % 10);
        const auto r = match_points(det, gt, thr);
        const auto best = oracle::best_matching(det, gt, thr);
        CHECK(r.tp == best.cardinality);
        CHECK(r.total_distance() == doctest::Approx(best.total_distance).epsilon(1e-9));

        // Swapping the roles swaps fp and fn.
        const auto s = match_points(gt, det, thr);
        CHECK(s.tp == r.tp);
        CHECK(s.fp == r.fn);
        CHECK(s.fn == r.fp);
    }
}

TEST_CASE("compute_prf") {
    const auto a = compute_prf(1, 1, 0);
    CHECK(a.precision == 0.5);
    CHECK(a.recall == 1.0);
    CHECK(a.f_score == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    const auto z = compute_prf(0, 0, 0);
    CHECK(z.precision == 0.0);
    CHECK(z.recall == 0.0);
    CHECK(z.f_score == 0.0);
    const auto b = compute_prf(0, 3, 0);
    CHECK(b.f_score == 0.0);
}

TEST_CASE("reference F column agrees with its precision and recall") {
    for (const auto* table : {&oracle::kTrainTable, &oracle::kTestTable}) {
        for (const auto& row : *table) {
            const double f = 2 * row.precision * row.recall / (row.precision + row.recall);
            CHECK(std::abs(f - row.f_score) <= 0.001);
        }
    }
}
