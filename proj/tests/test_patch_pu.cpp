#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "celldet/errors.hpp"
#include "celldet/patch_sampler.hpp"
#include "celldet/pu_learner.hpp"
#include "celldet/rng.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace celldet;

TEST_CASE("extract_patch") {
    std::mt19937_64 rng(1);
    const ImageRecord img{"im", testing::random_grid(rng, 20, 30), ""};
    SUBCASE("interior crop is an exact copy") {
        const auto p = extract_patch(img, {15, 10}, 7);
        REQUIRE(p.pixels.shape() == Shape{7, 7});
        for (int y = 0; y < 7; ++y) {
            for (int x = 0; x < 7; ++x) CHECK(p.pixels(y, x) == img.pixels(7 + y, 12 + x));
        }
        CHECK(p.image_id == "im");
    }
    SUBCASE("corner crop is zero padded") {
        const auto p = extract_patch(img, {0, 0}, 5);
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) {
                if (y < 2 || x < 2) {
                    CHECK(p.pixels(y, x) == 0.0);
                } else {
                    CHECK(p.pixels(y, x) == img.pixels(y - 2, x - 2));
                }
            }
        }
    }
    SUBCASE("constant image") {
        const ImageRecord flat{"c", RealGrid(9, 9, 0.7), ""};
        for (double v : extract_patch(flat, {4, 4}, 3).pixels) CHECK(v == 0.7);
    }
    SUBCASE("subpixel centers round to the nearest pixel") {
        CHECK(extract_patch(img, {15.4, 9.6}, 3).pixels == extract_patch(img, {15, 10}, 3).pixels);
    }
    SUBCASE("invalid sizes and centers") {
        CHECK_THROWS_AS(extract_patch(img, {5, 5}, 4), InvalidArgument);
        CHECK_THROWS_AS(extract_patch(img, {5, 5}, 1), InvalidArgument);
        CHECK_THROWS_AS(extract_patch(img, {30, 5}, 3), BoundsError);
    }
}

TEST_CASE("partition_patches examples") {
    const ImageRecord img{"im", RealGrid(64, 64, 0.2), ""};
    const AnnotationSet ann{"im", {{10, 10, Source::human}}};
    SUBCASE("matched detection is not unlabeled") {
        const DetectionResult det{"im", {{10, 10, 200}, {40, 40, 150}}};
        const auto part = partition_patches(det, ann, img, 9, 15);
        REQUIRE(part.positives.size() == 1);
        CHECK(part.positives[0].center == Point2{10, 10});
        REQUIRE(part.unlabeled.size() == 1);
        CHECK(part.unlabeled[0].center == Point2{40, 40});
    }
    SUBCASE("no detections") {
        const auto part = partition_patches({"im", {}}, ann, img, 9, 15);
        CHECK(part.positives.size() == 1);
        CHECK(part.unlabeled.empty());
    }
    SUBCASE("detection at distance 10 is excluded") {
        const auto part = partition_patches({"im", {{20, 10, 200}}}, ann, img, 9, 15);
        CHECK(part.unlabeled.empty());
    }
}

TEST_CASE("partition_patches properties") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> coord(0, 63);
    const ImageRecord img{"im", RealGrid(64, 64, 0.2), ""};
    for (int trial = 0; trial < 50; ++trial) {
        AnnotationSet ann{"im", {}};
        for (int i = 0; i < 4; ++i) {
            const Source s = static_cast<Source>(rng() % 3);
            ann.points.push_back({static_cast<double>(coord(rng)), static_cast<double>(coord(rng)), s});
        }
        DetectionResult det{"im", {}};
        for (int i = 0; i < 10; ++i) det.peaks.push_back({coord(rng), coord(rng), 200});
        const double radius = 3.0 + trial % 10;
        const auto part = partition_patches(det, ann, img, 9, radius);
        const auto positive = ann.positive_positions();
        CHECK(part.positives.size() == positive.size());
        for (const auto& p : part.positives) {
            CHECK(p.label_state != LabelState::unlabeled);
            CHECK(std::count(positive.begin(), positive.end(), p.center) >= 1);
        }
        for (const auto& u : part.unlabeled) {
            CHECK(u.label_state == LabelState::unlabeled);
            CHECK(std::any_of(det.peaks.begin(), det.peaks.end(), [&](const Peak& k) { return k.position() == u.center; }));
            for (const auto& p : part.positives) CHECK(distance(p.center, u.center) > radius);
        }
    }
}

TEST_CASE("pointwise_loss examples") {
    CHECK(pointwise_loss(1.0, +1, SurrogateLoss::zero_one) == 0.0);
    CHECK(pointwise_loss(-2.0, +1, SurrogateLoss::zero_one) == 1.0);
    CHECK(pointwise_loss(0.0, -1, SurrogateLoss::zero_one) == 0.5);
    CHECK(pointwise_loss(0.0, +1, SurrogateLoss::sigmoid) == 0.5);
    CHECK(pointwise_loss(0.0, -1, SurrogateLoss::sigmoid) == 0.5);
    CHECK(pointwise_loss(std::log(3.0), +1, SurrogateLoss::sigmoid) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("pu_risk examples") {
    const auto z = SurrogateLoss::zero_one;
    CHECK(pu_risk(std::vector<double>{1}, std::vector<double>{-1}, 0.5, z) == 0.0);
    CHECK(pu_risk(std::vector<double>{-1}, std::vector<double>{1}, 0.5, z) == 1.5);
    CHECK(pu_risk(std::vector<double>{1, 1}, std::vector<double>{-1}, 0.8, z) == 0.0);
    CHECK_THROWS_AS(pu_risk(std::vector<double>{}, std::vector<double>{1}, 0.5, z), InvalidArgument);
    CHECK_THROWS_AS(pu_risk(std::vector<double>{1}, std::vector<double>{1}, 1.0, z), InvalidArgument);
}

TEST_CASE("pu_risk equals term-by-term summation") {
    std::mt19937_64 rng(3);
    int clamped = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto inst = testing::random_pu_instance(rng, trial);
        for (bool sig : {false, true}) {
            bool c = false;
            const double ref = oracle::pu_risk(inst.scores_p, inst.scores_u, inst.prior, sig, &c);
            const auto kind = sig ? SurrogateLoss::sigmoid : SurrogateLoss::zero_one;
            CHECK(std::abs(pu_risk(inst.scores_p, inst.scores_u, inst.prior, kind) - ref) <= 1e-9);
            clamped += c;
        }
    }
    CHECK(clamped >= 10);
}

TEST_CASE("pu_risk is non-negative and reduces to the unlabeled risk as the prior vanishes") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> prior(0.01, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> sp(1 + rng() % 8), su(1 + rng() % 8);
        for (auto& v : sp) v = n(rng);
        for (auto& v : su) v = n(rng);
        for (auto kind : {SurrogateLoss::zero_one, SurrogateLoss::sigmoid}) {
            CHECK(pu_risk(sp, su, prior(rng), kind) >= 0.0);
            double ru = 0;
            for (double s : su) ru += pointwise_loss(s, -1, kind);
            ru /= static_cast<double>(su.size());
            CHECK(std::abs(pu_risk(sp, su, 1e-6, kind) - std::max(0.0, ru)) < 1e-5);
        }
    }
}

TEST_CASE("pu_risk_gradient matches central differences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_real_distribution<double> prior(0.05, 0.95);
    int clamped = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> sp(2 + rng() % 6), su(2 + rng() % 6);
        for (auto& v : sp) v = n(rng) + (trial % 4 == 0 ? 4.0 : 0.0);
        for (auto& v : su) v = n(rng) - (trial % 4 == 0 ? 4.0 : 0.0);
        const double pi = prior(rng);
        const auto g = pu_risk_gradient(sp, su, pi);
        CHECK(g.risk == doctest::Approx(pu_risk(sp, su, pi, SurrogateLoss::sigmoid)).epsilon(1e-14));
        clamped += g.clamped;
        std::vector<double> all = sp;
        all.insert(all.end(), su.begin(), su.end());
        auto f = [&](const std::vector<double>& v) {
            const std::vector<double> a(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(sp.size()));
            const std::vector<double> b(v.begin() + static_cast<std::ptrdiff_t>(sp.size()), v.end());
            return pu_risk(a, b, pi, SurrogateLoss::sigmoid);
        };
        for (std::size_t i = 0; i < all.size(); ++i) {
            const double analytic = i < sp.size() ? g.d_scores_p[i] : g.d_scores_u[i - sp.size()];
            const double fd = testing::central_difference(f, all, i, 1e-6);
            CHECK(std::abs(analytic - fd) <= 1e-4 * std::max(1e-3, std::abs(fd)));
        }
    }
    CHECK(clamped > 0);
}

namespace {

Patch make_patch(bool blob, std::mt19937_64& rng, int size = 13) {
    std::normal_distribution<double> noise(0.0, 0.03);
    Patch p;
    p.image_id = blob ? "blob" : "flat";
    p.pixels = RealGrid(size, size);
    const double c = size / 2;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double d2 = (x - c) * (x - c) + (y - c) * (y - c);
            p.pixels(y, x) = std::clamp(0.1 + (blob ? 0.6 * std::exp(-d2 / (2 * 2.5 * 2.5)) : 0.0) + noise(rng), 0.0, 1.0);
        }
    }
    return p;
}

}  // namespace

TEST_CASE("train_pu contracts") {
    std::mt19937_64 rng(6);
    std::vector<Patch> pos, unl;
    for (int i = 0; i < 12; ++i) pos.push_back(make_patch(true, rng));
    for (int i = 0; i < 40; ++i) unl.push_back(make_patch(i % 10 < 3, rng));

    SUBCASE("zero learning rate returns the initialization") {
        PUConfig c;
        c.learning_rate = 0.0;
        c.epochs = 2;
        c.seed = 4;
        const auto r = train_pu(pos, unl, c);
        CHECK(r.classifier.backbone()->flat_parameters() ==
              PatchBackbone(13, c.feature_dim, derive_seed(4, "pu-backbone")).flat_parameters());
        CHECK(r.classifier.head_bias() == 0.0f);
    }
    SUBCASE("same seed, same parameters") {
        PUConfig c;
        c.epochs = 3;
        c.seed = 11;
        c.batch_size = 16;
        const auto a = train_pu(pos, unl, c);
        const auto b = train_pu(pos, unl, c);
        CHECK(a.classifier.flat_parameters() == b.classifier.flat_parameters());
        CHECK(a.epoch_risk == b.epoch_risk);
    }
    SUBCASE("zero-one training is rejected") {
        PUConfig c;
        c.surrogate = SurrogateLoss::zero_one;
        CHECK_THROWS_AS(train_pu(pos, unl, c), InvalidArgument);
    }
}

TEST_CASE("train_pu lowers the zero-one PU risk on separable patches") {
    std::mt19937_64 rng(7);
    std::vector<Patch> pos, unl;
    for (int i = 0; i < 10; ++i) pos.push_back(make_patch(true, rng, 9));
    for (int i = 0; i < 30; ++i) unl.push_back(make_patch(i % 10 < 3, rng, 9));
    PUConfig c;
    c.prior = 0.3;
    c.epochs = 300;
    c.batch_size = 30;
    c.feature_dim = 8;
    c.seed = 2;
    auto zero_one_risk = [&](const PUClassifier& clf) {
        return pu_risk(clf.scores(pos), clf.scores(unl), c.prior, SurrogateLoss::zero_one);
    };
    PUConfig frozen = c;
    frozen.learning_rate = 0.0;
    frozen.epochs = 0;
    const double before = zero_one_risk(train_pu(pos, unl, frozen).classifier);
    const auto trained = train_pu(pos, unl, c);
    const double after = zero_one_risk(trained.classifier);
    CHECK(after < before);
    CHECK(trained.epoch_risk.back() < trained.epoch_risk.front());
}

TEST_CASE("extract_features is a pure row-wise map") {
    std::mt19937_64 rng(8);
    std::vector<Patch> pos, unl;
    for (int i = 0; i < 4; ++i) pos.push_back(make_patch(true, rng));
    for (int i = 0; i < 8; ++i) unl.push_back(make_patch(false, rng));
    PUConfig c;
    c.epochs = 1;
    const auto r = train_pu(pos, unl, c);
    std::vector<Patch> list = unl;
    list.push_back(unl[2]);
    const auto f1 = extract_features(r.extractor, list);
    const auto f2 = extract_features(r.extractor, list);
    CHECK(f1.rows() == 9);
    CHECK(f1.cols() == 32);
    CHECK(f1 == f2);
    CHECK(f1.row(2) == f1.row(8));

    testing::TempDir dir;
    save_extractor(dir / "pu.ckpt", r.classifier);
    const auto back = load_classifier(dir / "pu.ckpt");
    CHECK(back.flat_parameters() == r.classifier.flat_parameters());
    CHECK(back.scores(list) == r.classifier.scores(list));
    CHECK(extract_features(FeatureExtractor(back.backbone()), list) == f1);
}

TEST_CASE("PatchBackbone needs patches of at least 8 pixels") {
    CHECK_THROWS_AS(PatchBackbone(7, 32, 0), InvalidArgument);
    CHECK_NOTHROW(PatchBackbone(9, 32, 0));
}
