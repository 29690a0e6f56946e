#include "doctest_torch.hpp"

#include <numeric>

#include "anogen/errors.hpp"
#include "anogen/metrics/evaluate.hpp"
#include "anogen/metrics/metrics.hpp"
#include "anogen/random.hpp"
#include "helpers.hpp"

using namespace anogen;

namespace {

std::vector<TestImage> toy_test_set(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TestImage> out;
    for (int i = 0; i < n; ++i) {
        TestImage t;
        t.id = "img" + std::to_string(i);
        t.category = i % 3 == 0 ? "b" : "a";
        t.image = rng.rand({3, 8, 8});
        t.mask = torch::zeros({8, 8});
        t.anomaly_type = "good";
        if (i % 2 == 1) {
            t.anomaly_type = "spot";
            t.mask.index_put_({torch::indexing::Slice(1, 4), torch::indexing::Slice(2, 5)}, 1.0);
        }
        out.push_back(t);
    }
    return out;
}

ScoreMap perfect_score(const TestImage& t) { return {t.mask.clone(), t.anomalous() ? 1.0 : 0.0}; }

}  // namespace

TEST_CASE("worked four-point example") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<std::uint8_t> l{0, 0, 1, 1};
    CHECK(auroc(s, l) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(aupr(s, l) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("metrics agree with exhaustive oracles on random instances") {
    Rng rng(42);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 64));
        std::vector<double> s(n);
        std::vector<std::uint8_t> l(n);
        const bool coarse = trial % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? static_cast<double>(rng.uniform_int(0, 5)) / 5.0 : rng.uniform();
            l[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        l[0] = 1;
        l[1] = 0;
        CHECK(std::abs(auroc(s, l) - testing::brute_auroc(s, l)) < 1e-9);
        CHECK(std::abs(aupr(s, l) - testing::brute_aupr(s, l)) < 1e-9);
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(40);
        std::vector<double> t(40);
        std::vector<std::uint8_t> l(40);
        for (std::size_t i = 0; i < 40; ++i) {
            s[i] = static_cast<double>(rng.uniform_int(0, 9)) / 9.0;
            t[i] = std::exp(3.0 * s[i]) - 7.0;
            l[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        l[0] = 1;
        l[1] = 0;
        CHECK(auroc(s, l) == auroc(t, l));
        CHECK(aupr(s, l) == aupr(t, l));
    }
}

TEST_CASE("label flip with negated scores is dual") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(30);
        std::vector<double> neg(30);
        std::vector<std::uint8_t> l(30);
        std::vector<std::uint8_t> flipped(30);
        for (std::size_t i = 0; i < 30; ++i) {
            s[i] = static_cast<double>(rng.uniform_int(0, 6));
            neg[i] = -s[i];
            l[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        l[0] = 1;
        l[1] = 0;
        for (std::size_t i = 0; i < 30; ++i) flipped[i] = 1 - l[i];
        CHECK(std::abs(auroc(s, l) - auroc(neg, flipped)) < 1e-9);
        CHECK(std::abs(auroc(s, l) + auroc(s, flipped) - 1.0) < 1e-9);
    }
}

TEST_CASE("undefined metrics raise") {
    const std::vector<double> s{0.1, 0.2};
    CHECK_THROWS_AS(auroc(s, std::vector<std::uint8_t>{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(auroc(s, std::vector<std::uint8_t>{0, 0}), UndefinedMetricError);
    CHECK_THROWS_AS(aupr(s, std::vector<std::uint8_t>{0, 0}), UndefinedMetricError);
    CHECK_NOTHROW(aupr(s, std::vector<std::uint8_t>{1, 1}));
    CHECK_THROWS_AS(auroc(s, std::vector<std::uint8_t>{1}), ShapeError);
}

TEST_CASE("curves run from the highest threshold to the full set") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<std::uint8_t> l{0, 0, 1, 1};
    auto roc = roc_curve(s, l);
    REQUIRE(roc.size() == 4);
    CHECK(roc.front().threshold == 0.8);
    CHECK(roc.back().false_positive_rate == 1.0);
    CHECK(roc.back().true_positive_rate == 1.0);
    auto pr = pr_curve(s, l);
    REQUIRE(pr.size() == 4);
    CHECK(pr.front().precision == 1.0);
    CHECK(pr.back().recall == 1.0);
    CHECK(pr.back().precision == 0.5);
}

TEST_CASE("a detector matching ground truth scores 1.0 everywhere") {
    auto test = toy_test_set(12, 1);
    std::vector<ScoreMap> scores;
    for (const auto& t : test) scores.push_back(perfect_score(t));
    auto r = evaluate_scores(scores, test, true);
    CHECK(r.overall.image_auroc == 1.0);
    CHECK(r.overall.image_aupr == 1.0);
    CHECK(r.overall.pixel_auroc == 1.0);
    CHECK(r.overall.pixel_aupr == 1.0);
    CHECK(r.overall.images == 12);
    CHECK(r.overall.anomalous_images == 6);
    CHECK(r.overall.pixels == 12 * 64);
    CHECK(r.overall.anomalous_pixels == 6 * 9);
    CHECK(r.per_category.size() == 2);
    CHECK_FALSE(r.pixel_roc.empty());
    CHECK_FALSE(r.pixel_pr.empty());
}

TEST_CASE("pooled metrics are independent of test image order") {
    auto test = toy_test_set(12, 2);
    Rng rng(5);
    std::vector<ScoreMap> scores;
    for (std::size_t i = 0; i < test.size(); ++i) scores.push_back({rng.rand({8, 8}), rng.uniform()});
    auto a = evaluate_scores(scores, test);
    std::vector<std::size_t> order(test.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<ScoreMap> s2;
    std::vector<TestImage> t2;
    for (auto i : order) {
        s2.push_back(scores[i]);
        t2.push_back(test[i]);
    }
    auto b = evaluate_scores(s2, t2);
    CHECK(a.overall.image_auroc == b.overall.image_auroc);
    CHECK(a.overall.image_aupr == b.overall.image_aupr);
    CHECK(a.overall.pixel_auroc == b.overall.pixel_auroc);
    CHECK(a.overall.pixel_aupr == b.overall.pixel_aupr);
}

TEST_CASE("a random detector is near chance") {
    double image_sum = 0.0;
    double pixel_sum = 0.0;
    const int seeds = 10;
    for (int seed = 0; seed < seeds; ++seed) {
        auto test = toy_test_set(200, 100 + static_cast<std::uint64_t>(seed));
        Rng rng(static_cast<std::uint64_t>(seed));
        std::vector<ScoreMap> scores;
        for (std::size_t i = 0; i < test.size(); ++i) scores.push_back({rng.rand({8, 8}), rng.uniform()});
        auto r = evaluate_scores(scores, test);
        image_sum += r.overall.image_auroc;
        pixel_sum += r.overall.pixel_auroc;
    }
    CHECK(std::abs(image_sum / seeds - 0.5) < 0.05);
    CHECK(std::abs(pixel_sum / seeds - 0.5) < 0.05);
}

TEST_CASE("evaluation checks its inputs") {
    auto test = toy_test_set(4, 3);
    std::vector<ScoreMap> scores;
    for (const auto& t : test) scores.push_back(perfect_score(t));
    scores.pop_back();
    CHECK_THROWS(evaluate_scores(scores, test));
    CHECK_THROWS(evaluate_scores({}, {}));
}
