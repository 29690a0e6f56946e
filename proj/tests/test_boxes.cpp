#include "doctest_torch.hpp"

#include <chrono>
#include <set>

#include "anogen/boxes/boxes.hpp"
#include "anogen/errors.hpp"
#include "anogen/random.hpp"
#include "helpers.hpp"

using namespace anogen;
using torch::indexing::Slice;

namespace {

ForegroundMask full(std::int64_t h, std::int64_t w) { return {torch::ones({h, w}), ForegroundMethod::full_frame, false}; }

bool satisfies(const BoxMask& b, const BoxConfig& c, const ForegroundMask& fg) {
    const double eps = 1e-12;
    return b.width() >= c.min_size - eps && b.width() <= c.max_size + eps && b.height() >= c.min_size - eps &&
           b.height() <= c.max_size + eps && b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0 &&
           overlap_fraction(b, fg) >= c.min_overlap;
}

}  // namespace

TEST_CASE("overlap fraction hand cases on a 10x10 grid") {
    CHECK(overlap_fraction({0.2, 0.2, 0.6, 0.6}, full(10, 10)) == 1.0);

    auto left = torch::zeros({10, 10});
    left.index_put_({Slice(), Slice(0, 5)}, 1.0);
    ForegroundMask fg{left, ForegroundMethod::threshold, false};
    CHECK(overlap_fraction({0.6, 0.0, 1.0, 1.0}, fg) == 0.0);
    CHECK(overlap_fraction({0.25, 0.0, 0.75, 1.0}, fg) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(overlap_iou({0.0, 0.0, 0.5, 1.0}, fg) == doctest::Approx(1.0));
}

TEST_CASE("box rasterization always sets at least one pixel") {
    BoxMask tiny{0.501, 0.501, 0.502, 0.502};
    for (std::int64_t s : {1, 3, 10, 64}) CHECK(tiny.rasterize(s, s).sum().item<double>() >= 1.0);
    CHECK(BoxMask{}.rasterize(7, 5).sum().item<double>() == 35.0);
    CHECK_THROWS(BoxMask{0.5, 0.2, 0.4, 0.6}.validate());
}

TEST_CASE("10,000 draws with the hazelnut-hole config satisfy every constraint") {
    auto table = CategoryBoxTable::builtin();
    auto cfg = table.lookup("hazelnut", "hole");
    CHECK(cfg.min_size == 0.1);
    CHECK(cfg.max_size == 0.5);
    CHECK(cfg.min_overlap == 0.5);

    auto fg = full(64, 64);
    Rng rng(17);
    const auto start = std::chrono::steady_clock::now();
    int valid = 0;
    for (int i = 0; i < 10000; ++i) valid += satisfies(sample_box(fg, cfg, rng), cfg, fg);
    CHECK(valid == 10000);
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(10));
}

TEST_CASE("draws respect the overlap rule on a partial foreground") {
    auto m = torch::zeros({48, 48});
    m.index_put_({Slice(10, 40), Slice(8, 30)}, 1.0);
    ForegroundMask fg{m, ForegroundMethod::threshold, false};
    BoxConfig cfg;
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) CHECK(satisfies(sample_box(fg, cfg, rng), cfg, fg));
}

TEST_CASE("size range [1, 1] forces the full-frame box") {
    BoxConfig cfg;
    cfg.min_size = 1.0;
    cfg.max_size = 1.0;
    Rng rng(1);
    CHECK(sample_box(full(32, 32), cfg, rng) == BoxMask{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("box centres are diverse") {
    BoxConfig cfg;
    Rng rng(5);
    std::set<int> cells;
    auto fg = full(64, 64);
    for (int i = 0; i < 1000; ++i) {
        auto b = sample_box(fg, cfg, rng);
        const int cx = std::min(9, static_cast<int>((b.x0 + b.x1) / 2 * 10));
        const int cy = std::min(9, static_cast<int>((b.y0 + b.y1) / 2 * 10));
        cells.insert(cy * 10 + cx);
    }
    CHECK(cells.size() >= 50);
}

TEST_CASE("box sampling is deterministic per seed") {
    BoxConfig cfg;
    Rng a(9), b(9);
    for (int i = 0; i < 100; ++i) CHECK(sample_box(full(32, 32), cfg, a) == sample_box(full(32, 32), cfg, b));
}

TEST_CASE("an exhausted attempt budget names the category") {
    auto m = torch::zeros({64, 64});
    m.index_put_({0, 0}, 1.0);
    BoxConfig cfg;
    cfg.label = "hazelnut/hole";
    cfg.max_attempts = 50;
    Rng rng(1);
    try {
        sample_box({m, ForegroundMethod::threshold, false}, cfg, rng);
        FAIL("expected a sampling error");
    } catch (const SamplingError& e) {
        CHECK(std::string(e.what()).find("hazelnut/hole") != std::string::npos);
    }
}

TEST_CASE("threshold foreground covers a bright disk") {
    const int n = 64;
    auto yy = torch::arange(n, torch::kFloat).view({n, 1});
    auto xx = torch::arange(n, torch::kFloat).view({1, n});
    auto disk = ((yy - 30).pow(2) + (xx - 34).pow(2) <= 15.0 * 15.0).to(torch::kFloat);
    auto image = (0.1 + 0.7 * disk).unsqueeze(0).expand({3, n, n}).contiguous();
    for (auto method : {ForegroundMethod::threshold, ForegroundMethod::grabcut}) {
        auto fg = extract_foreground(image, method);
        CHECK_FALSE(fg.fell_back);
        const double covered = (fg.mask * disk).sum().item<double>() / disk.sum().item<double>();
        CHECK(covered >= 0.95);
    }
}

TEST_CASE("a uniform image falls back to the full frame") {
    auto fg = extract_foreground(torch::full({3, 16, 16}, 0.5), ForegroundMethod::threshold);
    CHECK(fg.fell_back);
    CHECK(fg.mask.sum().item<double>() == 256.0);
}

TEST_CASE("texture categories use the full frame") {
    auto table = CategoryBoxTable::builtin();
    for (const char* cat : {"carpet", "grid", "leather", "tile", "wood"}) {
        CHECK(table.lookup(cat, "any").foreground == ForegroundMethod::full_frame);
    }
    auto fg = extract_foreground(torch::rand({3, 16, 16}), ForegroundMethod::full_frame);
    CHECK(fg.mask.sum().item<double>() == 256.0);
    CHECK_FALSE(fg.fell_back);
}

TEST_CASE("box table file round trip and invalid configs") {
    auto table = CategoryBoxTable::builtin();
    BoxConfig c;
    c.min_size = 0.2;
    c.max_size = 0.3;
    c.overlap_rule = OverlapRule::iou;
    table.set("bottle/crack", c);
    testing::TempDir dir("boxes");
    table.save(dir.path() / "boxes.json");
    auto loaded = CategoryBoxTable::from_file(dir.path() / "boxes.json");
    auto l = loaded.lookup("bottle", "crack");
    CHECK(l.min_size == 0.2);
    CHECK(l.max_size == 0.3);
    CHECK(l.overlap_rule == OverlapRule::iou);
    CHECK(loaded.lookup("bottle", "scratch").min_size == 0.1);

    BoxConfig bad;
    bad.min_size = 0.6;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = BoxConfig{};
    bad.min_overlap = 1.5;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}
