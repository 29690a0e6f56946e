#include "doctest_torch.hpp"

#include "anogen/diffusion/sampling.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/errors.hpp"
#include "anogen/random.hpp"
#include "helpers.hpp"

using namespace anogen;

namespace {

SupportSet small_support(int k, std::int64_t size = 8) {
    SupportSet s;
    s.category = "toy";
    s.anomaly_type = "spot";
    Rng rng(21);
    for (int i = 0; i < k; ++i) {
        auto mask = torch::zeros({size, size});
        mask.index_put_({torch::indexing::Slice(2, 5), torch::indexing::Slice(1 + i % 3, 4 + i % 3)}, 1.0);
        s.records.push_back({rng.rand({3, size, size}), mask, "r" + std::to_string(i)});
    }
    return s;
}

AnomalyEmbedding initial_for(const Backbone& b) {
    return init_embedding("defect", HashConditionEncoder(b.cond_dim()), b.cond_dim());
}

}  // namespace

TEST_CASE("init_embedding copies the token vector and checks its dimension") {
    HashConditionEncoder enc(16);
    auto e = init_embedding("defect", enc, 16);
    CHECK(testing::bitwise_equal(e.v, enc.encode_token("defect")));
    CHECK(e.init_token == "defect");
    CHECK_THROWS_AS(init_embedding("defect", enc, 32), InitializationError);
    CHECK_THROWS_AS(init_embedding("", enc, 16), InitializationError);
}

TEST_CASE("downsample_mask marks a cell iff any pixel of its block is set") {
    auto one = torch::zeros({8, 8});
    one.index_put_({5, 2}, 1.0);
    auto d = downsample_mask(one, 4, 4);
    auto expected = torch::zeros({4, 4});
    expected.index_put_({2, 1}, 1.0);
    CHECK(torch::equal(d, expected));

    auto checker = (torch::arange(8).view({8, 1}) + torch::arange(8).view({1, 8})).remainder(2).to(torch::kFloat);
    CHECK(torch::equal(downsample_mask(checker, 4, 4), torch::ones({4, 4})));
    CHECK(torch::equal(downsample_mask(torch::zeros({8, 8}), 2, 2), torch::zeros({2, 2})));
    CHECK_THROWS_AS(downsample_mask(torch::zeros({8, 8}), 3, 3), ShapeError);
}

TEST_CASE("downsampled mask is the block-wise maximum on random masks") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto mask = (rng.rand({16, 16}) > 0.9).to(torch::kFloat);
        auto d = downsample_mask(mask, 4, 4);
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                auto block = mask.slice(0, y * 4, y * 4 + 4).slice(1, x * 4, x * 4 + 4);
                CHECK(d[y][x].item<float>() == block.max().item<float>());
            }
        }
    }
}

TEST_CASE("masked loss with an all-ones mask equals the plain LDM loss") {
    auto b = testing::tiny_backbone();
    Rng rng(3);
    auto z0 = rng.randn({1, 3, 8, 8});
    auto eps = rng.randn({1, 3, 8, 8});
    auto v = rng.randn({16});
    torch::NoGradGuard no_grad;
    for (int t : {1, 7, 20}) {
        auto tt = torch::full({1}, t, torch::kLong);
        auto masked = masked_ldm_loss(z0, torch::ones({1, 8, 8}), tt, eps, v, *b.denoiser, b.schedule);
        REQUIRE(masked.has_value());
        auto plain = ldm_loss(z0, tt, eps, v, *b.denoiser, b.schedule);
        CHECK(std::abs(masked->item<double>() - plain.item<double>()) < 1e-6);
    }
}

TEST_CASE("masked loss averages only the masked cells") {
    auto s = schedule_from_betas({0.75});
    testing::ConstantDenoiser model(torch::zeros({1, 2, 2, 2}, torch::kDouble), 4);
    auto eps = torch::tensor({1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0}, torch::kDouble).view({1, 2, 2, 2});
    auto mask = torch::tensor({1.0, 0.0, 0.0, 1.0}, torch::kDouble).view({1, 2, 2});
    auto loss = masked_ldm_loss(torch::zeros({1, 2, 2, 2}, torch::kDouble), mask, torch::ones({1}, torch::kLong), eps,
                                torch::zeros({4}, torch::kDouble), model, s);
    const double expected = (1.0 + 16.0 + 25.0 + 64.0) / 4.0;
    CHECK(loss->item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("masked loss is skipped for an empty latent mask") {
    auto b = testing::tiny_backbone();
    SupportRecord r{torch::rand({3, 8, 8}), torch::zeros({8, 8}), "empty"};
    auto loss = masked_ldm_loss(r, 3, Latent{torch::randn({3, 8, 8})}, torch::randn({16}), b);
    CHECK_FALSE(loss.has_value());
}

TEST_CASE("gradient of the masked loss with respect to v matches central differences") {
    torch::manual_seed(5);
    TinyUNetOptions o;
    o.latent_channels = 2;
    o.base_channels = 8;
    o.cond_dim = 6;
    o.attention_dim = 8;
    o.time_dim = 8;
    o.num_timesteps = 10;
    TinyDenoiser model(o);
    model.net()->to(torch::kDouble);
    auto s = make_schedule(10, ScheduleKind::linear, 0.01, 0.2);

    Rng rng(6);
    auto z0 = rng.randn({1, 2, 4, 4}, torch::kDouble);
    auto eps = rng.randn({1, 2, 4, 4}, torch::kDouble);
    auto mask = torch::zeros({1, 4, 4}, torch::kDouble);
    mask.index_put_({0, torch::indexing::Slice(1, 3), torch::indexing::Slice(0, 3)}, 1.0);
    auto t = torch::full({1}, 6, torch::kLong);

    auto v = rng.randn({6}, torch::kDouble).set_requires_grad(true);
    auto loss = *masked_ldm_loss(z0, mask, t, eps, v, model, s);
    loss.backward();
    auto grad = v.grad().clone();

    const double h = 1e-6;
    torch::NoGradGuard no_grad;
    for (int i = 0; i < 6; ++i) {
        auto vp = v.detach().clone();
        auto vm = v.detach().clone();
        vp[i] += h;
        vm[i] -= h;
        const double fp = masked_ldm_loss(z0, mask, t, eps, vp, model, s)->item<double>();
        const double fm = masked_ldm_loss(z0, mask, t, eps, vm, model, s)->item<double>();
        const double numeric = (fp - fm) / (2 * h);
        const double analytic = grad[i].item<double>();
        CAPTURE(i);
        CHECK((testing::relative_error(analytic, numeric) < 1e-3 || std::abs(analytic - numeric) < 1e-9));
    }
}

TEST_CASE("learn_embedding leaves the backbone untouched and moves v") {
    auto b = testing::tiny_backbone();
    auto before = b.denoiser->flat_parameters();
    std::vector<bool> grad_flags;
    for (const auto& p : b.denoiser->parameters()) grad_flags.push_back(p.requires_grad());
    InversionConfig cfg;
    cfg.iterations = 30;
    cfg.learning_rate = 0.02;
    cfg.probe_count = 8;
    Rng rng(1);
    auto init = initial_for(b);
    auto result = learn_embedding(small_support(3), b, init, cfg, rng);
    CHECK(testing::bitwise_equal(before, b.denoiser->flat_parameters()));
    CHECK_FALSE(torch::equal(result.embedding.v, init.v));
    CHECK(result.loss_curve.size() == 30);
    std::size_t i = 0;
    for (const auto& p : b.denoiser->parameters()) CHECK(p.requires_grad() == grad_flags[i++]);
    CHECK(result.embedding.support_fingerprint.size() == 3);
}

TEST_CASE("a single SGD iteration is exactly one gradient step") {
    auto b = testing::tiny_backbone();
    auto support = small_support(1);
    auto init = initial_for(b);
    InversionConfig cfg;
    cfg.iterations = 1;
    cfg.learning_rate = 0.1;
    cfg.optimizer = OptimizerKind::sgd;
    cfg.probe_count = 0;
    Rng rng(12);
    auto result = learn_embedding(support, b, init, cfg, rng);

    Rng train = Rng(12).fork("inversion");
    auto z0 = b.autoencoder->encode(support.records[0].image).data;
    auto t = train.randint(1, b.schedule.T, {1});
    auto eps = train.randn(z0.sizes());
    auto mask = downsample_mask(support.records[0].mask, 8, 8).unsqueeze(0);
    auto v = init.v.clone().set_requires_grad(true);
    auto loss = *masked_ldm_loss(z0, mask, t, eps, v, *b.denoiser, b.schedule);
    loss.backward();
    auto expected = init.v - 0.1 * v.grad();
    CHECK(torch::allclose(result.embedding.v, expected, 1e-6, 1e-7));
    CHECK(result.loss_curve.front() == doctest::Approx(loss.item<double>()));
}

TEST_CASE("learn_embedding is reproducible for a fixed seed") {
    auto b = testing::tiny_backbone();
    InversionConfig cfg;
    cfg.iterations = 10;
    cfg.probe_count = 4;
    Rng r1(4), r2(4);
    auto a = learn_embedding(small_support(2), b, initial_for(b), cfg, r1);
    auto c = learn_embedding(small_support(2), b, initial_for(b), cfg, r2);
    CHECK(testing::bitwise_equal(a.embedding.v, c.embedding.v));
    CHECK(a.loss_curve == c.loss_curve);
}

TEST_CASE("learn_embedding rejects invalid inputs") {
    auto b = testing::tiny_backbone();
    InversionConfig cfg;
    cfg.iterations = 2;
    Rng rng(1);
    CHECK_THROWS_AS(learn_embedding(SupportSet{}, b, initial_for(b), cfg, rng), DataError);
    auto wrong = init_embedding("defect", HashConditionEncoder(8), 8);
    CHECK_THROWS_AS(learn_embedding(small_support(1), b, wrong, cfg, rng), ConfigurationError);
    auto bad = small_support(1);
    bad.records[0].mask.zero_();
    CHECK_THROWS_AS(learn_embedding(bad, b, initial_for(b), cfg, rng), DataError);
    cfg.iterations = 0;
    CHECK_THROWS_AS(learn_embedding(small_support(1), b, initial_for(b), cfg, rng), ParameterError);
}

TEST_CASE("embedding JSON round trip preserves the vector exactly") {
    auto b = testing::tiny_backbone();
    auto e = initial_for(b);
    e.category = "toy";
    e.anomaly_type = "spot";
    e.support_fingerprint = {"00ff", "abcd"};
    testing::TempDir dir("embedding");
    save_embedding(e, dir.path() / "e.json");
    auto loaded = load_embedding(dir.path() / "e.json");
    CHECK(testing::bitwise_equal(loaded.v, e.v));
    CHECK(loaded.id() == e.id());
    CHECK(loaded.support_fingerprint == e.support_fingerprint);
    CHECK(loaded.config.iterations == e.config.iterations);
    CHECK_THROWS(load_embedding(dir.path() / "missing.json"));
}
