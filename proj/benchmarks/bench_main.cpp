#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/detector/detector.hpp"
#include "anogen/detector/losses.hpp"
#include "anogen/detector/synthetic.hpp"
#include "anogen/diffusion/sampling.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/metrics/metrics.hpp"
#include "anogen/random.hpp"
#include "helpers.hpp"

using namespace anogen;

namespace {

void BM_Auroc(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        l[i] = rng.bernoulli(0.05) ? 1 : 0;
    }
    l[0] = 1;
    l[1] = 0;
    for (auto _ : state) benchmark::DoNotOptimize(auroc(s, l));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auroc)->Arg(1 << 12)->Arg(1 << 17);

void BM_Aupr(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        l[i] = rng.bernoulli(0.05) ? 1 : 0;
    }
    l[0] = 1;
    for (auto _ : state) benchmark::DoNotOptimize(aupr(s, l));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Aupr)->Arg(1 << 12)->Arg(1 << 17);

void BM_SampleBox(benchmark::State& state) {
    ForegroundMask fg{torch::ones({64, 64}), ForegroundMethod::full_frame, false};
    BoxConfig cfg;
    Rng rng(3);
    for (auto _ : state) benchmark::DoNotOptimize(sample_box(fg, cfg, rng));
}
BENCHMARK(BM_SampleBox);

void BM_BlendLatents(benchmark::State& state) {
    Rng rng(4);
    Latent a{rng.randn({4, 24, 24})};
    Latent b{rng.randn({4, 24, 24})};
    auto m = (rng.rand({24, 24}) > 0.5).to(torch::kFloat);
    for (auto _ : state) benchmark::DoNotOptimize(blend_latents(a, b, m).data);
}
BENCHMARK(BM_BlendLatents);

void BM_DenoiseStep(benchmark::State& state) {
    torch::NoGradGuard no_grad;
    auto backbone = testing::tiny_backbone(16, 50);
    Rng rng(5);
    Latent z{rng.randn({3, 24, 24})};
    auto cond = rng.randn({16});
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            denoise_step(z, 25, cond, *backbone.denoiser, backbone.schedule, rng, Sampler::deterministic).data);
    }
}
BENCHMARK(BM_DenoiseStep)->Unit(benchmark::kMillisecond);

void BM_MaskedLossBackward(benchmark::State& state) {
    auto backbone = testing::tiny_backbone(16, 50);
    Rng rng(6);
    auto z0 = rng.randn({1, 3, 24, 24});
    auto eps = rng.randn({1, 3, 24, 24});
    auto mask = (rng.rand({1, 24, 24}) > 0.7).to(torch::kFloat);
    auto t = torch::full({1}, 20, torch::kLong);
    for (auto _ : state) {
        auto v = rng.randn({16}).set_requires_grad(true);
        masked_ldm_loss(z0, mask, t, eps, v, *backbone.denoiser, backbone.schedule)->backward();
        benchmark::DoNotOptimize(v.grad());
    }
}
BENCHMARK(BM_MaskedLossBackward)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
    Rng rng(7);
    auto a = rng.rand({8, 3, 48, 48});
    auto b = rng.rand({8, 3, 48, 48});
    for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

void BM_PerlinRegion(benchmark::State& state) {
    SyntheticConfig cfg;
    Rng rng(8);
    for (auto _ : state) benchmark::DoNotOptimize(perlin_region(48, 48, cfg, rng));
}
BENCHMARK(BM_PerlinRegion);

void BM_DetectorForward(benchmark::State& state) {
    torch::NoGradGuard no_grad;
    torch::manual_seed(9);
    DraemDetector det;
    Rng rng(9);
    auto x = rng.rand({state.range(0), 3, 48, 48});
    for (auto _ : state) benchmark::DoNotOptimize(det.net()->forward(x).anomaly);
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DetectorForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
