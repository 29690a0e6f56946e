// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/detector/losses.hpp"
#include "anogen/diffusion/sampling.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"
#include "anogen/metrics/metrics.hpp"
#include "anogen/pipeline/dataset.hpp"
#include "anogen/pipeline/pipeline.hpp"
#include "helpers.hpp"

using namespace anogen;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Context {
    fs::path work;
    std::vector<std::uint64_t> seeds;
    PipelineConfig base;
    std::optional<BackboneBundle> backbone;
    std::optional<AnomalyEmbedding> embedding;
    std::optional<PreparedDataset> dataset;
    double backbone_seconds = 0.0;

    PipelineConfig config_for(std::uint64_t seed, double mix, double tau, const std::string& name) const {
        auto c = base;
        c.seed = seed;
        c.detector.loss.mix_probability = mix;
        c.detector.loss.tau = tau;
        c.out_dir = (work / "runs" / (name + "-seed" + std::to_string(seed))).string();
        return c;
    }

    const BackboneBundle& toy_backbone() {
        if (!backbone) {
            const auto start = Clock::now();
            backbone = obtain_backbone(base, base.dataset.toy.image_size);
            backbone_seconds = seconds_since(start);
        }
        return *backbone;
    }

    const PreparedDataset& toy_dataset() {
        if (!dataset) {
            auto c = base;
            c.seed = seeds.front();
            dataset = prepare_dataset(c);
        }
        return *dataset;
    }
};

Outcome equation_suite() {
    const auto start = Clock::now();
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };

    Rng rng(1);
    auto a = rng.randn({4, 12, 12});
    auto b = rng.randn({4, 12, 12});
    auto m = (rng.rand({12, 12}) > 0.5).to(torch::kFloat);
    expect(testing::bitwise_equal(blend_latents(Latent{a}, Latent{b}, torch::zeros({12, 12})).data, a), "blend M=0");
    expect(testing::bitwise_equal(blend_latents(Latent{a}, Latent{b}, torch::ones({12, 12})).data, b), "blend M=1");
    expect(testing::bitwise_equal(blend_latents(Latent{a}, Latent{a}, m).data, a), "blend idempotence");

    auto backbone = testing::tiny_backbone(16, 50, 3);
    double worst = 0.0;
    {
        torch::NoGradGuard no_grad;
        for (int trial = 0; trial < 20; ++trial) {
            auto z0 = rng.randn({2, 3, 8, 8});
            auto eps = rng.randn({2, 3, 8, 8});
            auto t = rng.randint(1, 50, {2});
            auto v = rng.randn({16});
            auto masked = masked_ldm_loss(z0, torch::ones({2, 8, 8}), t, eps, v, *backbone.denoiser, backbone.schedule);
            auto plain = ldm_loss(z0, t, eps, v, *backbone.denoiser, backbone.schedule);
            worst = std::max(worst, std::abs(masked->item<double>() - plain.item<double>()));
        }
    }
    expect(worst < 1e-6, "masked loss reduction (" + std::to_string(worst) + ")");

    auto p = torch::tensor({0.9, 0.9 - 1e-12, 1.0, 0.0}, torch::kDouble);
    auto delta = confidence_indicator(p, 0.9);
    expect(delta[0].item<double>() == 1.0 && delta[1].item<double>() == 0.0 && delta[2].item<double>() == 1.0 &&
               delta[3].item<double>() == 0.0,
           "delta boundary");

    auto L = torch::tensor({1.0, 2.0, 3.0, 4.0}, torch::kDouble).view({2, 2});
    auto box = torch::tensor({1.0, 1.0, 0.0, 0.0}, torch::kDouble).view({2, 2});
    auto d = torch::tensor({1.0, 0.0, 1.0, 0.0}, torch::kDouble).view({2, 2});
    // Hand value: in-box (1-1)*1 + (1-0)*2, out-of-box 3 + 4, mean over 4 cells.
    const double hand = (0.0 + 2.0 + 3.0 + 4.0) / 4.0;
    expect(std::abs(weak_seg_loss(L, box, d).item<double>() - hand) < 1e-9, "weak loss 2x2");

    const double elapsed = seconds_since(start);
    expect(elapsed < 10.0, "runtime " + fmt(elapsed, 2) + " s");
    std::string detail = "runtime " + fmt(elapsed, 2) + " s";
    for (const auto& f : failures) detail += "; failed: " + f;
    return {failures.empty(), detail};
}

Outcome freeze_property(Context& ctx) {
    const auto& bundle = ctx.toy_backbone();
    const auto& data = ctx.toy_dataset();
    const auto& toy = ctx.base.dataset.toy;
    Rng rng(derive_seed(ctx.seeds.front(), "acceptance-support"));
    auto selection = select_support(data.layout, toy.category, toy.anomaly_type, ctx.base.k_shot, rng, data.image_size);
    auto initial = init_embedding(ctx.base.inversion.init_token, *bundle.encoder, bundle.backbone.cond_dim());

    auto before = bundle.backbone.denoiser->flat_parameters();
    auto cfg = ctx.base.inversion;
    cfg.iterations = 500;
    Rng inv_rng(derive_seed(ctx.seeds.front(), "acceptance-inversion"));
    const auto start = Clock::now();
    auto result = learn_embedding(selection.support, bundle.backbone, initial, cfg, inv_rng);
    const double elapsed = seconds_since(start);
    auto after = bundle.backbone.denoiser->flat_parameters();

    const double max_change = (after - before).abs().max().item<double>();
    const bool moved = !torch::equal(result.embedding.v, initial.v);
    auto smooth = [&](std::size_t from) {
        double s = 0.0;
        for (std::size_t i = from; i < from + 50; ++i) s += result.loss_curve[i];
        return s / 50.0;
    };
    const double first = smooth(0);
    const double last = smooth(result.loss_curve.size() - 50);
    ctx.embedding = result.embedding;

    const bool pass = max_change == 0.0 && torch::equal(before, after) && moved && elapsed < 120.0;
    return {pass, "max |param change| " + fmt(max_change, 1) + ", |v - v0| " +
                      fmt((result.embedding.v - initial.v).norm().item<double>()) + ", smoothed loss " + fmt(first) +
                      " -> " + fmt(last) + ", probe loss " + fmt(result.initial_probe_loss) + " -> " +
                      fmt(result.final_probe_loss) + ", runtime " + fmt(elapsed, 1) + " s"};
}

Outcome gradient_checks() {
    double worst_v = 0.0;
    double worst_seg = 0.0;
    auto rel = [](double analytic, double numeric) {
        if (std::abs(analytic - numeric) < 1e-10) return 0.0;
        return testing::relative_error(analytic, numeric);
    };
    const double h = 1e-6;

    {
        torch::manual_seed(11);
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
        Rng rng(12);
        auto z0 = rng.randn({1, 2, 4, 4}, torch::kDouble);
        auto eps = rng.randn({1, 2, 4, 4}, torch::kDouble);
        auto mask = torch::zeros({1, 4, 4}, torch::kDouble);
        mask.index_put_({0, torch::indexing::Slice(0, 3), torch::indexing::Slice(1, 4)}, 1.0);
        auto t = torch::full({1}, 4, torch::kLong);
        auto v = rng.randn({6}, torch::kDouble).set_requires_grad(true);
        masked_ldm_loss(z0, mask, t, eps, v, model, s)->backward();
        auto grad = v.grad().clone();
        torch::NoGradGuard no_grad;
        for (int i = 0; i < 6; ++i) {
            auto vp = v.detach().clone();
            auto vm = v.detach().clone();
            vp[i] += h;
            vm[i] -= h;
            const double numeric = (masked_ldm_loss(z0, mask, t, eps, vp, model, s)->item<double>() -
                                    masked_ldm_loss(z0, mask, t, eps, vm, model, s)->item<double>()) /
                                   (2 * h);
            worst_v = std::max(worst_v, rel(grad[i].item<double>(), numeric));
        }
    }

    {
        Rng rng(13);
        LossConfig cfg;
        auto recon = rng.rand({1, 3, 4, 4}, torch::kDouble);
        auto target_img = rng.rand({1, 3, 4, 4}, torch::kDouble);
        // Keep every p̂ at least 0.02 away from τ so the indicator is locally constant.
        auto base = rng.rand({1, 4, 4}, torch::kDouble) * 0.9 + 0.05;
        base = torch::where(((1 - base) - cfg.tau).abs() < 0.02, base + 0.05, base);
        base.index_put_({0, 0, 0}, 0.02);
        auto box = torch::zeros({1, 4, 4}, torch::kDouble);
        box.index_put_({0, torch::indexing::Slice(0, 3), torch::indexing::Slice(0, 2)}, 1.0);
        auto pred = base.clone().set_requires_grad(true);
        detector_loss(recon, target_img, pred, box, box, cfg).backward();
        auto grad = pred.grad().clone();
        torch::NoGradGuard no_grad;
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                auto p = base.clone();
                auto m = base.clone();
                p[0][y][x] += h;
                m[0][y][x] -= h;
                const double numeric = (detector_loss(recon, target_img, p, box, box, cfg).item<double>() -
                                        detector_loss(recon, target_img, m, box, box, cfg).item<double>()) /
                                       (2 * h);
                worst_seg = std::max(worst_seg, rel(grad[0][y][x].item<double>(), numeric));
            }
        }
    }
    const bool pass = worst_v < 1e-3 && worst_seg < 1e-3;
    return {pass, "max relative error d/dv " + fmt(worst_v * 1e6, 3) + "e-6, d/dM " + fmt(worst_seg * 1e6, 3) + "e-6"};
}

Outcome metric_oracles() {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 64));
        std::vector<double> s(n);
        std::vector<std::uint8_t> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial % 3 == 0 ? static_cast<double>(rng.uniform_int(0, 4)) : rng.uniform();
            l[i] = rng.bernoulli(0.3) ? 1 : 0;
        }
        l[rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)] = 1;
        bool has_negative = false;
        for (auto v : l) has_negative = has_negative || v == 0;
        worst = std::max(worst, std::abs(aupr(s, l) - testing::brute_aupr(s, l)));
        if (has_negative) worst = std::max(worst, std::abs(auroc(s, l) - testing::brute_auroc(s, l)));
    }
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<std::uint8_t> l{0, 0, 1, 1};
    const double roc = auroc(s, l);
    const double ap = aupr(s, l);
    const bool pass = worst < 1e-9 && std::abs(roc - 0.75) < 1e-12 && std::abs(ap - 5.0 / 6.0) < 1e-4;
    return {pass, "max oracle gap " + std::to_string(worst) + ", example AUROC " + fmt(roc) + ", AUPR " + fmt(ap)};
}

Outcome box_sampler() {
    const auto start = Clock::now();
    auto cfg = CategoryBoxTable::builtin().lookup("hazelnut", "hole");
    ForegroundMask full{torch::ones({64, 64}), ForegroundMethod::full_frame, false};
    auto disk_mask = torch::zeros({64, 64});
    {
        auto yy = torch::arange(64, torch::kFloat).view({64, 1});
        auto xx = torch::arange(64, torch::kFloat).view({1, 64});
        disk_mask = ((yy - 32).pow(2) + (xx - 32).pow(2) <= 22.0 * 22.0).to(torch::kFloat);
    }
    ForegroundMask disk{disk_mask, ForegroundMethod::threshold, false};
    Rng rng(5);
    int valid = 0;
    const double eps = 1e-12;
    std::set<int> cells;
    for (int i = 0; i < 10000; ++i) {
        const auto& fg = i % 2 == 0 ? full : disk;
        auto b = sample_box(fg, cfg, rng);
        const bool size_ok = b.width() >= cfg.min_size - eps && b.width() <= cfg.max_size + eps &&
                             b.height() >= cfg.min_size - eps && b.height() <= cfg.max_size + eps;
        valid += size_ok && overlap_fraction(b, fg) >= cfg.min_overlap;
    }
    Rng diversity(6);
    for (int i = 0; i < 1000; ++i) {
        auto b = sample_box(full, cfg, diversity);
        const int cx = std::min(9, static_cast<int>((b.x0 + b.x1) * 5.0));
        const int cy = std::min(9, static_cast<int>((b.y0 + b.y1) * 5.0));
        cells.insert(cy * 10 + cx);
    }
    const double elapsed = seconds_since(start);
    const bool pass = cfg.min_size == 0.1 && cfg.max_size == 0.5 && valid == 10000 && cells.size() >= 50 && elapsed < 10.0;
    return {pass, std::to_string(valid) + "/10000 valid, " + std::to_string(cells.size()) +
                      " centre cells, runtime " + fmt(elapsed, 2) + " s"};
}

Outcome exterior_identity(Context& ctx) {
    const auto& bundle = ctx.toy_backbone();
    if (!ctx.embedding) throw std::runtime_error("criterion 2 must run first");
    const auto& data = ctx.toy_dataset();
    const auto& toy = ctx.base.dataset.toy;
    auto normals = load_train_images(data.layout, toy.category, data.image_size);
    auto box_cfg = CategoryBoxTable::builtin().lookup(toy.category, toy.anomaly_type);
    const fs::path dir = ctx.work / "exterior";
    fs::create_directories(dir);
    Rng rng(derive_seed(ctx.seeds.front(), "acceptance-exterior"));
    int exact = 0;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto& src = normals[static_cast<std::size_t>(i) % normals.size()].image;
        auto fg = extract_foreground(src, box_cfg.foreground);
        auto box = sample_box(fg, box_cfg, rng);
        Rng gen = rng.fork(static_cast<std::uint64_t>(i));
        auto sample = generate_anomaly(src, box, *ctx.embedding, bundle.backbone, ctx.base.generation, gen);
        const auto path = dir / (std::to_string(i) + ".png");
        write_image(path, sample.image);
        auto reread = read_image(path);
        auto outside = (1.0 - box.rasterize(src.size(1), src.size(2))).to(torch::kBool).expand_as(src);
        const double diff = (reread - src).abs().masked_select(outside).max().item<double>();
        worst = std::max(worst, diff);
        exact += diff == 0.0;
    }
    return {exact == 100, std::to_string(exact) + "/100 samples exact outside the box (max diff " + fmt(worst, 6) + ")"};
}

struct ExperimentResult {
    std::map<std::string, std::vector<double>> pixel_aupr;  // by arm, one per seed
    double seconds = 0.0;
};

ExperimentResult run_experiment(Context& ctx) {
    ExperimentResult r;
    const auto start = Clock::now();
    ctx.toy_backbone();
    for (auto seed : ctx.seeds) {
        for (const auto& [name, mix, tau] : {std::tuple<std::string, double, double>{"baseline", 0.0, 0.9},
                                             {"mixed-tau0.9", 0.5, 0.9},
                                             {"mixed-tau0.8", 0.5, 0.8}}) {
            const auto arm_start = Clock::now();
            auto report = run_pipeline(ctx.config_for(seed, mix, tau, name));
            r.pixel_aupr[name].push_back(report.mean.pixel_aupr);
            std::printf("  seed %llu %-13s pixel AU-PR %.4f  image AU-ROC %.4f  (%.0f s)\n",
                        static_cast<unsigned long long>(seed), name.c_str(), report.mean.pixel_aupr,
                        report.mean.image_auroc, seconds_since(arm_start));
            std::fflush(stdout);
        }
    }
    r.seconds = seconds_since(start) + ctx.backbone_seconds;
    return r;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

Outcome mix_direction(const ExperimentResult& r) {
    const auto& base = r.pixel_aupr.at("baseline");
    const auto& mixed = r.pixel_aupr.at("mixed-tau0.9");
    int improved = 0;
    for (std::size_t i = 0; i < base.size(); ++i) improved += mixed[i] > base[i];
    const double minutes = r.seconds / 60.0;
    const bool pass = mean(mixed) >= mean(base) && improved >= 2 && minutes < 30.0;
    return {pass, "mean pixel AU-PR baseline " + fmt(mean(base)) + " vs mixed " + fmt(mean(mixed)) + ", improved in " +
                      std::to_string(improved) + "/" + std::to_string(base.size()) + " seeds, runtime " +
                      fmt(minutes, 1) + " min"};
}

Outcome tau_direction(const ExperimentResult& r) {
    const double hi = mean(r.pixel_aupr.at("mixed-tau0.9"));
    const double lo = mean(r.pixel_aupr.at("mixed-tau0.8"));
    return {hi >= lo, "mean pixel AU-PR tau=0.9 " + fmt(hi) + " vs tau=0.8 " + fmt(lo)};
}

Outcome reproducibility(Context& ctx) {
    const auto seed = ctx.seeds.front();
    auto first = ctx.config_for(seed, 0.5, 0.9, "mixed-tau0.9");
    auto rerun = ctx.config_for(seed, 0.5, 0.9, "rerun");
    // Fresh cache holding only the dataset and the fixed backbone, so every later stage recomputes.
    const fs::path cache = ctx.work / "rerun-cache";
    fs::remove_all(cache);
    fs::create_directories(cache);
    for (const auto& entry : fs::directory_iterator(ctx.base.cache_dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("backbone-", 0) == 0 || name.rfind("dataset-", 0) == 0) {
            fs::copy(entry.path(), cache / name, fs::copy_options::recursive);
        }
    }
    rerun.cache_dir = cache.string();
    run_pipeline(rerun);
    const auto a = slurp(fs::path(first.out_dir) / "report.json");
    const auto b = slurp(fs::path(rerun.out_dir) / "report.json");
    const bool pass = !a.empty() && a == b;
    return {pass, "report.json " + std::to_string(a.size()) + " bytes, " + (pass ? "identical" : "different") +
                      " after recomputing support, embedding, generation, detector and evaluation"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite"};
    std::string work = "acceptance-work";
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<int> only;
    std::vector<int> known_failures;
    bool keep = false;
    app.add_option("--work-dir", work, "Scratch directory");
    app.add_option("--seeds", seeds, "Seeds for the toy experiment")->delimiter(',');
    app.add_option("--only", only, "Run only these criteria")->delimiter(',');
    app.add_option("--known-failures", known_failures,
                   "Criteria whose FAIL does not set the exit code (exceptions still do)")
        ->delimiter(',');
    app.add_flag("--keep", keep, "Keep previous runs in the work directory");
    CLI11_PARSE(app, argc, argv);

    torch::set_num_threads(1);
    log::set_level(log::Level::warn);

    Context ctx;
    ctx.work = fs::absolute(work);
    if (!keep) fs::remove_all(ctx.work);
    fs::create_directories(ctx.work);
    ctx.seeds = seeds;
    ctx.base = PipelineConfig::toy_preset();
    ctx.base.cache_dir = (ctx.work / "cache").string();
    ctx.base.backbone.seed = 0;

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    std::vector<std::pair<int, std::function<Outcome()>>> criteria;
    std::optional<ExperimentResult> experiment;
    auto experiment_result = [&]() -> const ExperimentResult& {
        if (!experiment) experiment = run_experiment(ctx);
        return *experiment;
    };
    criteria.emplace_back(1, [] { return equation_suite(); });
    criteria.emplace_back(2, [&] { return freeze_property(ctx); });
    criteria.emplace_back(3, [] { return gradient_checks(); });
    criteria.emplace_back(4, [] { return metric_oracles(); });
    criteria.emplace_back(5, [] { return box_sampler(); });
    criteria.emplace_back(6, [&] {
        if (!ctx.embedding) freeze_property(ctx);
        return exterior_identity(ctx);
    });
    criteria.emplace_back(7, [&] { return mix_direction(experiment_result()); });
    criteria.emplace_back(8, [&] { return tau_direction(experiment_result()); });
    criteria.emplace_back(9, [&] {
        experiment_result();
        return reproducibility(ctx);
    });

    const auto start = Clock::now();
    json summary = json::object();
    int failed = 0;
    int unexpected = 0;
    for (auto& [id, run] : criteria) {
        if (!wanted(id)) continue;
        Outcome o;
        bool crashed = false;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
            crashed = true;
        }
        const bool known = std::find(known_failures.begin(), known_failures.end(), id) != known_failures.end();
        failed += !o.pass;
        unexpected += !o.pass && (!known || crashed);
        std::printf("%s criterion %d: %s%s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(),
                    !o.pass && known && !crashed ? " (known failure)" : "");
        std::fflush(stdout);
        summary[std::to_string(id)] = json{{"pass", o.pass}, {"detail", o.detail}, {"known_failure", known}};
    }
    if (experiment) summary["experiment"] = json{{"pixel_aupr", experiment->pixel_aupr}, {"seconds", experiment->seconds}};
    summary["seconds"] = seconds_since(start);
    std::ofstream(ctx.work / "acceptance.json") << summary.dump(1) << "\n";
    std::printf("%d criteria failed (%d unexpected), total %.0f s\n", failed, unexpected, seconds_since(start));
    return unexpected == 0 ? 0 : 1;
}
