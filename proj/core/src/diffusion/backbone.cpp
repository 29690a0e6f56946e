#include "anogen/diffusion/backbone.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/diffusion/sampling.hpp"
#include "anogen/errors.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;

void to_json(json& j, const BackboneTrainConfig& c) {
    j = json{{"identity_autoencoder", c.identity_autoencoder},
             {"autoencoder_latent_channels", c.autoencoder.latent_channels},
             {"autoencoder_hidden_channels", c.autoencoder.hidden_channels},
             {"autoencoder_steps", c.autoencoder_steps},
             {"autoencoder_lr", c.autoencoder_lr},
             {"unet_base_channels", c.unet.base_channels},
             {"unet_attention_dim", c.unet.attention_dim},
             {"unet_time_dim", c.unet.time_dim},
             {"steps", c.steps},
             {"batch_size", c.batch_size},
             {"lr", c.lr},
             {"schedule_steps", c.schedule_steps},
             {"schedule_kind", to_string(c.schedule_kind)},
             {"beta_min", c.beta_min},
             {"beta_max", c.beta_max},
             {"heldout_fraction", c.heldout_fraction},
             {"heldout_probes", c.heldout_probes}};
}

void from_json(const json& j, BackboneTrainConfig& c) {
    BackboneTrainConfig d;
    c.identity_autoencoder = j.value("identity_autoencoder", d.identity_autoencoder);
    c.autoencoder.latent_channels = j.value("autoencoder_latent_channels", d.autoencoder.latent_channels);
    c.autoencoder.hidden_channels = j.value("autoencoder_hidden_channels", d.autoencoder.hidden_channels);
    c.autoencoder_steps = j.value("autoencoder_steps", d.autoencoder_steps);
    c.autoencoder_lr = j.value("autoencoder_lr", d.autoencoder_lr);
    c.unet.base_channels = j.value("unet_base_channels", d.unet.base_channels);
    c.unet.attention_dim = j.value("unet_attention_dim", d.unet.attention_dim);
    c.unet.time_dim = j.value("unet_time_dim", d.unet.time_dim);
    c.steps = j.value("steps", d.steps);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.schedule_steps = j.value("schedule_steps", d.schedule_steps);
    c.schedule_kind = schedule_kind_from_string(j.value("schedule_kind", to_string(d.schedule_kind)));
    c.beta_min = j.value("beta_min", d.beta_min);
    c.beta_max = j.value("beta_max", d.beta_max);
    c.heldout_fraction = j.value("heldout_fraction", d.heldout_fraction);
    c.heldout_probes = j.value("heldout_probes", d.heldout_probes);
}

namespace {

torch::Tensor stack_images(const std::vector<CaptionedImage>& data, const std::vector<std::size_t>& idx) {
    std::vector<torch::Tensor> images;
    images.reserve(idx.size());
    for (auto i : idx) images.push_back(data[i].image);
    return torch::stack(images);
}

torch::Tensor stack_conds(const std::vector<CaptionedImage>& data, const std::vector<std::size_t>& idx) {
    std::vector<torch::Tensor> conds;
    conds.reserve(idx.size());
    for (auto i : idx) conds.push_back(data[i].cond);
    return torch::stack(conds);
}

std::vector<std::size_t> random_batch(Rng& rng, std::size_t n, int batch) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    return idx;
}

void validate_dataset(const std::vector<CaptionedImage>& dataset) {
    if (dataset.empty()) throw DataError("backbone training dataset is empty");
    const auto shape = dataset.front().image.sizes();
    const auto dim = dataset.front().cond.numel();
    for (const auto& item : dataset) {
        if (item.image.sizes() != shape) throw DataError("backbone dataset images differ in shape");
        if (item.cond.numel() != dim) throw DataError("backbone dataset captions differ in dimension");
    }
}

std::shared_ptr<Autoencoder> fit_autoencoder(const std::vector<CaptionedImage>& train,
                                             const BackboneTrainConfig& config, Rng& rng,
                                             double& mse_out) {
    if (config.identity_autoencoder) {
        mse_out = 0.0;
        return std::make_shared<IdentityAutoencoder>(train.front().image.size(0));
    }
    auto options = config.autoencoder;
    options.image_channels = train.front().image.size(0);
    torch::manual_seed(rng.fork("init").seed());
    auto ae = std::make_shared<TinyAutoencoder>(options);
    auto& net = ae->net();
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.autoencoder_lr));
    for (int step = 0; step < config.autoencoder_steps; ++step) {
        auto x = stack_images(train, random_batch(rng, train.size(), config.batch_size));
        auto loss = torch::mse_loss(net->decode_raw(net->encode_raw(x)), x);
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    torch::NoGradGuard no_grad;
    std::vector<std::size_t> all(train.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    double sum_sq = 0.0;
    double sum = 0.0;
    double count = 0.0;
    double mse = 0.0;
    for (std::size_t start = 0; start < all.size(); start += 32) {
        std::vector<std::size_t> chunk(all.begin() + static_cast<std::ptrdiff_t>(start),
                                       all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + 32)));
        auto x = stack_images(train, chunk);
        auto z = net->encode_raw(x);
        sum += z.sum().item<double>();
        sum_sq += z.pow(2).sum().item<double>();
        count += static_cast<double>(z.numel());
        mse += torch::mse_loss(net->decode_raw(z).clamp(0.0, 1.0), x, torch::Reduction::Sum).item<double>();
    }
    const double mean = sum / count;
    const double stddev = std::sqrt(std::max(1e-12, sum_sq / count - mean * mean));
    ae->set_scale(stddev);
    mse_out = mse / static_cast<double>(train.size() * static_cast<std::size_t>(train.front().image.numel()));
    ae->set_reconstruction_tolerance(mse_out);
    return ae;
}

}  // namespace

double probe_ldm_loss(const Backbone& backbone, const std::vector<CaptionedImage>& data, int probes,
                      Rng probe_rng) {
    if (data.empty() || probes < 1) throw DataError("probe_ldm_loss: no data");
    torch::NoGradGuard no_grad;
    double total = 0.0;
    int done = 0;
    while (done < probes) {
        const int chunk = std::min(32, probes - done);
        std::vector<std::size_t> idx(static_cast<std::size_t>(chunk));
        for (int i = 0; i < chunk; ++i) idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(done + i) % data.size();
        auto z0 = backbone.autoencoder->encode(stack_images(data, idx)).data;
        auto t = probe_rng.randint(1, backbone.schedule.T, {chunk});
        auto eps = probe_rng.randn(z0.sizes());
        auto loss = ldm_loss(z0, t, eps, stack_conds(data, idx), *backbone.denoiser, backbone.schedule);
        total += loss.item<double>() * chunk;
        done += chunk;
    }
    return total / probes;
}

TrainedBackbone train_tiny_backbone(const std::vector<CaptionedImage>& dataset,
                                    const BackboneTrainConfig& config, Rng& rng) {
    validate_dataset(dataset);
    if (config.steps < 1 || config.batch_size < 1) throw ParameterError("backbone training needs steps, batch_size >= 1");

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    auto n_heldout = static_cast<std::size_t>(std::ceil(config.heldout_fraction * static_cast<double>(dataset.size())));
    std::vector<CaptionedImage> train;
    std::vector<CaptionedImage> heldout;
    if (dataset.size() < 2 || n_heldout == 0) {
        train = dataset;
        heldout = dataset;
    } else {
        n_heldout = std::min(n_heldout, dataset.size() - 1);
        for (std::size_t i = 0; i < order.size(); ++i) {
            (i < n_heldout ? heldout : train).push_back(dataset[order[i]]);
        }
    }

    TrainedBackbone result;
    Rng ae_rng = rng.fork("autoencoder");
    auto ae = fit_autoencoder(train, config, ae_rng, result.report.autoencoder_mse);

    const auto& sample = train.front().image;
    if ((sample.size(1) / ae->stride()) % 2 != 0 || (sample.size(2) / ae->stride()) % 2 != 0) {
        throw ShapeError("image size must give even latent dimensions");
    }

    auto unet_options = config.unet;
    unet_options.latent_channels = ae->latent_channels();
    unet_options.cond_dim = train.front().cond.numel();
    unet_options.num_timesteps = config.schedule_steps;
    torch::manual_seed(rng.fork("unet-init").seed());
    auto denoiser = std::make_shared<TinyDenoiser>(unet_options);

    result.backbone.autoencoder = ae;
    result.backbone.denoiser = denoiser;
    result.backbone.schedule = make_schedule(config.schedule_steps, config.schedule_kind, config.beta_min, config.beta_max);
    const auto& schedule = result.backbone.schedule;

    // Latents are fixed once the autoencoder is fit.
    std::vector<torch::Tensor> latents;
    std::vector<torch::Tensor> conds;
    for (const auto& item : train) {
        latents.push_back(ae->encode(item.image).data.squeeze(0));
        conds.push_back(item.cond);
    }
    auto all_latents = torch::stack(latents);
    auto all_conds = torch::stack(conds);

    const Rng probe_rng = rng.fork("heldout-probes");
    result.report.initial_heldout_loss = probe_ldm_loss(result.backbone, heldout, config.heldout_probes, probe_rng);

    Rng train_rng = rng.fork("denoiser");
    torch::optim::Adam opt(denoiser->parameters(), torch::optim::AdamOptions(config.lr));
    result.report.loss_curve.reserve(static_cast<std::size_t>(config.steps));
    for (int step = 0; step < config.steps; ++step) {
        auto idx = train_rng.randint(0, static_cast<std::int64_t>(train.size()) - 1, {config.batch_size});
        auto z0 = all_latents.index_select(0, idx);
        auto cond = all_conds.index_select(0, idx);
        auto t = train_rng.randint(1, schedule.T, {config.batch_size});
        auto eps = train_rng.randn(z0.sizes());
        auto loss = ldm_loss(z0, t, eps, cond, *denoiser, schedule);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) throw TrainingError("backbone training diverged at step " + std::to_string(step));
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.report.loss_curve.push_back(value);
    }
    result.report.final_heldout_loss = probe_ldm_loss(result.backbone, heldout, config.heldout_probes, probe_rng);
    log::info("backbone trained: heldout ldm loss " + std::to_string(result.report.initial_heldout_loss) + " -> " +
              std::to_string(result.report.final_heldout_loss));
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_backbone(const Backbone& backbone, const std::filesystem::path& path) {
    auto tiny_denoiser = std::dynamic_pointer_cast<TinyDenoiser>(backbone.denoiser);
    if (!tiny_denoiser) throw CheckpointError("only the built-in tiny denoiser can be checkpointed");
    json meta;
    meta["schema_version"] = kBackboneSchemaVersion;
    meta["betas"] = backbone.schedule.betas;
    const auto& uo = tiny_denoiser->net()->options();
    meta["unet"] = {{"latent_channels", uo.latent_channels}, {"base_channels", uo.base_channels},
                    {"cond_dim", uo.cond_dim},             {"attention_dim", uo.attention_dim},
                    {"time_dim", uo.time_dim},             {"num_timesteps", uo.num_timesteps}};

    torch::serialize::OutputArchive archive;
    archive.write("schema_version", torch::tensor(static_cast<std::int64_t>(kBackboneSchemaVersion)));
    if (auto tiny_ae = std::dynamic_pointer_cast<TinyAutoencoder>(backbone.autoencoder)) {
        const auto& ao = tiny_ae->net()->options();
        meta["autoencoder"] = {{"kind", "tiny"},
                               {"image_channels", ao.image_channels},
                               {"latent_channels", ao.latent_channels},
                               {"hidden_channels", ao.hidden_channels},
                               {"scale", tiny_ae->scale()},
                               {"reconstruction_tolerance", tiny_ae->reconstruction_tolerance()}};
        torch::serialize::OutputArchive ae_archive;
        tiny_ae->net()->save(ae_archive);
        archive.write("autoencoder", ae_archive);
    } else if (std::dynamic_pointer_cast<IdentityAutoencoder>(backbone.autoencoder)) {
        meta["autoencoder"] = {{"kind", "identity"}, {"channels", backbone.autoencoder->latent_channels()}};
    } else {
        throw CheckpointError("unsupported autoencoder type for checkpointing");
    }
    torch::serialize::OutputArchive unet_archive;
    tiny_denoiser->net()->save(unet_archive);
    archive.write("unet", unet_archive);
    archive.write("meta", c10::IValue(meta.dump()));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    archive.save_to(path.string());
}

Backbone load_backbone(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    torch::Tensor version;
    archive.read("schema_version", version);
    if (version.item<std::int64_t>() != kBackboneSchemaVersion) {
        throw CheckpointError("unsupported backbone schema version " + std::to_string(version.item<std::int64_t>()));
    }
    c10::IValue meta_value;
    archive.read("meta", meta_value);
    const auto meta = json::parse(meta_value.toStringRef());

    Backbone backbone;
    backbone.schedule = schedule_from_betas(meta.at("betas").get<std::vector<double>>());
    const auto& am = meta.at("autoencoder");
    if (am.at("kind") == "tiny") {
        ConvAutoencoderOptions ao;
        ao.image_channels = am.at("image_channels");
        ao.latent_channels = am.at("latent_channels");
        ao.hidden_channels = am.at("hidden_channels");
        auto ae = std::make_shared<TinyAutoencoder>(ao);
        torch::serialize::InputArchive ae_archive;
        archive.read("autoencoder", ae_archive);
        ae->net()->load(ae_archive);
        ae->set_scale(am.at("scale"));
        ae->set_reconstruction_tolerance(am.at("reconstruction_tolerance"));
        backbone.autoencoder = ae;
    } else {
        backbone.autoencoder = std::make_shared<IdentityAutoencoder>(am.at("channels").get<std::int64_t>());
    }
    const auto& um = meta.at("unet");
    TinyUNetOptions uo;
    uo.latent_channels = um.at("latent_channels");
    uo.base_channels = um.at("base_channels");
    uo.cond_dim = um.at("cond_dim");
    uo.attention_dim = um.at("attention_dim");
    uo.time_dim = um.at("time_dim");
    uo.num_timesteps = um.at("num_timesteps");
    auto denoiser = std::make_shared<TinyDenoiser>(uo);
    torch::serialize::InputArchive unet_archive;
    archive.read("unet", unet_archive);
    denoiser->net()->load(unet_archive);
    backbone.denoiser = denoiser;
    return backbone;
}

}  // namespace anogen
