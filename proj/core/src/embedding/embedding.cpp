#include "anogen/embedding/embedding.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/diffusion/sampling.hpp"
#include "anogen/hashing.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;

namespace {

// Turns off requires_grad on every backbone parameter for its lifetime.
class FreezeGuard {
public:
    explicit FreezeGuard(const Denoiser& model) : params_(model.parameters()) {
        flags_.reserve(params_.size());
        for (auto& p : params_) {
            flags_.push_back(p.requires_grad());
            p.set_requires_grad(false);
        }
    }
    ~FreezeGuard() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flags_[i]);
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<torch::Tensor> params_;
    std::vector<bool> flags_;
};

}  // namespace

void SupportSet::validate() const {
    if (records.empty()) throw DataError("support set is empty");
    for (const auto& r : records) {
        check_image(r.image, "support image");
        check_mask(r.mask, "support mask");
        if (r.image.size(1) != r.mask.size(0) || r.image.size(2) != r.mask.size(1)) {
            throw ShapeError("support image and mask shapes differ (" + r.id + ")");
        }
        if (r.mask.sum().item<double>() < 1.0) throw DataError("support mask has no anomalous pixel (" + r.id + ")");
    }
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ParameterError("unknown optimizer: " + name);
}

void InversionConfig::validate() const {
    if (iterations < 1) throw ParameterError("inversion needs iterations >= 1");
    if (!(learning_rate > 0.0)) throw ParameterError("inversion needs learning_rate > 0");
    if (probe_count < 0) throw ParameterError("probe_count must be >= 0");
}

void to_json(json& j, const InversionConfig& c) {
    j = json{{"iterations", c.iterations},
             {"learning_rate", c.learning_rate},
             {"mask_guided", c.mask_guided},
             {"optimizer", to_string(c.optimizer)},
             {"init_token", c.init_token},
             {"probe_count", c.probe_count}};
}

void from_json(const json& j, InversionConfig& c) {
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.mask_guided = j.value("mask_guided", c.mask_guided);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j.at("optimizer"));
    c.init_token = j.value("init_token", c.init_token);
    c.probe_count = j.value("probe_count", c.probe_count);
}

std::string AnomalyEmbedding::id() const {
    return category + "/" + anomaly_type + "#" + hex64(fnv1a64(v.to(torch::kFloat))).substr(0, 8);
}

void AnomalyEmbedding::validate() const {
    if (!v.defined() || v.dim() != 1 || v.numel() == 0) throw ShapeError("embedding must be a non-empty vector");
    if (!torch::isfinite(v).all().item<bool>()) throw ParameterError("embedding has non-finite entries");
}

void to_json(json& j, const AnomalyEmbedding& e) {
    auto v = e.v.detach().to(torch::kFloat).contiguous();
    std::vector<float> values(v.data_ptr<float>(), v.data_ptr<float>() + v.numel());
    j = json{{"schema_version", kEmbeddingSchemaVersion},
             {"dim", v.numel()},
             {"category", e.category},
             {"anomaly_type", e.anomaly_type},
             {"init_token", e.init_token},
             {"training_config", e.config},
             {"support_fingerprint", e.support_fingerprint},
             {"vector", values}};
}

void from_json(const json& j, AnomalyEmbedding& e) {
    if (j.value("schema_version", 0) != kEmbeddingSchemaVersion) {
        throw CheckpointError("unsupported embedding schema version");
    }
    auto values = j.at("vector").get<std::vector<float>>();
    if (static_cast<std::int64_t>(values.size()) != j.at("dim").get<std::int64_t>()) {
        throw CheckpointError("embedding vector length does not match dim");
    }
    e.v = torch::tensor(values, torch::kFloat);
    e.category = j.at("category");
    e.anomaly_type = j.at("anomaly_type");
    e.init_token = j.value("init_token", "");
    e.config = j.value("training_config", InversionConfig{});
    e.support_fingerprint = j.value("support_fingerprint", std::vector<std::string>{});
    e.validate();
}

void save_embedding(const AnomalyEmbedding& embedding, const std::filesystem::path& path) {
    embedding.validate();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write embedding: " + path.string());
    out << json(embedding).dump(1) << '\n';
}

AnomalyEmbedding load_embedding(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read embedding: " + path.string());
    json j;
    in >> j;
    return j.get<AnomalyEmbedding>();
}

AnomalyEmbedding init_embedding(const std::string& token, const ConditionEncoder& encoder, std::int64_t expected_dim) {
    if (token.empty()) throw InitializationError("initialisation token is empty");
    if (encoder.dim() != expected_dim) {
        throw InitializationError("encoder dimension " + std::to_string(encoder.dim()) +
                                  " does not match backbone conditioning dimension " + std::to_string(expected_dim));
    }
    AnomalyEmbedding e;
    try {
        e.v = encoder.encode_token(token).to(torch::kFloat).flatten().clone();
    } catch (const InitializationError&) {
        throw;
    } catch (const std::exception& ex) {
        throw InitializationError(std::string("condition encoder failed: ") + ex.what());
    }
    if (e.v.numel() != expected_dim) throw InitializationError("encoder returned a vector of the wrong dimension");
    e.init_token = token;
    e.validate();
    return e;
}

torch::Tensor downsample_mask(const torch::Tensor& mask, std::int64_t latent_h, std::int64_t latent_w) {
    check_mask(mask, "downsample_mask");
    const auto h = mask.size(0);
    const auto w = mask.size(1);
    if (latent_h < 1 || latent_w < 1 || h % latent_h != 0 || w % latent_w != 0 || h / latent_h != w / latent_w) {
        throw ShapeError("downsample_mask: pixel shape " + std::to_string(h) + "x" + std::to_string(w) +
                         " is not an integer stride multiple of latent shape " + std::to_string(latent_h) + "x" +
                         std::to_string(latent_w));
    }
    const auto stride = h / latent_h;
    auto m = mask.to(torch::kFloat).gt(0.5f).to(torch::kFloat);
    if (stride == 1) return m;
    return torch::max_pool2d(m.unsqueeze(0).unsqueeze(0), {stride, stride}, {stride, stride}).squeeze(0).squeeze(0);
}

std::optional<torch::Tensor> masked_ldm_loss(const torch::Tensor& z0, const torch::Tensor& latent_mask,
                                             const torch::Tensor& t, const torch::Tensor& eps,
                                             const torch::Tensor& v, const Denoiser& model,
                                             const NoiseSchedule& schedule) {
    if (latent_mask.dim() != 3 || latent_mask.size(0) != z0.size(0) || latent_mask.size(1) != z0.size(2) ||
        latent_mask.size(2) != z0.size(3)) {
        throw ShapeError("masked_ldm_loss: latent mask must be (N, h, w) matching z0");
    }
    auto m = latent_mask.to(z0.scalar_type()).unsqueeze(1);  // (N, 1, h, w)
    const double cells = m.sum().item<double>();
    if (cells <= 0.0) return std::nullopt;
    auto z_t = add_noise(z0, t, eps, schedule);
    auto predicted = model.predict_noise(z_t, t, v);
    auto residual = (eps - predicted).pow(2) * m;
    return residual.sum() / (cells * static_cast<double>(z0.size(1)));
}

std::optional<torch::Tensor> masked_ldm_loss(const SupportRecord& record, int t, const Latent& eps,
                                             const torch::Tensor& v, const Backbone& backbone) {
    check_image(record.image, "masked_ldm_loss image");
    check_mask(record.mask, "masked_ldm_loss mask");
    auto z0 = backbone.autoencoder->encode(record.image).data;
    auto mask = downsample_mask(record.mask, z0.size(2), z0.size(3)).unsqueeze(0);
    auto e = eps.data.dim() == 3 ? eps.data.unsqueeze(0) : eps.data;
    if (e.sizes() != z0.sizes()) throw ShapeError("masked_ldm_loss: eps shape does not match latent");
    auto tt = torch::full({1}, t, torch::kLong);
    return masked_ldm_loss(z0.to(e.scalar_type()), mask, tt, e, v, *backbone.denoiser, backbone.schedule);
}

InversionResult learn_embedding(const SupportSet& support, const Backbone& backbone, const AnomalyEmbedding& initial,
                                const InversionConfig& config, Rng& rng) {
    support.validate();
    config.validate();
    initial.validate();
    if (initial.dim() != backbone.cond_dim()) {
        throw ConfigurationError("embedding dimension does not match backbone conditioning dimension");
    }

    // Encode every record once; the backbone never changes during inversion.
    std::vector<torch::Tensor> latents;
    std::vector<torch::Tensor> masks;
    InversionResult result;
    for (const auto& record : support.records) {
        auto z0 = backbone.autoencoder->encode(record.image).data;
        auto m = config.mask_guided ? downsample_mask(record.mask, z0.size(2), z0.size(3))
                                    : torch::ones({z0.size(2), z0.size(3)}, torch::kFloat);
        if (m.sum().item<double>() <= 0.0) {
            log::warn("support record '" + record.id + "' has an empty latent mask; skipping it");
            ++result.skipped_records;
            continue;
        }
        latents.push_back(z0);
        masks.push_back(m.unsqueeze(0));
    }
    if (latents.empty()) throw DataError("every support record was skipped (empty latent masks)");

    const auto& schedule = backbone.schedule;
    const auto& model = *backbone.denoiser;
    FreezeGuard freeze(model);

    auto v = initial.v.detach().clone().to(torch::kFloat).set_requires_grad(true);
    std::unique_ptr<torch::optim::Optimizer> optimizer;
    if (config.optimizer == OptimizerKind::adam) {
        optimizer = std::make_unique<torch::optim::Adam>(std::vector<torch::Tensor>{v},
                                                         torch::optim::AdamOptions(config.learning_rate));
    } else {
        optimizer = std::make_unique<torch::optim::SGD>(std::vector<torch::Tensor>{v},
                                                        torch::optim::SGDOptions(config.learning_rate));
    }

    auto probe_loss = [&](const torch::Tensor& vec) {
        if (config.probe_count == 0) return 0.0;
        torch::NoGradGuard no_grad;
        Rng probe_rng = rng.fork("inversion-probes");
        double total = 0.0;
        for (int i = 0; i < config.probe_count; ++i) {
            const auto r = static_cast<std::size_t>(i) % latents.size();
            auto t = probe_rng.randint(1, schedule.T, {1});
            auto eps = probe_rng.randn(latents[r].sizes());
            total += masked_ldm_loss(latents[r], masks[r], t, eps, vec, model, schedule)->item<double>();
        }
        return total / config.probe_count;
    };
    result.initial_probe_loss = probe_loss(v.detach());

    Rng train_rng = rng.fork("inversion");
    auto last_finite = v.detach().clone();
    result.loss_curve.reserve(static_cast<std::size_t>(config.iterations));
    for (int it = 0; it < config.iterations; ++it) {
        const auto r = static_cast<std::size_t>(it) % latents.size();
        auto t = train_rng.randint(1, schedule.T, {1});
        auto eps = train_rng.randn(latents[r].sizes());
        auto loss = *masked_ldm_loss(latents[r], masks[r], t, eps, v, model, schedule);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            AnomalyEmbedding last = initial;
            last.v = last_finite;
            throw EmbeddingDivergedError("embedding inversion diverged at iteration " + std::to_string(it), last);
        }
        optimizer->zero_grad();
        loss.backward();
        optimizer->step();
        result.loss_curve.push_back(value);
        if (!torch::isfinite(v).all().item<bool>()) {
            AnomalyEmbedding last = initial;
            last.v = last_finite;
            throw EmbeddingDivergedError("embedding became non-finite at iteration " + std::to_string(it), last);
        }
        last_finite = v.detach().clone();
    }

    result.final_probe_loss = probe_loss(v.detach());
    result.embedding = initial;
    result.embedding.v = v.detach().clone();
    result.embedding.category = support.category;
    result.embedding.anomaly_type = support.anomaly_type;
    result.embedding.config = config;
    result.embedding.support_fingerprint.clear();
    for (const auto& record : support.records) {
        result.embedding.support_fingerprint.push_back(hex64(fnv1a64(record.image)));
    }
    return result;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& curve) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write loss curve: " + path.string());
    out << "iteration,loss\n" << std::setprecision(9);
    for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
}

}  // namespace anogen
