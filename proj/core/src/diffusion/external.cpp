#include "anogen/diffusion/external.hpp"

#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/script.h>
#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {
namespace {

torch::jit::Module load_module(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw CheckpointError("missing external model file: " + path.string());
    try {
        auto module = torch::jit::load(path.string());
        module.eval();
        return module;
    } catch (const c10::Error& e) {
        throw CheckpointError("cannot load TorchScript module " + path.string() + ": " + e.what_without_backtrace());
    }
}

class ScriptedAutoencoder final : public Autoencoder {
public:
    ScriptedAutoencoder(torch::jit::Module encoder, torch::jit::Module decoder, int stride, std::int64_t channels)
        : encoder_(std::move(encoder)), decoder_(std::move(decoder)), stride_(stride), channels_(channels) {}

    Latent encode(const torch::Tensor& images) const override {
        torch::NoGradGuard no_grad;
        auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
        return {encoder_.forward({batch}).toTensor(), stride_};
    }

    torch::Tensor decode(const Latent& latent) const override {
        torch::NoGradGuard no_grad;
        auto z = latent.data.dim() == 3 ? latent.data.unsqueeze(0) : latent.data;
        return decoder_.forward({z}).toTensor().clamp(0.0, 1.0);
    }

    int stride() const override { return stride_; }
    std::int64_t latent_channels() const override { return channels_; }
    double reconstruction_tolerance() const override { return 0.0; }

private:
    mutable torch::jit::Module encoder_;
    mutable torch::jit::Module decoder_;
    int stride_;
    std::int64_t channels_;
};

class ScriptedDenoiser final : public Denoiser {
public:
    ScriptedDenoiser(torch::jit::Module unet, std::int64_t cond_dim, std::int64_t channels)
        : unet_(std::move(unet)), cond_dim_(cond_dim), channels_(channels) {}

    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                const torch::Tensor& cond) const override {
        if (cond.size(-1) != cond_dim_) throw ShapeError("external denoiser: conditioning dimension mismatch");
        auto ctx = as_context(cond, z_t.size(0)).to(z_t.scalar_type());
        return unet_.forward({z_t, t.to(torch::kLong), ctx}).toTensor();
    }

    std::int64_t cond_dim() const override { return cond_dim_; }
    std::int64_t latent_channels() const override { return channels_; }

    torch::Tensor flat_parameters() const override {
        std::vector<torch::Tensor> flat;
        for (const auto& p : unet_.parameters()) flat.push_back(p.detach().flatten().clone());
        return flat.empty() ? torch::empty({0}) : torch::cat(flat);
    }

    std::vector<torch::Tensor> parameters() const override {
        std::vector<torch::Tensor> out;
        for (const auto& p : unet_.parameters()) out.push_back(p);
        return out;
    }

private:
    mutable torch::jit::Module unet_;
    std::int64_t cond_dim_;
    std::int64_t channels_;
};

}  // namespace

Backbone load_external_backbone(const std::filesystem::path& directory) {
    const auto meta_path = directory / "backbone.json";
    std::ifstream in(meta_path);
    if (!in) throw CheckpointError("missing " + meta_path.string());
    nlohmann::json meta;
    in >> meta;
    if (meta.value("schema_version", 0) != 1) throw CheckpointError("unsupported external backbone schema version");
    const int stride = meta.at("stride");
    const std::int64_t channels = meta.at("latent_channels");
    const std::int64_t cond_dim = meta.at("cond_dim");

    Backbone backbone;
    backbone.schedule = schedule_from_betas(meta.at("betas").get<std::vector<double>>());
    backbone.autoencoder = std::make_shared<ScriptedAutoencoder>(
        load_module(directory / "encoder.pt"), load_module(directory / "decoder.pt"), stride, channels);
    backbone.denoiser = std::make_shared<ScriptedDenoiser>(load_module(directory / "unet.pt"), cond_dim, channels);
    return backbone;
}

}  // namespace anogen
