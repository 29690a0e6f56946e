#pragma once

#include <memory>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/types.h>

#include "anogen/diffusion/latent.hpp"
#include "anogen/diffusion/layers.hpp"

namespace anogen {

// Maps pixel images (N, 3, H, W) in [0, 1] to latents and back.
class Autoencoder {
public:
    virtual ~Autoencoder() = default;

    virtual Latent encode(const torch::Tensor& images) const = 0;
    virtual torch::Tensor decode(const Latent& latent) const = 0;

    virtual int stride() const = 0;
    virtual std::int64_t latent_channels() const = 0;
    // Mean squared round-trip error measured when the model was fit (0 for identity).
    virtual double reconstruction_tolerance() const = 0;
};

// Noise predictor ε_θ(z_t, t, c). `cond` is a conditioning context of shape
// (N, L, d) or (N, d) / (d) which is treated as a length-1 context.
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                        const torch::Tensor& cond) const = 0;

    virtual std::int64_t cond_dim() const = 0;
    virtual std::int64_t latent_channels() const = 0;

    // Read-only copy of every parameter concatenated into one 1-D tensor.
    virtual torch::Tensor flat_parameters() const = 0;
    // Live parameter tensors, for freezing and optimisation.
    virtual std::vector<torch::Tensor> parameters() const = 0;
};

// Turns a token into a conditioning vector of dimension dim().
class ConditionEncoder {
public:
    virtual ~ConditionEncoder() = default;
    virtual torch::Tensor encode_token(const std::string& token) const = 0;
    virtual std::int64_t dim() const = 0;
};

// Sum of token vectors; used to build captions for backbone training.
torch::Tensor encode_caption(const ConditionEncoder& encoder, const std::vector<std::string>& tokens);

// ---------------------------------------------------------------------------
// Desk-scale reference models.

class IdentityAutoencoder final : public Autoencoder {
public:
    explicit IdentityAutoencoder(std::int64_t channels = 3) : channels_(channels) {}

    Latent encode(const torch::Tensor& images) const override;
    torch::Tensor decode(const Latent& latent) const override;
    int stride() const override { return 1; }
    std::int64_t latent_channels() const override { return channels_; }
    double reconstruction_tolerance() const override { return 0.0; }

private:
    std::int64_t channels_;
};

struct ConvAutoencoderOptions {
    std::int64_t image_channels = 3;
    std::int64_t latent_channels = 4;
    std::int64_t hidden_channels = 32;
};

// Stride-2 convolutional autoencoder. Latents are divided by `scale` so that
// they have roughly unit variance over the training corpus.
class ConvAutoencoderImpl : public torch::nn::Module {
public:
    explicit ConvAutoencoderImpl(ConvAutoencoderOptions options = {});

    torch::Tensor encode_raw(const torch::Tensor& images);
    torch::Tensor decode_raw(const torch::Tensor& latents);

    const ConvAutoencoderOptions& options() const { return options_; }

private:
    ConvAutoencoderOptions options_;
    torch::nn::Sequential encoder_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(ConvAutoencoder);

class TinyAutoencoder final : public Autoencoder {
public:
    explicit TinyAutoencoder(ConvAutoencoderOptions options = {});

    Latent encode(const torch::Tensor& images) const override;
    torch::Tensor decode(const Latent& latent) const override;
    int stride() const override { return 2; }
    std::int64_t latent_channels() const override { return net_->options().latent_channels; }
    double reconstruction_tolerance() const override { return tolerance_; }

    ConvAutoencoder& net() { return net_; }
    const ConvAutoencoder& net() const { return net_; }
    double scale() const { return scale_; }
    void set_scale(double scale) { scale_ = scale; }
    void set_reconstruction_tolerance(double tol) { tolerance_ = tol; }

private:
    mutable ConvAutoencoder net_;
    double scale_ = 1.0;
    double tolerance_ = 0.0;
};

struct TinyUNetOptions {
    std::int64_t latent_channels = 4;
    std::int64_t base_channels = 32;
    std::int64_t cond_dim = 768;
    std::int64_t attention_dim = 64;
    std::int64_t time_dim = 64;
    int num_timesteps = 1000;
};

// Two-level U-Net with timestep embedding and cross-attention against the
// conditioning context at both resolutions. A learned start token is prepended
// to the context, as text encoders emit one before the prompt tokens.
class TinyUNetImpl : public torch::nn::Module {
public:
    explicit TinyUNetImpl(TinyUNetOptions options = {});

    torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context);

    const TinyUNetOptions& options() const { return options_; }

private:
    TinyUNetOptions options_;
    torch::Tensor start_token_;
    torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr};
    torch::nn::Conv2d conv_in_{nullptr};
    ResBlock res_hi_{nullptr};
    torch::nn::Conv2d down_{nullptr};
    ResBlock res_lo_{nullptr};
    CrossAttention attn_lo_{nullptr};
    ResBlock res_mid_{nullptr};
    torch::nn::Conv2d up_conv_{nullptr};
    ResBlock res_up_{nullptr};
    CrossAttention attn_hi_{nullptr};
    torch::nn::GroupNorm norm_out_{nullptr};
    torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(TinyUNet);

class TinyDenoiser final : public Denoiser {
public:
    explicit TinyDenoiser(TinyUNetOptions options = {});

    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                const torch::Tensor& cond) const override;
    std::int64_t cond_dim() const override { return net_->options().cond_dim; }
    std::int64_t latent_channels() const override { return net_->options().latent_channels; }
    torch::Tensor flat_parameters() const override;
    std::vector<torch::Tensor> parameters() const override;

    TinyUNet& net() { return net_; }
    const TinyUNet& net() const { return net_; }

private:
    mutable TinyUNet net_;
};

// Deterministic token → vector map: FNV-1a hash of the token seeds a Gaussian
// stream. Stands in for a text encoder at desk scale.
class HashConditionEncoder final : public ConditionEncoder {
public:
    explicit HashConditionEncoder(std::int64_t dim = 768) : dim_(dim) {}
    torch::Tensor encode_token(const std::string& token) const override;
    std::int64_t dim() const override { return dim_; }

private:
    std::int64_t dim_;
};

// Token vectors read from a JSON object {"token": [floats...], ...}; used to
// supply precomputed text-encoder outputs for external backbones.
class TableConditionEncoder final : public ConditionEncoder {
public:
    static TableConditionEncoder from_file(const std::string& path);
    explicit TableConditionEncoder(std::vector<std::pair<std::string, torch::Tensor>> table);

    torch::Tensor encode_token(const std::string& token) const override;
    std::int64_t dim() const override { return dim_; }

private:
    std::vector<std::pair<std::string, torch::Tensor>> table_;
    std::int64_t dim_ = 0;
};

// Normalise a conditioning argument to a (N, L, d) context.
torch::Tensor as_context(const torch::Tensor& cond, std::int64_t batch);

}  // namespace anogen
