#include "anogen/diffusion/models.hpp"

#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/hashing.hpp"
#include "anogen/random.hpp"

namespace anogen {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv3(std::int64_t in, std::int64_t out, std::int64_t stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).stride(stride));
}

torch::Tensor as_image_batch(const torch::Tensor& images) {
    if (images.dim() == 3) return images.unsqueeze(0);
    if (images.dim() != 4) throw ShapeError("expected (C, H, W) or (N, C, H, W) images");
    return images;
}

}  // namespace

torch::Tensor as_context(const torch::Tensor& cond, std::int64_t batch) {
    if (!cond.defined()) throw ShapeError("conditioning tensor is undefined");
    torch::Tensor ctx;
    switch (cond.dim()) {
        case 1: ctx = cond.view({1, 1, cond.size(0)}); break;
        case 2: ctx = cond.unsqueeze(1); break;
        case 3: ctx = cond; break;
        default: throw ShapeError("conditioning must be (d), (N, d) or (N, L, d)");
    }
    if (ctx.size(0) == 1 && batch > 1) {
        ctx = ctx.expand({batch, ctx.size(1), ctx.size(2)});
    } else if (ctx.size(0) != batch) {
        throw ShapeError("conditioning batch does not match latent batch");
    }
    return ctx;
}

torch::Tensor encode_caption(const ConditionEncoder& encoder, const std::vector<std::string>& tokens) {
    auto out = torch::zeros({encoder.dim()}, torch::kFloat);
    for (const auto& token : tokens) out += encoder.encode_token(token);
    return out;
}

// ---------------------------------------------------------------------------

Latent IdentityAutoencoder::encode(const torch::Tensor& images) const {
    auto batch = as_image_batch(images);
    if (batch.size(1) != channels_) throw ShapeError("identity autoencoder: channel mismatch");
    return {batch.clone(), 1};
}

torch::Tensor IdentityAutoencoder::decode(const Latent& latent) const {
    return as_image_batch(latent.data).clone();
}

// ---------------------------------------------------------------------------

ConvAutoencoderImpl::ConvAutoencoderImpl(ConvAutoencoderOptions options) : options_(options) {
    const auto h = options.hidden_channels;
    encoder_ = register_module("encoder", nn::Sequential(
        conv3(options.image_channels, h), nn::SiLU(),
        conv3(h, h, 2), nn::SiLU(),
        conv3(h, h), nn::SiLU(),
        nn::Conv2d(nn::Conv2dOptions(h, options.latent_channels, 1))));
    decoder_ = register_module("decoder", nn::Sequential(
        conv3(options.latent_channels, h), nn::SiLU(),
        nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)),
        conv3(h, h), nn::SiLU(),
        conv3(h, h), nn::SiLU(),
        conv3(h, options.image_channels)));
}

torch::Tensor ConvAutoencoderImpl::encode_raw(const torch::Tensor& images) {
    return encoder_->forward(images * 2.0 - 1.0);
}

torch::Tensor ConvAutoencoderImpl::decode_raw(const torch::Tensor& latents) {
    return decoder_->forward(latents) * 0.5 + 0.5;
}

TinyAutoencoder::TinyAutoencoder(ConvAutoencoderOptions options) : net_(options) {}

Latent TinyAutoencoder::encode(const torch::Tensor& images) const {
    torch::NoGradGuard no_grad;
    auto batch = as_image_batch(images);
    if (batch.size(2) % 2 != 0 || batch.size(3) % 2 != 0) {
        throw ShapeError("tiny autoencoder needs even image dimensions");
    }
    return {net_->encode_raw(batch) / scale_, 2};
}

torch::Tensor TinyAutoencoder::decode(const Latent& latent) const {
    torch::NoGradGuard no_grad;
    auto z = latent.data.dim() == 3 ? latent.data.unsqueeze(0) : latent.data;
    return net_->decode_raw(z * scale_).clamp(0.0, 1.0);
}

// ---------------------------------------------------------------------------

TinyUNetImpl::TinyUNetImpl(TinyUNetOptions options) : options_(options) {
    const auto b = options.base_channels;
    const auto td = options.time_dim;
    start_token_ = register_parameter("start_token", torch::randn({options.cond_dim}));
    time_fc1_ = register_module("time_fc1", nn::Linear(td, td));
    time_fc2_ = register_module("time_fc2", nn::Linear(td, td));
    conv_in_ = register_module("conv_in", conv3(options.latent_channels, b));
    res_hi_ = register_module("res_hi", ResBlock(b, b, td));
    down_ = register_module("down", conv3(b, 2 * b, 2));
    res_lo_ = register_module("res_lo", ResBlock(2 * b, 2 * b, td));
    attn_lo_ = register_module("attn_lo", CrossAttention(2 * b, options.cond_dim, options.attention_dim));
    res_mid_ = register_module("res_mid", ResBlock(2 * b, 2 * b, td));
    up_conv_ = register_module("up_conv", conv3(2 * b, b));
    res_up_ = register_module("res_up", ResBlock(2 * b, b, td));
    attn_hi_ = register_module("attn_hi", CrossAttention(b, options.cond_dim, options.attention_dim));
    norm_out_ = register_module("norm_out", nn::GroupNorm(nn::GroupNormOptions(8, b)));
    conv_out_ = register_module("conv_out", conv3(b, options.latent_channels));
}

torch::Tensor TinyUNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor& context) {
    auto temb = timestep_embedding(t, options_.time_dim).to(z_t.scalar_type());
    temb = time_fc2_(torch::silu(time_fc1_(temb)));
    auto start = start_token_.to(context.scalar_type()).view({1, 1, -1}).expand({context.size(0), 1, context.size(2)});
    const auto ctx = torch::cat({start, context}, 1);

    auto h_hi = res_hi_(conv_in_(z_t), temb);
    auto h_lo = res_lo_(down_(h_hi), temb);
    h_lo = attn_lo_(h_lo, ctx);
    h_lo = res_mid_(h_lo, temb);

    auto up = torch::upsample_nearest2d(h_lo, std::vector<std::int64_t>{h_hi.size(2), h_hi.size(3)});
    auto u = res_up_(torch::cat({up_conv_(up), h_hi}, 1), temb);
    u = attn_hi_(u, ctx);
    return conv_out_(torch::silu(norm_out_(u)));
}

TinyDenoiser::TinyDenoiser(TinyUNetOptions options) : net_(options) {}

torch::Tensor TinyDenoiser::predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                          const torch::Tensor& cond) const {
    if (z_t.dim() != 4) throw ShapeError("predict_noise: z_t must be (N, C, h, w)");
    if (z_t.size(1) != latent_channels()) throw ShapeError("predict_noise: latent channel mismatch");
    if (z_t.size(2) % 2 != 0 || z_t.size(3) % 2 != 0) throw ShapeError("predict_noise: latent dims must be even");
    if (cond.size(-1) != cond_dim()) {
        throw ShapeError("predict_noise: conditioning dimension " + std::to_string(cond.size(-1)) +
                         " does not match model dimension " + std::to_string(cond_dim()));
    }
    auto ctx = as_context(cond, z_t.size(0)).to(z_t.scalar_type());
    return net_->forward(z_t, t, ctx);
}

torch::Tensor TinyDenoiser::flat_parameters() const {
    std::vector<torch::Tensor> flat;
    for (const auto& p : net_->parameters()) flat.push_back(p.detach().flatten().clone());
    return torch::cat(flat);
}

std::vector<torch::Tensor> TinyDenoiser::parameters() const { return net_->parameters(); }

// ---------------------------------------------------------------------------

torch::Tensor HashConditionEncoder::encode_token(const std::string& token) const {
    if (token.empty()) throw InitializationError("cannot encode an empty token");
    Rng rng(fnv1a64(token));
    auto out = torch::empty({dim_}, torch::kFloat);
    auto acc = out.accessor<float, 1>();
    for (std::int64_t i = 0; i < dim_; ++i) acc[i] = static_cast<float>(rng.normal());
    return out;
}

TableConditionEncoder::TableConditionEncoder(std::vector<std::pair<std::string, torch::Tensor>> table)
    : table_(std::move(table)) {
    if (table_.empty()) throw InitializationError("token table is empty");
    dim_ = table_.front().second.numel();
    for (const auto& [token, vec] : table_) {
        if (vec.numel() != dim_) throw InitializationError("token table has inconsistent dimensions");
    }
}

TableConditionEncoder TableConditionEncoder::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InitializationError("cannot open token table: " + path);
    nlohmann::json j;
    in >> j;
    std::vector<std::pair<std::string, torch::Tensor>> table;
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto values = it.value().get<std::vector<float>>();
        table.emplace_back(it.key(), torch::tensor(values, torch::kFloat));
    }
    return TableConditionEncoder(std::move(table));
}

torch::Tensor TableConditionEncoder::encode_token(const std::string& token) const {
    for (const auto& [name, vec] : table_) {
        if (name == token) return vec.clone();
    }
    throw InitializationError("token not in table: " + token);
}

}  // namespace anogen
