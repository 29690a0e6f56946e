#include "anogen/diffusion/layers.hpp"

#include <cmath>

#include <torch/torch.h>

namespace anogen {

namespace nn = torch::nn;

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
    const std::int64_t half = dim / 2;
    auto options = torch::TensorOptions().dtype(torch::kFloat);
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, options) / static_cast<double>(half));
    auto args = t.to(torch::kFloat).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
    if (dim % 2 == 1) {
        emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, options)}, 1);
    }
    return emb;
}

ResBlockImpl::ResBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t time_dim) {
    norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(std::min<std::int64_t>(8, in_channels), in_channels)));
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    time_proj_ = register_module("time_proj", nn::Linear(time_dim, out_channels));
    norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(std::min<std::int64_t>(8, out_channels), out_channels)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    if (in_channels != out_channels) {
        skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    h = h + time_proj_(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1).to(h.scalar_type());
    h = conv2_(torch::silu(norm2_(h)));
    return (skip_ ? skip_(x) : x) + h;
}

CrossAttentionImpl::CrossAttentionImpl(std::int64_t channels, std::int64_t context_dim,
                                       std::int64_t attention_dim)
    : attention_dim_(attention_dim) {
    norm_ = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(std::min<std::int64_t>(8, channels), channels)));
    to_q_ = register_module("to_q", nn::Conv2d(nn::Conv2dOptions(channels, attention_dim, 1)));
    to_k_ = register_module("to_k", nn::Linear(context_dim, attention_dim));
    to_v_ = register_module("to_v", nn::Linear(context_dim, attention_dim));
    to_out_ = register_module("to_out", nn::Conv2d(nn::Conv2dOptions(attention_dim, channels, 1)));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto n = x.size(0);
    const auto h = x.size(2);
    const auto w = x.size(3);
    auto q = to_q_(norm_(x)).flatten(2).transpose(1, 2);  // (N, HW, a)
    auto k = to_k_(context);                                // (N, L, a)
    auto v = to_v_(context);                                // (N, L, a)
    auto weights = torch::softmax(torch::bmm(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(attention_dim_)), -1);
    auto attended = torch::bmm(weights, v).transpose(1, 2).reshape({n, attention_dim_, h, w});
    return x + to_out_(attended);
}

}  // namespace anogen
