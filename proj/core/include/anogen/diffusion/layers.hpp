#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>

namespace anogen {

// Sinusoidal embedding of integer timesteps, (N) -> (N, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

// GroupNorm → SiLU → conv, twice, with the timestep embedding added in between.
class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t time_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

// Single-head cross-attention: queries from the feature map, keys and values
// from a (N, L, d) conditioning context. Residual output.
class CrossAttentionImpl : public torch::nn::Module {
public:
    CrossAttentionImpl(std::int64_t channels, std::int64_t context_dim, std::int64_t attention_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

private:
    std::int64_t attention_dim_;
    torch::nn::GroupNorm norm_{nullptr};
    torch::nn::Conv2d to_q_{nullptr}, to_out_{nullptr};
    torch::nn::Linear to_k_{nullptr}, to_v_{nullptr};
};
TORCH_MODULE(CrossAttention);

}  // namespace anogen
