#pragma once

#include <torch/types.h>

namespace anogen {

// Autoencoder output. `data` is (C, h, w) or batched (N, C, h, w); `stride` is
// the spatial downsampling factor relative to pixel space.
struct Latent {
    torch::Tensor data;
    int stride = 1;

    Latent() = default;
    Latent(torch::Tensor d, int s = 1) : data(std::move(d)), stride(s) {}

    std::int64_t height() const { return data.size(-2); }
    std::int64_t width() const { return data.size(-1); }
    std::int64_t channels() const { return data.size(-3); }

    // Throws ShapeError / ParameterError on non-finite entries, stride < 1 or bad rank.
    void validate() const;
};

}  // namespace anogen
