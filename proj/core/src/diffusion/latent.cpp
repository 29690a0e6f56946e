#include "anogen/diffusion/latent.hpp"

#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {

void Latent::validate() const {
    if (!data.defined() || (data.dim() != 3 && data.dim() != 4)) {
        throw ShapeError("latent must be (C, h, w) or (N, C, h, w)");
    }
    if (stride < 1) {
        throw ParameterError("latent stride must be >= 1");
    }
    if (!torch::isfinite(data).all().item<bool>()) {
        throw ParameterError("latent has non-finite entries");
    }
}

}  // namespace anogen
