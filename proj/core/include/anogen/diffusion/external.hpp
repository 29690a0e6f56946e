#pragma once

#include <filesystem>
#include <memory>

#include "anogen/diffusion/backbone.hpp"

namespace anogen {

// Loads an externally supplied pretrained latent diffusion model exported as
// TorchScript. The directory must contain:
//
//   encoder.pt   forward(images[N,3,H,W] in [0,1]) -> latents[N,C,h,w]
//   decoder.pt   forward(latents) -> images in [0,1]
//   unet.pt      forward(z_t, t[int64 N], context[N,L,d]) -> predicted noise
//   backbone.json {"schema_version": 1, "stride": s, "latent_channels": C,
//                  "cond_dim": d, "betas": [...]}
//
// Latent scaling, if any, must be folded into encoder/decoder.
Backbone load_external_backbone(const std::filesystem::path& directory);

}  // namespace anogen
