#pragma once

#include <string>

#include <torch/types.h>

#include "anogen/diffusion/latent.hpp"
#include "anogen/diffusion/models.hpp"
#include "anogen/diffusion/schedule.hpp"
#include "anogen/random.hpp"

namespace anogen {

enum class Sampler {
    ancestral,      // DDPM posterior sampling (fresh noise each step)
    deterministic,  // DDIM with eta = 0
};

std::string to_string(Sampler sampler);
Sampler sampler_from_string(const std::string& name);

// z_t = sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps.
Latent add_noise(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& schedule);

// Batched form: `t` is an int64 tensor of shape (N) and z0/eps are (N, C, h, w).
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule);

// Mean squared error between eps and ε_θ(add_noise(z0, t, eps), t, cond).
// Differentiable with respect to `cond` (and the model parameters, if trainable).
torch::Tensor ldm_loss(const Latent& z0, int t, const Latent& eps, const torch::Tensor& cond,
                       const Denoiser& model, const NoiseSchedule& schedule);

torch::Tensor ldm_loss(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const torch::Tensor& cond, const Denoiser& model, const NoiseSchedule& schedule);

// One reverse step t -> t_prev (t_prev defaults to t - 1; t_prev = 0 yields the
// clean estimate). The deterministic sampler injects no noise and ignores `rng`.
Latent denoise_step(const Latent& z_t, int t, const torch::Tensor& cond, const Denoiser& model,
                    const NoiseSchedule& schedule, Rng& rng, Sampler sampler, int t_prev = -1);

// Same step given an already computed noise prediction.
torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& predicted_noise, int t,
                           int t_prev, const NoiseSchedule& schedule, Rng& rng, Sampler sampler);

}  // namespace anogen
