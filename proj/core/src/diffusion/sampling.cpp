#include "anogen/diffusion/sampling.hpp"

#include <cmath>

#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {
namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                         c10::str(b.sizes()));
    }
}

torch::Tensor as_batch(const torch::Tensor& z) { return z.dim() == 3 ? z.unsqueeze(0) : z; }

}  // namespace

std::string to_string(Sampler sampler) {
    return sampler == Sampler::ancestral ? "ancestral" : "deterministic";
}

Sampler sampler_from_string(const std::string& name) {
    if (name == "ancestral") return Sampler::ancestral;
    if (name == "deterministic") return Sampler::deterministic;
    throw ParameterError("unknown sampler: " + name);
}

Latent add_noise(const Latent& z0, int t, const Latent& eps, const NoiseSchedule& schedule) {
    require_same_shape(z0.data, eps.data, "add_noise");
    if (t < 1 || t > schedule.T) throw ParameterError("add_noise: t out of range");
    const double ab = schedule.alpha_bar(t);
    return {std::sqrt(ab) * z0.data + std::sqrt(1.0 - ab) * eps.data, z0.stride};
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                        const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "add_noise");
    if (z0.dim() != 4 || t.dim() != 1 || t.size(0) != z0.size(0)) {
        throw ShapeError("add_noise: expected z0 (N, C, h, w) and t (N)");
    }
    auto ab = schedule.alpha_bar_tensor(t).to(z0.scalar_type()).view({-1, 1, 1, 1});
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

torch::Tensor ldm_loss(const Latent& z0, int t, const Latent& eps, const torch::Tensor& cond,
                       const Denoiser& model, const NoiseSchedule& schedule) {
    auto zb = as_batch(z0.data);
    auto eb = as_batch(eps.data);
    auto tt = torch::full({zb.size(0)}, t, torch::kLong);
    return ldm_loss(zb, tt, eb, cond, model, schedule);
}

torch::Tensor ldm_loss(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const torch::Tensor& cond, const Denoiser& model, const NoiseSchedule& schedule) {
    auto z_t = add_noise(z0, t, eps, schedule);
    auto predicted = model.predict_noise(z_t, t, cond);
    require_same_shape(predicted, eps, "ldm_loss");
    return (eps - predicted).pow(2).mean();
}

torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& predicted_noise, int t,
                           int t_prev, const NoiseSchedule& schedule, Rng& rng, Sampler sampler) {
    if (t < 1 || t > schedule.T) throw ParameterError("denoise_step: t out of range");
    if (t_prev < 0 || t_prev >= t) throw ParameterError("denoise_step: need 0 <= t_prev < t");
    require_same_shape(z_t, predicted_noise, "denoise_step");
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    auto x0 = (z_t - std::sqrt(1.0 - ab_t) * predicted_noise) / std::sqrt(ab_t);
    // Generalised DDIM update; eta = 1 reproduces the DDPM posterior when t_prev = t - 1.
    const double eta = sampler == Sampler::ancestral ? 1.0 : 0.0;
    const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    auto out = std::sqrt(ab_prev) * x0 + dir * predicted_noise;
    if (sigma > 0.0) {
        out = out + sigma * rng.randn(z_t.sizes(), z_t.scalar_type());
    }
    return out;
}

Latent denoise_step(const Latent& z_t, int t, const torch::Tensor& cond, const Denoiser& model,
                    const NoiseSchedule& schedule, Rng& rng, Sampler sampler, int t_prev) {
    if (t < 1 || t > schedule.T) throw ParameterError("denoise_step: t out of range");
    if (t_prev < 0) t_prev = t - 1;
    auto zb = as_batch(z_t.data);
    torch::NoGradGuard no_grad;
    auto predicted = model.predict_noise(zb, torch::full({zb.size(0)}, t, torch::kLong), cond);
    auto out = reverse_step(zb, predicted, t, t_prev, schedule, rng, sampler);
    if (z_t.data.dim() == 3) out = out.squeeze(0);
    return {out, z_t.stride};
}

}  // namespace anogen
