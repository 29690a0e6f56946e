#pragma once

#include <string>
#include <vector>

#include <torch/types.h>

namespace anogen {

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

// Per-timestep diffusion coefficients. Timesteps are 1-based: t in [1, T],
// and alpha_bar(0) is defined as 1 (clean data).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    double beta(int t) const;
    double alpha(int t) const;
    double alpha_bar(int t) const;

    // ᾱ_t for a batch of int64 timesteps, shaped (N) as float64.
    torch::Tensor alpha_bar_tensor(const torch::Tensor& t) const;

    // Throws ParameterError if any invariant is violated.
    void validate() const;
};

// For `linear`, betas are evenly spaced in [beta_min, beta_max]. For `cosine`,
// betas follow the squared-cosine ᾱ curve and are clipped into [beta_min, beta_max].
NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_min, double beta_max);

// Build a schedule from explicit betas (e.g. read from an external model).
NoiseSchedule schedule_from_betas(std::vector<double> betas);

// Evenly spaced descending timesteps T..1 of length `steps`, always starting at T.
std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps);

}  // namespace anogen
