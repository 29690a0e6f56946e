#include "anogen/diffusion/schedule.hpp"

#include <cmath>
#include <numbers>

#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {

std::string to_string(ScheduleKind kind) {
    return kind == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw ParameterError("unknown schedule kind: " + name);
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T) throw ParameterError("timestep out of range: " + std::to_string(t));
    return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
    if (t < 1 || t > T) throw ParameterError("timestep out of range: " + std::to_string(t));
    return alphas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > T) throw ParameterError("timestep out of range: " + std::to_string(t));
    return alpha_bars[static_cast<std::size_t>(t - 1)];
}

torch::Tensor NoiseSchedule::alpha_bar_tensor(const torch::Tensor& t) const {
    auto table = torch::empty({T + 1}, torch::kDouble);
    auto acc = table.accessor<double, 1>();
    acc[0] = 1.0;
    for (int i = 1; i <= T; ++i) acc[i] = alpha_bars[static_cast<std::size_t>(i - 1)];
    auto idx = t.to(torch::kLong);
    if (idx.numel() > 0 && (idx.min().item<std::int64_t>() < 0 || idx.max().item<std::int64_t>() > T)) {
        throw ParameterError("timestep out of range in batch");
    }
    return table.index_select(0, idx.flatten()).view(idx.sizes());
}

void NoiseSchedule::validate() const {
    if (T < 1) throw ParameterError("schedule needs T >= 1");
    const auto n = static_cast<std::size_t>(T);
    if (betas.size() != n || alphas.size() != n || alpha_bars.size() != n) {
        throw ParameterError("schedule vectors must have length T");
    }
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
            throw ParameterError("beta_" + std::to_string(i + 1) + " outside (0, 1)");
        }
        prod *= alphas[i];
        if (std::abs(alpha_bars[i] - prod) > 1e-12) {
            throw ParameterError("alpha_bar is not the cumulative product of alphas");
        }
        if (i > 0 && !(alpha_bars[i] < alpha_bars[i - 1])) {
            throw ParameterError("alpha_bar must be strictly decreasing");
        }
    }
}

NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alphas.reserve(s.betas.size());
    s.alpha_bars.reserve(s.betas.size());
    double prod = 1.0;
    for (double b : s.betas) {
        s.alphas.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bars.push_back(prod);
    }
    s.validate();
    return s;
}

NoiseSchedule make_schedule(int T, ScheduleKind kind, double beta_min, double beta_max) {
    if (T < 1) throw ParameterError("make_schedule: T must be >= 1");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
        throw ParameterError("make_schedule: need 0 < beta_min <= beta_max < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::linear) {
        for (int i = 0; i < T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
            betas[static_cast<std::size_t>(i)] = beta_min + frac * (beta_max - beta_min);
        }
    } else {
        constexpr double s = 0.008;
        auto f = [&](int t) {
            const double x = (static_cast<double>(t) / T + s) / (1.0 + s) * std::numbers::pi / 2.0;
            return std::cos(x) * std::cos(x);
        };
        for (int t = 1; t <= T; ++t) {
            const double b = 1.0 - f(t) / f(t - 1);
            betas[static_cast<std::size_t>(t - 1)] = std::clamp(b, beta_min, beta_max);
        }
    }
    return schedule_from_betas(std::move(betas));
}

std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps) {
    if (steps < 1 || steps > schedule.T) {
        throw ParameterError("sampling steps must be in [1, T]");
    }
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        // Evenly spaced from T down to 1 (inclusive of T).
        const double pos = static_cast<double>(schedule.T) -
                           static_cast<double>(i) * static_cast<double>(schedule.T) / steps;
        int t = static_cast<int>(std::lround(pos));
        t = std::clamp(t, 1, schedule.T);
        if (!out.empty() && t >= out.back()) t = out.back() - 1;
        out.push_back(t);
    }
    return out;
}

}  // namespace anogen
