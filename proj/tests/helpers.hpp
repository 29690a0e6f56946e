#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "anogen/diffusion/backbone.hpp"
#include "anogen/diffusion/models.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name)
        : path_(std::filesystem::temp_directory_path() / ("anogen-test-" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ignored;
        std::filesystem::remove_all(path_, ignored);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

// Small backbone on 3-channel images: identity autoencoder and a narrow U-Net.
inline anogen::Backbone tiny_backbone(std::int64_t cond_dim = 16, int T = 20, std::uint64_t seed = 7) {
    torch::manual_seed(seed);
    anogen::TinyUNetOptions o;
    o.latent_channels = 3;
    o.base_channels = 8;
    o.cond_dim = cond_dim;
    o.attention_dim = 8;
    o.time_dim = 8;
    o.num_timesteps = T;
    anogen::Backbone b;
    b.autoencoder = std::make_shared<anogen::IdentityAutoencoder>(3);
    b.denoiser = std::make_shared<anogen::TinyDenoiser>(o);
    b.schedule = anogen::make_schedule(T, anogen::ScheduleKind::linear, 1e-3, 0.2);
    return b;
}

// Returns its input noise estimate as a fixed affine map; used as a hand-checkable model.
class AffineDenoiser final : public anogen::Denoiser {
public:
    AffineDenoiser(double weight, double cond_weight, std::int64_t channels, std::int64_t dim)
        : weight_(weight), cond_weight_(cond_weight), channels_(channels), dim_(dim) {}

    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor&,
                                const torch::Tensor& cond) const override {
        return weight_ * z_t + cond_weight_ * cond.sum();
    }
    std::int64_t cond_dim() const override { return dim_; }
    std::int64_t latent_channels() const override { return channels_; }
    torch::Tensor flat_parameters() const override { return torch::tensor({weight_, cond_weight_}); }
    std::vector<torch::Tensor> parameters() const override { return {}; }

private:
    double weight_;
    double cond_weight_;
    std::int64_t channels_;
    std::int64_t dim_;
};

// Predicts a fixed tensor regardless of input.
class ConstantDenoiser final : public anogen::Denoiser {
public:
    ConstantDenoiser(torch::Tensor value, std::int64_t dim) : value_(std::move(value)), dim_(dim) {}
    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor&, const torch::Tensor&) const override {
        return value_.expand_as(z_t).clone();
    }
    std::int64_t cond_dim() const override { return dim_; }
    std::int64_t latent_channels() const override { return value_.size(-3); }
    torch::Tensor flat_parameters() const override { return value_.flatten(); }
    std::vector<torch::Tensor> parameters() const override { return {}; }

private:
    torch::Tensor value_;
    std::int64_t dim_;
};

// Exhaustive pair counting: P(score_pos > score_neg) + 0.5 P(equal).
inline double brute_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!l[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (l[j]) continue;
            pairs += 1.0;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

// Enumerates every distinct threshold from high to low; AP = Σ (R_k − R_{k−1}) P_k.
inline double brute_aupr(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    std::vector<double> thresholds(s.begin(), s.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    double positives = 0.0;
    for (auto v : l) positives += v;
    double ap = 0.0;
    double prev_recall = 0.0;
    for (double th : thresholds) {
        double tp = 0.0;
        double predicted = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= th) {
                predicted += 1.0;
                tp += l[i];
            }
        }
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    return ap;
}

// Direct loop evaluation of mean SSIM with an 11x11 Gaussian window (sigma 1.5),
// zero padding outside the image, C1 = 0.01^2, C2 = 0.03^2.
inline double loop_ssim(const torch::Tensor& a, const torch::Tensor& b) {
    const int C = static_cast<int>(a.size(0));
    const int H = static_cast<int>(a.size(1));
    const int W = static_cast<int>(a.size(2));
    auto A = a.to(torch::kDouble).contiguous();
    auto B = b.to(torch::kDouble).contiguous();
    auto pa = A.accessor<double, 3>();
    auto pb = B.accessor<double, 3>();
    double g[11];
    double gsum = 0.0;
    for (int i = 0; i < 11; ++i) {
        g[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
        gsum += g[i];
    }
    for (double& v : g) v /= gsum;
    const double c1 = 1e-4;
    const double c2 = 9e-4;
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int dy = -5; dy <= 5; ++dy) {
                    for (int dx = -5; dx <= 5; ++dx) {
                        const int yy_ = y + dy;
                        const int xx_ = x + dx;
                        if (yy_ < 0 || yy_ >= H || xx_ < 0 || xx_ >= W) continue;
                        const double w = g[dy + 5] * g[dx + 5];
                        const double u = pa[c][yy_][xx_];
                        const double v = pb[c][yy_][xx_];
                        mx += w * u;
                        my += w * v;
                        xx += w * u * u;
                        yy += w * v * v;
                        xy += w * u * v;
                    }
                }
                const double vx = xx - mx * mx;
                const double vy = yy - my * my;
                const double cxy = xy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    return total / (C * H * W);
}

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace testing
