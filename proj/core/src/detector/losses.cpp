#include "anogen/detector/losses.hpp"

#include <cmath>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {

using nlohmann::json;

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

torch::Tensor gaussian_window(std::int64_t channels, torch::ScalarType dtype) {
    auto x = torch::arange(kSsimWindow, torch::TensorOptions().dtype(torch::kDouble)) - (kSsimWindow / 2);
    auto g = torch::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
    g = g / g.sum();
    auto w = torch::outer(g, g).to(dtype);
    return w.expand({channels, 1, kSsimWindow, kSsimWindow}).contiguous();
}

torch::Tensor as_batch4(const torch::Tensor& x) {
    if (x.dim() == 3) return x.unsqueeze(0);
    if (x.dim() == 4) return x;
    throw ShapeError("expected (C, H, W) or (N, C, H, W) images");
}

}  // namespace

void LossConfig::validate() const {
    if (lambda < 0.0) throw ParameterError("lambda must be >= 0");
    if (gamma < 0.0) throw ParameterError("focal gamma must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw ParameterError("focal alpha must be in [0, 1]");
    if (tau < 0.0 || tau > 1.0) throw ParameterError("tau must be in [0, 1]");
    if (mix_probability < 0.0 || mix_probability > 1.0) throw ParameterError("mix_probability must be in [0, 1]");
}

void to_json(json& j, const LossConfig& c) {
    j = json{{"lambda", c.lambda},
             {"gamma", c.gamma},
             {"alpha", c.alpha},
             {"tau", c.tau},
             {"mix_probability", c.mix_probability}};
}

void from_json(const json& j, LossConfig& c) {
    c.lambda = j.value("lambda", c.lambda);
    c.gamma = j.value("gamma", c.gamma);
    c.alpha = j.value("alpha", c.alpha);
    c.tau = j.value("tau", c.tau);
    c.mix_probability = j.value("mix_probability", c.mix_probability);
}

torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw ShapeError("ssim: image shapes differ");
    auto x = as_batch4(a);
    auto y = as_batch4(b);
    const auto channels = x.size(1);
    auto w = gaussian_window(channels, x.scalar_type());
    auto filter = [&](const torch::Tensor& t) {
        return torch::conv2d(t, w, {}, 1, kSsimWindow / 2, 1, channels);
    };
    auto mu_x = filter(x);
    auto mu_y = filter(y);
    auto sxx = filter(x * x) - mu_x * mu_x;
    auto syy = filter(y * y) - mu_y * mu_y;
    auto sxy = filter(x * y) - mu_x * mu_y;
    auto num = (2.0 * mu_x * mu_y + kSsimC1) * (2.0 * sxy + kSsimC2);
    auto den = (mu_x * mu_x + mu_y * mu_y + kSsimC1) * (sxx + syy + kSsimC2);
    return (num / den).mean();
}

torch::Tensor reconstruction_loss(const torch::Tensor& image, const torch::Tensor& reconstruction, double lambda) {
    if (image.sizes() != reconstruction.sizes()) throw ShapeError("reconstruction_loss: shapes differ");
    auto mse = (image - reconstruction).pow(2).mean();
    if (lambda == 0.0) return mse;
    return lambda * (1.0 - ssim(image, reconstruction)) + mse;
}

torch::Tensor focal_seg_loss(const torch::Tensor& target, const torch::Tensor& predicted, double gamma, double alpha) {
    if (target.sizes() != predicted.sizes()) throw ShapeError("focal_seg_loss: shapes differ");
    auto p = predicted.clamp(kFocalEps, 1.0 - kFocalEps);
    auto m = target.to(p.scalar_type());
    auto p_t = m * p + (1.0 - m) * (1.0 - p);
    auto alpha_t = m * alpha + (1.0 - m) * (1.0 - alpha);
    return -alpha_t * (1.0 - p_t).pow(gamma) * torch::log(p_t);
}

torch::Tensor confidence_indicator(const torch::Tensor& p_hat, double tau) {
    return p_hat.ge(tau).to(p_hat.scalar_type());
}

torch::Tensor weak_seg_loss(const torch::Tensor& loss_map, const torch::Tensor& box, const torch::Tensor& delta) {
    if (loss_map.sizes() != box.sizes() || loss_map.sizes() != delta.sizes()) {
        throw ShapeError("weak_seg_loss: map shapes differ");
    }
    auto b = box.to(loss_map.scalar_type());
    auto d = delta.to(loss_map.scalar_type());
    return (b * (1.0 - d) * loss_map + (1.0 - b) * loss_map).mean();
}

torch::Tensor segmentation_loss(const torch::Tensor& predicted, const torch::Tensor& target, const torch::Tensor& box,
                                const LossConfig& config) {
    auto loss_map = focal_seg_loss(target, predicted, config.gamma, config.alpha);
    auto delta = confidence_indicator(1.0 - predicted.detach(), config.tau);
    return weak_seg_loss(loss_map, box, delta);
}

torch::Tensor detector_loss(const torch::Tensor& reconstruction, const torch::Tensor& recon_target,
                            const torch::Tensor& predicted, const torch::Tensor& seg_target, const torch::Tensor& box,
                            const LossConfig& config) {
    return reconstruction_loss(recon_target, reconstruction, config.lambda) +
           segmentation_loss(predicted, seg_target, box, config);
}

}  // namespace anogen
