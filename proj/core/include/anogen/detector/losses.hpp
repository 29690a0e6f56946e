#pragma once

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

namespace anogen {

struct LossConfig {
    double lambda = 1.0;  // SSIM weight in the reconstruction loss
    double gamma = 2.0;   // focal exponent
    double alpha = 0.5;   // focal weight of the anomalous class
    double tau = 0.9;     // confidence threshold on p̂ = 1 − M̂
    double mix_probability = 0.5;

    void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

inline constexpr double kFocalEps = 1e-6;

// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), C1 = 0.01², C2 = 0.03²
// and zero padding. Inputs are (C, H, W) or (N, C, H, W) in [0, 1].
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);

// λ·(1 − SSIM) + mean squared error.
torch::Tensor reconstruction_loss(const torch::Tensor& image, const torch::Tensor& reconstruction, double lambda);

// Unreduced focal loss per pixel: −α_t (1 − p_t)^γ log p_t, with M̂ clamped to [ε, 1 − ε].
torch::Tensor focal_seg_loss(const torch::Tensor& target, const torch::Tensor& predicted, double gamma, double alpha);

// δ = 1 where p̂ ≥ τ.
torch::Tensor confidence_indicator(const torch::Tensor& p_hat, double tau);

// mean(M_box ⊙ (1 − δ) ⊙ L + (1 − M_box) ⊙ L).
torch::Tensor weak_seg_loss(const torch::Tensor& loss_map, const torch::Tensor& box, const torch::Tensor& delta);

// Segmentation loss of a batch with mixed supervision. `target` holds the
// exact mask or the rasterised box; `box` is the rasterised box for
// box-supervised samples and zero for exactly labelled ones. δ is computed
// from the detached prediction.
torch::Tensor segmentation_loss(const torch::Tensor& predicted, const torch::Tensor& target, const torch::Tensor& box,
                                const LossConfig& config);

// Reconstruction plus segmentation loss of one training step.
torch::Tensor detector_loss(const torch::Tensor& reconstruction, const torch::Tensor& recon_target,
                            const torch::Tensor& predicted, const torch::Tensor& seg_target, const torch::Tensor& box,
                            const LossConfig& config);

}  // namespace anogen
