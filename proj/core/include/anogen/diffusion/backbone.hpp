#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/diffusion/models.hpp"
#include "anogen/diffusion/schedule.hpp"
#include "anogen/random.hpp"

namespace anogen {

inline constexpr int kBackboneSchemaVersion = 2;

// A frozen latent diffusion model: autoencoder, noise predictor and schedule.
struct Backbone {
    std::shared_ptr<Autoencoder> autoencoder;
    std::shared_ptr<Denoiser> denoiser;
    NoiseSchedule schedule;

    std::int64_t cond_dim() const { return denoiser->cond_dim(); }
    int stride() const { return autoencoder->stride(); }
};

// A training image with the conditioning vector of its caption.
struct CaptionedImage {
    torch::Tensor image;  // (3, H, W)
    torch::Tensor cond;   // (d)
};

struct BackboneTrainConfig {
    bool identity_autoencoder = false;
    ConvAutoencoderOptions autoencoder;
    int autoencoder_steps = 600;
    double autoencoder_lr = 2e-3;

    TinyUNetOptions unet;
    int steps = 2000;
    int batch_size = 8;
    double lr = 1e-3;

    int schedule_steps = 200;
    ScheduleKind schedule_kind = ScheduleKind::linear;
    double beta_min = 5e-4;
    double beta_max = 0.05;  // alpha_bar_T ~ 6e-3 at T = 200

    double heldout_fraction = 0.1;
    int heldout_probes = 64;
};

void to_json(nlohmann::json& j, const BackboneTrainConfig& c);
void from_json(const nlohmann::json& j, BackboneTrainConfig& c);

struct BackboneTrainReport {
    double initial_heldout_loss = 0.0;
    double final_heldout_loss = 0.0;
    double autoencoder_mse = 0.0;
    std::vector<double> loss_curve;
};

struct TrainedBackbone {
    Backbone backbone;
    BackboneTrainReport report;
};

// Fit the desk-scale autoencoder and U-Net denoiser on `dataset`. A held-out
// slice is used to measure the LDM loss before and after training with fixed
// (t, eps) probes.
TrainedBackbone train_tiny_backbone(const std::vector<CaptionedImage>& dataset,
                                    const BackboneTrainConfig& config, Rng& rng);

// Average LDM loss over fixed probes drawn from `probe_rng`.
double probe_ldm_loss(const Backbone& backbone, const std::vector<CaptionedImage>& data, int probes,
                      Rng probe_rng);

// Versioned checkpoint container (torch archive with "schema_version").
void save_backbone(const Backbone& backbone, const std::filesystem::path& path);
Backbone load_backbone(const std::filesystem::path& path);

}  // namespace anogen
