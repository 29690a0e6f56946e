#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/diffusion/backbone.hpp"
#include "anogen/diffusion/latent.hpp"
#include "anogen/errors.hpp"
#include "anogen/random.hpp"

namespace anogen {

inline constexpr int kEmbeddingSchemaVersion = 1;

// One real anomalous image with its pixel mask.
struct SupportRecord {
    torch::Tensor image;  // (3, H, W)
    torch::Tensor mask;   // (H, W), at least one anomalous pixel
    std::string id;
};

struct SupportSet {
    std::vector<SupportRecord> records;
    std::string category;
    std::string anomaly_type;

    int k() const { return static_cast<int>(records.size()); }
    void validate() const;
};

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct InversionConfig {
    int iterations = 6000;
    double learning_rate = 0.005;
    bool mask_guided = true;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::string init_token = "defect";
    // Fixed (record, t, eps) probes scored before and after training.
    int probe_count = 32;

    void validate() const;
};

void to_json(nlohmann::json& j, const InversionConfig& c);
void from_json(const nlohmann::json& j, InversionConfig& c);

struct AnomalyEmbedding {
    torch::Tensor v;  // (d) float32
    std::string category;
    std::string anomaly_type;
    std::string init_token;
    InversionConfig config;
    std::vector<std::string> support_fingerprint;  // FNV-1a of each support image

    std::int64_t dim() const { return v.numel(); }
    // "<category>/<anomaly_type>#<hash of v>"
    std::string id() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const AnomalyEmbedding& e);
void from_json(const nlohmann::json& j, AnomalyEmbedding& e);

void save_embedding(const AnomalyEmbedding& embedding, const std::filesystem::path& path);
AnomalyEmbedding load_embedding(const std::filesystem::path& path);

// v = encoder.encode_token(token). Throws InitializationError if the encoder
// fails or its dimension differs from `expected_dim` (the backbone's).
AnomalyEmbedding init_embedding(const std::string& token, const ConditionEncoder& encoder,
                                std::int64_t expected_dim);

// Max-pool rule: a latent cell is set iff any pixel of its stride×stride block is set.
torch::Tensor downsample_mask(const torch::Tensor& mask, std::int64_t latent_h, std::int64_t latent_w);

// Mean over masked latent cells (and channels) of (eps - ε_θ(z_t, t, v))².
// Returns nullopt when the mask is empty at latent resolution (record skipped).
std::optional<torch::Tensor> masked_ldm_loss(const SupportRecord& record, int t, const Latent& eps,
                                             const torch::Tensor& v, const Backbone& backbone);

// Tensor-level form with precomputed latent z0 (N, C, h, w) and latent mask (N, h, w).
std::optional<torch::Tensor> masked_ldm_loss(const torch::Tensor& z0, const torch::Tensor& latent_mask,
                                             const torch::Tensor& t, const torch::Tensor& eps,
                                             const torch::Tensor& v, const Denoiser& model,
                                             const NoiseSchedule& schedule);

struct InversionResult {
    AnomalyEmbedding embedding;
    std::vector<double> loss_curve;  // one entry per iteration
    int skipped_records = 0;
    double initial_probe_loss = 0.0;
    double final_probe_loss = 0.0;
};

// Raised when the loss becomes non-finite; carries the last finite embedding.
class EmbeddingDivergedError : public TrainingError {
public:
    EmbeddingDivergedError(const std::string& what, AnomalyEmbedding last_finite)
        : TrainingError(what), last_finite_(std::move(last_finite)) {}
    const AnomalyEmbedding& last_finite() const { return last_finite_; }

private:
    AnomalyEmbedding last_finite_;
};

// Optimise v alone against the masked LDM loss; the backbone stays frozen.
// Each iteration uses one support record (round-robin) and one t ~ U[1, T].
InversionResult learn_embedding(const SupportSet& support, const Backbone& backbone,
                                const AnomalyEmbedding& initial, const InversionConfig& config, Rng& rng);

// CSV with header "iteration,loss".
void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& curve);

}  // namespace anogen
