#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/boxes/boxes.hpp"
#include "anogen/diffusion/backbone.hpp"
#include "anogen/diffusion/sampling.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/random.hpp"

namespace anogen {

inline constexpr int kManifestSchemaVersion = 1;

struct GenerationConfig {
    int steps = 50;
    Sampler sampler = Sampler::deterministic;
    int boxes_per_image = 2;   // B
    int images_per_box = 2;    // G

    int per_image() const { return boxes_per_image * images_per_box; }
    void validate() const;
};

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);

struct GeneratedSample {
    std::string source_id;
    std::string category;
    std::string anomaly_type;
    BoxMask box;
    torch::Tensor image;          // (3, H, W); may be undefined for records read from disk
    std::filesystem::path file;   // relative to the dataset root once written
    std::string embedding_id;
    std::uint64_t seed = 0;
    int steps = 0;
    Sampler sampler = Sampler::deterministic;
};

struct GenerationManifest {
    std::vector<GeneratedSample> records;
    GenerationConfig config;
    std::string config_hash;
    std::map<std::string, int> counts;          // "category/anomaly_type" -> records
    std::map<std::string, std::string> errors;  // "category/anomaly_type" -> message

    // Checks counts against records and, with `root`, that every file exists.
    void validate(const std::filesystem::path& root = {}) const;
};

void write_manifest(const GenerationManifest& manifest, const std::filesystem::path& path);
GenerationManifest read_manifest(const std::filesystem::path& path);

// out = z_noisy_source where M == 0, z_denoised where M == 1. `latent_box` is
// (h, w) or broadcastable to the latents; every element is copied, never mixed.
Latent blend_latents(const Latent& z_noisy_source, const Latent& z_denoised, const torch::Tensor& latent_box);

// Box-restricted generation: start from pure noise, run the reverse process
// conditioned on the embedding and after every step overwrite the exterior
// with a freshly noised copy of the encoded source. The decoded result is
// quantised to 8 bits and composited so exterior pixels equal the source.
GeneratedSample generate_anomaly(const torch::Tensor& normal_image, const BoxMask& box,
                                 const AnomalyEmbedding& embedding, const Backbone& backbone,
                                 const GenerationConfig& config, Rng& rng);

struct NormalImage {
    std::string id;
    torch::Tensor image;  // (3, H, W)
};

struct GenerationRequest {
    std::string category;
    std::string anomaly_type;
};

// For every request and every normal image of its category: B boxes, G images
// per box, written to out_dir/<category>/<anomaly_type>/<source-id>_<k>.png
// with a manifest at out_dir/manifest.json. A request without an embedding
// (keyed "category/anomaly_type") is recorded in `errors` and skipped.
GenerationManifest generate_dataset(const std::vector<GenerationRequest>& requests,
                                    const std::map<std::string, std::vector<NormalImage>>& normals,
                                    const std::map<std::string, AnomalyEmbedding>& embeddings,
                                    const CategoryBoxTable& boxes, const Backbone& backbone,
                                    const GenerationConfig& config, const std::filesystem::path& out_dir,
                                    Rng& rng);

}  // namespace anogen
