#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/diffusion/backbone.hpp"
#include "anogen/diffusion/models.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/metrics/evaluate.hpp"
#include "anogen/random.hpp"

namespace anogen {

// Procedural stand-in for an MVTec category: a woven fabric texture whose
// anomalies are thin dark scratches with exact pixel masks.
struct ToyWorldConfig {
    std::int64_t image_size = 48;
    int train_good = 40;
    int test_good = 30;
    int test_anomalous = 33;  // includes the images later drawn as support anomalies
    int textures = 24;        // external texture pool for synthetic anomalies
    std::string category = "toy_fabric";
    std::string anomaly_type = "scratch";

    void validate() const;
};

void to_json(nlohmann::json& j, const ToyWorldConfig& c);
void from_json(const nlohmann::json& j, ToyWorldConfig& c);

struct ToyWorld {
    ToyWorldConfig config;
    std::vector<NormalImage> train;
    std::vector<TestImage> test;  // ids "<type>/<stem>"
    std::vector<torch::Tensor> textures;
};

// Every image is quantised to 8 bits, so an exported world reloads bit-exactly.
ToyWorld make_toy_world(std::uint64_t seed, const ToyWorldConfig& config);

// Writes the MVTec-style layout under root/<category>/ plus root/textures/.
void export_toy_world(const ToyWorld& world, const std::filesystem::path& root);

std::vector<torch::Tensor> load_textures(const std::filesystem::path& dir,
                                         std::optional<std::int64_t> size = std::nullopt);

// Captioned procedural textures (fabric, stripes, dots, smooth noise) with and
// without defects (scratch, stain, hole), for fitting the desk-scale backbone.
// Defective items also carry the generic token "defect".
// Bump the version whenever the corpus content changes; it is part of the backbone stage key.
inline constexpr int kBackboneCorpusVersion = 2;

struct CorpusItem {
    torch::Tensor image;
    std::vector<std::string> tokens;
};

std::vector<CorpusItem> make_backbone_corpus(std::uint64_t seed, int count, std::int64_t size);

std::vector<CaptionedImage> caption_corpus(const std::vector<CorpusItem>& corpus, const ConditionEncoder& encoder);

// Building blocks, exposed for tests.
torch::Tensor toy_fabric(std::int64_t size, Rng& rng);
// Draws a scratch onto `image` in place and returns its exact (H, W) mask.
torch::Tensor draw_scratch(torch::Tensor& image, Rng& rng);

}  // namespace anogen
