#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anogen/boxes/boxes.hpp"
#include "anogen/detector/detector.hpp"
#include "anogen/diffusion/backbone.hpp"
#include "anogen/embedding/embedding.hpp"
#include "anogen/generation/generator.hpp"
#include "anogen/pipeline/toy_world.hpp"

namespace anogen {

struct DatasetSection {
    std::string root;                        // empty: build and export the toy world
    std::string textures;                    // texture pool directory; default <root>/textures
    std::vector<std::string> categories;     // empty: every category found
    std::vector<std::string> anomaly_types;  // empty: every type of each category
    std::int64_t image_size = 0;             // 0: keep native resolution
    std::optional<std::uint64_t> toy_seed;   // toy world seed; derived from the root seed if unset
    ToyWorldConfig toy;
};

enum class BackboneKind { toy, checkpoint, external };

struct BackboneSection {
    BackboneKind kind = BackboneKind::toy;
    std::string path;                      // checkpoint file or external model directory
    std::optional<std::uint64_t> seed;     // derived from the root seed if unset
    int corpus_size = 200;
    BackboneTrainConfig train;
    std::string condition = "hash";        // hash | table
    std::string condition_table;           // JSON token table for "table"
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "anogen-out";
    std::string cache_dir;                 // stage cache; default <out_dir>/cache
    DatasetSection dataset;
    BackboneSection backbone;
    int k_shot = 3;
    InversionConfig inversion;
    std::string box_table;                 // optional CategoryBoxTable file; builtin table otherwise
    GenerationConfig generation;
    DetectorTrainConfig detector;
    bool curves = false;                   // dump pixel ROC/PR curves next to the report

    void validate() const;
    // Desk-scale settings used by the toy experiments and the acceptance suite.
    static PipelineConfig toy_preset();
};

std::string to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(const std::string& name);

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& config, const std::filesystem::path& path);

// FNV-1a of the canonical JSON dump, ignoring out_dir and cache_dir.
std::string config_hash(const PipelineConfig& config);

}  // namespace anogen
