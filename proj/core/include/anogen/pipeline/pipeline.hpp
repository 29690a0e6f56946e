#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "anogen/pipeline/config.hpp"
#include "anogen/pipeline/dataset.hpp"

namespace anogen {

// Resolved dataset: the layout on disk (the toy world is exported first) and
// the texture pool for synthetic anomalies.
struct PreparedDataset {
    DatasetLayout layout;
    std::vector<torch::Tensor> textures;
    std::vector<std::string> categories;
    std::map<std::string, std::vector<std::string>> anomaly_types;
    std::optional<std::int64_t> image_size;
    std::string key;
};

PreparedDataset prepare_dataset(const PipelineConfig& config);

struct BackboneBundle {
    Backbone backbone;
    std::shared_ptr<ConditionEncoder> encoder;
    std::string key;
};

// Trains (or loads from cache) the toy backbone, or loads a checkpoint / external model.
BackboneBundle obtain_backbone(const PipelineConfig& config, std::int64_t image_size);

struct EmbeddingSummary {
    std::string id;
    std::vector<std::string> support_ids;
    double initial_probe_loss = 0.0;
    double final_probe_loss = 0.0;
};

struct CategoryOutcome {
    std::map<std::string, EmbeddingSummary> embeddings;  // by anomaly type
    std::map<std::string, int> generated;                 // "category/type" -> images
    std::map<std::string, std::string> generation_errors;
    double detector_final_loss = 0.0;
    EvalResult eval;
};

struct PipelineReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> stage_keys;
    std::vector<std::string> skipped_stages;
    std::map<std::string, CategoryOutcome> categories;
    MetricSet mean;  // metric averages over categories, counts summed
};

void to_json(nlohmann::json& j, const PipelineReport& r);

// Dataset -> backbone -> embeddings -> generation -> detector -> evaluation.
// Every stage persists its artifacts in a cache directory keyed by the hash of
// everything it depends on, so reruns and ablations reuse finished stages.
// Failures are rethrown as StageError tagged with the stage name.
PipelineReport run_pipeline(const PipelineConfig& config);

// Deterministic JSON (no timings); identical config and seed give identical bytes.
void write_report(const PipelineReport& report, const std::filesystem::path& path);

enum class AblationAxis { tau, k_shot, n_generated, mask_guided, anomaly_mix };

std::string to_string(AblationAxis axis);
AblationAxis ablation_axis_from_string(const std::string& name);

// Sets one axis value. n_generated = B·G uses B = 2 for even N > 1, else B = 1.
void apply_axis(PipelineConfig& config, AblationAxis axis, double value);

struct AblationRow {
    double value = 0.0;
    std::uint64_t seed = 0;
    MetricSet metrics;
    std::string config_hash;
};

struct AblationTable {
    AblationAxis axis = AblationAxis::tau;
    std::vector<AblationRow> rows;
    std::map<double, MetricSet> mean;  // per value over seeds
};

// One pipeline run per (value, seed), sharing the base configuration's stage cache.
AblationTable run_ablation(const PipelineConfig& base, AblationAxis axis, const std::vector<double>& values,
                           const std::vector<std::uint64_t>& seeds = {});

// ablation.csv (one row per run) and ablation.json (rows plus per-value means).
void write_ablation(const AblationTable& table, const std::filesystem::path& dir);

}  // namespace anogen
