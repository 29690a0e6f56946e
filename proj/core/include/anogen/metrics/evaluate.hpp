#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/detector/detector.hpp"
#include "anogen/metrics/metrics.hpp"

namespace anogen {

// A labelled test image; `mask` is all zero for normal images.
struct TestImage {
    std::string id;
    std::string category;
    std::string anomaly_type;  // "good" for normal images
    torch::Tensor image;       // (3, H, W)
    torch::Tensor mask;        // (H, W)

    bool anomalous() const;
};

struct MetricSet {
    double image_auroc = 0.0;
    double image_aupr = 0.0;
    double pixel_auroc = 0.0;
    double pixel_aupr = 0.0;
    std::int64_t images = 0;
    std::int64_t anomalous_images = 0;
    std::int64_t pixels = 0;
    std::int64_t anomalous_pixels = 0;
};

struct EvalResult {
    MetricSet overall;  // pixel metrics pool every pixel of every test image
    std::map<std::string, MetricSet> per_category;
    std::string config_hash;
    std::vector<RocPoint> pixel_roc;  // filled when curves are requested
    std::vector<PrPoint> pixel_pr;
};

void to_json(nlohmann::json& j, const MetricSet& m);
void to_json(nlohmann::json& j, const EvalResult& r);

// Metrics from precomputed score maps, one per test image in the same order.
EvalResult evaluate_scores(const std::vector<ScoreMap>& scores, const std::vector<TestImage>& test,
                           bool keep_curves = false);

EvalResult evaluate(const Detector& detector, const std::vector<TestImage>& test, bool keep_curves = false);

// JSON report with the four metrics, counts, per-category breakdown and config hash.
void write_eval_report(const EvalResult& result, const std::filesystem::path& path);

// CSV dumps: "threshold,fpr,tpr" and "threshold,recall,precision".
void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path);
void write_pr_csv(const std::vector<PrPoint>& curve, const std::filesystem::path& path);

}  // namespace anogen
