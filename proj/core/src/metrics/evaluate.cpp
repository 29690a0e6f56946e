#include "anogen/metrics/evaluate.hpp"

#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {

using nlohmann::json;

bool TestImage::anomalous() const { return mask.sum().item<double>() > 0.0; }

void to_json(json& j, const MetricSet& m) {
    j = json{{"image_auroc", m.image_auroc},
             {"image_aupr", m.image_aupr},
             {"pixel_auroc", m.pixel_auroc},
             {"pixel_aupr", m.pixel_aupr},
             {"images", m.images},
             {"anomalous_images", m.anomalous_images},
             {"pixels", m.pixels},
             {"anomalous_pixels", m.anomalous_pixels}};
}

void to_json(json& j, const EvalResult& r) {
    j = json(r.overall);
    j["pixel_pooling"] = "global";
    j["per_category"] = r.per_category;
    j["config_hash"] = r.config_hash;
}

namespace {

MetricSet compute(const std::vector<const ScoreMap*>& scores, const std::vector<const TestImage*>& test) {
    MetricSet m;
    std::vector<double> image_scores;
    std::vector<std::uint8_t> image_labels;
    std::vector<double> pixel_scores;
    std::vector<std::uint8_t> pixel_labels;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& t = *test[i];
        const auto& s = *scores[i];
        if (s.anomaly.sizes() != t.mask.sizes()) throw ShapeError("score map shape differs from mask of " + t.id);
        const bool anomalous = t.anomalous();
        image_scores.push_back(s.image_score);
        image_labels.push_back(anomalous ? 1 : 0);
        auto a = s.anomaly.to(torch::kDouble).contiguous().flatten();
        auto l = t.mask.gt(0.5).to(torch::kUInt8).contiguous().flatten();
        pixel_scores.insert(pixel_scores.end(), a.data_ptr<double>(), a.data_ptr<double>() + a.numel());
        pixel_labels.insert(pixel_labels.end(), l.data_ptr<std::uint8_t>(), l.data_ptr<std::uint8_t>() + l.numel());
        m.anomalous_images += anomalous ? 1 : 0;
    }
    m.images = static_cast<std::int64_t>(test.size());
    m.pixels = static_cast<std::int64_t>(pixel_scores.size());
    for (auto l : pixel_labels) m.anomalous_pixels += l;
    m.image_auroc = auroc(image_scores, image_labels);
    m.image_aupr = aupr(image_scores, image_labels);
    m.pixel_auroc = auroc(pixel_scores, pixel_labels);
    m.pixel_aupr = aupr(pixel_scores, pixel_labels);
    return m;
}

}  // namespace

EvalResult evaluate_scores(const std::vector<ScoreMap>& scores, const std::vector<TestImage>& test, bool keep_curves) {
    if (scores.size() != test.size()) throw ShapeError("evaluate: one score map per test image is required");
    if (test.empty()) throw DataError("evaluate: test set is empty");
    EvalResult result;
    std::vector<const ScoreMap*> all_scores;
    std::vector<const TestImage*> all_test;
    std::map<std::string, std::pair<std::vector<const ScoreMap*>, std::vector<const TestImage*>>> by_category;
    for (std::size_t i = 0; i < test.size(); ++i) {
        all_scores.push_back(&scores[i]);
        all_test.push_back(&test[i]);
        by_category[test[i].category].first.push_back(&scores[i]);
        by_category[test[i].category].second.push_back(&test[i]);
    }
    result.overall = compute(all_scores, all_test);
    for (const auto& [category, group] : by_category) {
        result.per_category[category] = compute(group.first, group.second);
    }
    if (keep_curves) {
        std::vector<double> pixel_scores;
        std::vector<std::uint8_t> pixel_labels;
        for (std::size_t i = 0; i < test.size(); ++i) {
            auto a = scores[i].anomaly.to(torch::kDouble).contiguous().flatten();
            auto l = test[i].mask.gt(0.5).to(torch::kUInt8).contiguous().flatten();
            pixel_scores.insert(pixel_scores.end(), a.data_ptr<double>(), a.data_ptr<double>() + a.numel());
            pixel_labels.insert(pixel_labels.end(), l.data_ptr<std::uint8_t>(),
                                l.data_ptr<std::uint8_t>() + l.numel());
        }
        result.pixel_roc = roc_curve(pixel_scores, pixel_labels);
        result.pixel_pr = pr_curve(pixel_scores, pixel_labels);
    }
    return result;
}

EvalResult evaluate(const Detector& detector, const std::vector<TestImage>& test, bool keep_curves) {
    std::vector<torch::Tensor> images;
    images.reserve(test.size());
    for (const auto& t : test) images.push_back(t.image);
    return evaluate_scores(detector.predict_batch(images), test, keep_curves);
}

void write_eval_report(const EvalResult& result, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write evaluation report: " + path.string());
    out << json(result).dump(1) << '\n';
}

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write curve: " + path.string());
    out << "threshold,fpr,tpr\n" << std::setprecision(9);
    for (const auto& p : curve) out << p.threshold << ',' << p.false_positive_rate << ',' << p.true_positive_rate << '\n';
}

void write_pr_csv(const std::vector<PrPoint>& curve, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write curve: " + path.string());
    out << "threshold,recall,precision\n" << std::setprecision(9);
    for (const auto& p : curve) out << p.threshold << ',' << p.recall << ',' << p.precision << '\n';
}

}  // namespace anogen
