#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>
#include <torch/types.h>

#include "anogen/random.hpp"

namespace anogen {

// Axis-aligned rectangle in normalised image coordinates, 0 <= x0 < x1 <= 1.
struct BoxMask {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }

    void validate() const;

    // Binary (H, W) float mask. Covers every pixel the box touches and always
    // at least one pixel, whatever the resolution.
    torch::Tensor rasterize(std::int64_t height, std::int64_t width) const;

    bool operator==(const BoxMask&) const = default;
};

void to_json(nlohmann::json& j, const BoxMask& box);
void from_json(const nlohmann::json& j, BoxMask& box);

enum class ForegroundMethod { threshold, grabcut, full_frame };

std::string to_string(ForegroundMethod method);
ForegroundMethod foreground_method_from_string(const std::string& name);

struct ForegroundMask {
    torch::Tensor mask;  // (H, W) binary, never empty
    ForegroundMethod method = ForegroundMethod::full_frame;
    bool fell_back = false;  // threshold/grabcut found nothing and full frame was used
};

// `threshold`: Otsu on luminance, polarity chosen so the border is background,
// then the largest 8-connected component. `grabcut`: the threshold result
// refined by a few GrabCut iterations. Empty results fall back to full frame.
ForegroundMask extract_foreground(const torch::Tensor& image, ForegroundMethod method);

enum class OverlapRule {
    box_coverage,  // |box ∩ fg| / |box|
    iou,           // |box ∩ fg| / |box ∪ fg|
};

std::string to_string(OverlapRule rule);
OverlapRule overlap_rule_from_string(const std::string& name);

struct BoxConfig {
    double min_size = 0.1;  // fraction of image side
    double max_size = 0.5;
    double min_overlap = 0.5;
    OverlapRule overlap_rule = OverlapRule::box_coverage;
    ForegroundMethod foreground = ForegroundMethod::threshold;
    int max_attempts = 1000;
    std::string label = "default";  // used in error messages, e.g. "hazelnut/hole"

    void validate() const;
};

void to_json(nlohmann::json& j, const BoxConfig& c);
void from_json(const nlohmann::json& j, BoxConfig& c);

// |box ∩ fg| / |box| at the foreground's resolution.
double overlap_fraction(const BoxMask& box, const ForegroundMask& fg);
double overlap_iou(const BoxMask& box, const ForegroundMask& fg);

// Rejection sampler: width and height uniform in the size range, position
// uniform over placements that fit, accepted once the overlap rule is met.
BoxMask sample_box(const ForegroundMask& fg, const BoxConfig& config, Rng& rng);

// Per (category, anomaly_type) box settings. Lookup order: "category/type",
// "category", then defaults.
class CategoryBoxTable {
public:
    CategoryBoxTable();

    static CategoryBoxTable builtin();
    static CategoryBoxTable from_file(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    BoxConfig lookup(const std::string& category, const std::string& anomaly_type) const;
    void set(const std::string& key, BoxConfig config);
    BoxConfig& defaults() { return defaults_; }
    const BoxConfig& defaults() const { return defaults_; }

    friend void to_json(nlohmann::json& j, const CategoryBoxTable& t);
    friend void from_json(const nlohmann::json& j, CategoryBoxTable& t);

private:
    BoxConfig defaults_;
    std::map<std::string, BoxConfig> overrides_;
};

}  // namespace anogen
