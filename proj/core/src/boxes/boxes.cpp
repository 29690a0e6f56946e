#include "anogen/boxes/boxes.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/image_io.hpp"
#include "anogen/log.hpp"

namespace anogen {

using nlohmann::json;

namespace {

constexpr double kEdgeTolerance = 1e-9;

ForegroundMask full_frame(std::int64_t h, std::int64_t w, bool fell_back) {
    return {torch::ones({h, w}, torch::kFloat), ForegroundMethod::full_frame, fell_back};
}

cv::Mat to_gray_u8(const torch::Tensor& image) {
    auto gray = image.mean(0).clamp(0.0, 1.0).mul(255.0).round().to(torch::kUInt8).contiguous();
    return cv::Mat(static_cast<int>(gray.size(0)), static_cast<int>(gray.size(1)), CV_8UC1, gray.data_ptr()).clone();
}

cv::Mat to_bgr_u8(const torch::Tensor& image) {
    auto rgb = image.expand({3, image.size(1), image.size(2)}).clamp(0.0, 1.0).mul(255.0).round()
                   .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat mat(static_cast<int>(rgb.size(0)), static_cast<int>(rgb.size(1)), CV_8UC3, rgb.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(mat, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

torch::Tensor mat_to_mask(const cv::Mat& binary) {
    auto t = torch::from_blob(binary.data, {binary.rows, binary.cols}, torch::kUInt8).clone();
    return t.gt(0).to(torch::kFloat);
}

// Otsu + border polarity + largest component. Empty Mat when nothing is found.
cv::Mat threshold_foreground(const torch::Tensor& image) {
    cv::Mat gray = to_gray_u8(image);
    double lo = 0.0;
    double hi = 0.0;
    cv::minMaxLoc(gray, &lo, &hi);
    if (hi - lo < 1.0) return {};

    cv::Mat binary;
    cv::threshold(gray, binary, 0, 255, cv::THRESH_BINARY | cv::THRESH_OTSU);

    int border_on = 0;
    int border_total = 0;
    for (int x = 0; x < binary.cols; ++x) {
        border_on += (binary.at<std::uint8_t>(0, x) > 0) + (binary.at<std::uint8_t>(binary.rows - 1, x) > 0);
        border_total += 2;
    }
    for (int y = 1; y + 1 < binary.rows; ++y) {
        border_on += (binary.at<std::uint8_t>(y, 0) > 0) + (binary.at<std::uint8_t>(y, binary.cols - 1) > 0);
        border_total += 2;
    }
    if (2 * border_on > border_total) cv::bitwise_not(binary, binary);

    cv::Mat labels;
    cv::Mat stats;
    cv::Mat centroids;
    const int n = cv::connectedComponentsWithStats(binary, labels, stats, centroids, 8, CV_32S);
    int best = -1;
    int best_area = 0;
    for (int i = 1; i < n; ++i) {
        const int area = stats.at<int>(i, cv::CC_STAT_AREA);
        if (area > best_area) {
            best_area = area;
            best = i;
        }
    }
    if (best < 0) return {};
    cv::Mat component = (labels == best);
    return component;
}

cv::Mat grabcut_refine(const torch::Tensor& image, const cv::Mat& initial) {
    cv::Mat mask(initial.size(), CV_8UC1);
    for (int y = 0; y < mask.rows; ++y) {
        for (int x = 0; x < mask.cols; ++x) {
            const bool border = y == 0 || x == 0 || y == mask.rows - 1 || x == mask.cols - 1;
            const bool fg = initial.at<std::uint8_t>(y, x) > 0;
            mask.at<std::uint8_t>(y, x) = border && !fg ? cv::GC_BGD : (fg ? cv::GC_PR_FGD : cv::GC_PR_BGD);
        }
    }
    cv::Mat bgd_model;
    cv::Mat fgd_model;
    try {
        cv::grabCut(to_bgr_u8(image), mask, cv::Rect(), bgd_model, fgd_model, 3, cv::GC_INIT_WITH_MASK);
    } catch (const cv::Exception& e) {
        log::warn(std::string("grabcut failed, keeping threshold foreground: ") + e.what());
        return initial;
    }
    cv::Mat out = (mask == cv::GC_FGD) | (mask == cv::GC_PR_FGD);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void BoxMask::validate() const {
    if (!(std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1))) {
        throw ParameterError("box coordinates must be finite");
    }
    if (!(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0)) {
        throw ParameterError("box must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1");
    }
}

torch::Tensor BoxMask::rasterize(std::int64_t height, std::int64_t width) const {
    validate();
    if (height < 1 || width < 1) throw ShapeError("rasterize: empty shape");
    auto span = [](double a, double b, std::int64_t n) {
        auto lo = static_cast<std::int64_t>(std::floor(a * static_cast<double>(n) + kEdgeTolerance));
        lo = std::clamp<std::int64_t>(lo, 0, n - 1);
        auto hi = static_cast<std::int64_t>(std::ceil(b * static_cast<double>(n) - kEdgeTolerance));
        hi = std::clamp<std::int64_t>(hi, lo + 1, n);
        return std::pair{lo, hi};
    };
    const auto [r0, r1] = span(y0, y1, height);
    const auto [c0, c1] = span(x0, x1, width);
    auto mask = torch::zeros({height, width}, torch::kFloat);
    mask.slice(0, r0, r1).slice(1, c0, c1).fill_(1.0f);
    return mask;
}

void to_json(json& j, const BoxMask& box) { j = json::array({box.x0, box.y0, box.x1, box.y1}); }

void from_json(const json& j, BoxMask& box) {
    box = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
    box.validate();
}

std::string to_string(ForegroundMethod method) {
    switch (method) {
        case ForegroundMethod::threshold: return "threshold";
        case ForegroundMethod::grabcut: return "grabcut";
        case ForegroundMethod::full_frame: return "full_frame";
    }
    return "unknown";
}

ForegroundMethod foreground_method_from_string(const std::string& name) {
    if (name == "threshold") return ForegroundMethod::threshold;
    if (name == "grabcut") return ForegroundMethod::grabcut;
    if (name == "full_frame") return ForegroundMethod::full_frame;
    throw ParameterError("unknown foreground method: " + name);
}

ForegroundMask extract_foreground(const torch::Tensor& image, ForegroundMethod method) {
    check_image(image, "extract_foreground");
    const auto h = image.size(1);
    const auto w = image.size(2);
    if (method == ForegroundMethod::full_frame) return full_frame(h, w, false);

    cv::Mat fg = threshold_foreground(image);
    if (fg.empty() || cv::countNonZero(fg) == 0) {
        log::warn("foreground extraction found no object; using the full frame");
        return full_frame(h, w, true);
    }
    if (method == ForegroundMethod::grabcut) {
        cv::Mat refined = grabcut_refine(image, fg);
        if (cv::countNonZero(refined) > 0) fg = refined;
    }
    return {mat_to_mask(fg), method, false};
}

std::string to_string(OverlapRule rule) { return rule == OverlapRule::iou ? "iou" : "box_coverage"; }

OverlapRule overlap_rule_from_string(const std::string& name) {
    if (name == "box_coverage") return OverlapRule::box_coverage;
    if (name == "iou") return OverlapRule::iou;
    throw ParameterError("unknown overlap rule: " + name);
}

void BoxConfig::validate() const {
    if (!(0.0 < min_size && min_size <= max_size && max_size <= 1.0)) {
        throw ParameterError("box size range must satisfy 0 < min <= max <= 1 (" + label + ")");
    }
    if (!(0.0 <= min_overlap && min_overlap <= 1.0)) {
        throw ParameterError("box min_overlap must be in [0, 1] (" + label + ")");
    }
    if (max_attempts < 1) throw ParameterError("box max_attempts must be >= 1");
}

void to_json(json& j, const BoxConfig& c) {
    j = json{{"size_range", {c.min_size, c.max_size}},
             {"min_overlap", c.min_overlap},
             {"overlap_rule", to_string(c.overlap_rule)},
             {"foreground", to_string(c.foreground)},
             {"max_attempts", c.max_attempts}};
}

void from_json(const json& j, BoxConfig& c) {
    if (j.contains("size_range")) {
        c.min_size = j.at("size_range").at(0).get<double>();
        c.max_size = j.at("size_range").at(1).get<double>();
    }
    c.min_overlap = j.value("min_overlap", c.min_overlap);
    if (j.contains("overlap_rule")) c.overlap_rule = overlap_rule_from_string(j.at("overlap_rule"));
    if (j.contains("foreground")) c.foreground = foreground_method_from_string(j.at("foreground"));
    c.max_attempts = j.value("max_attempts", c.max_attempts);
}

double overlap_fraction(const BoxMask& box, const ForegroundMask& fg) {
    check_mask(fg.mask, "overlap_fraction");
    auto raster = box.rasterize(fg.mask.size(0), fg.mask.size(1));
    const double inter = (raster * fg.mask).sum().item<double>();
    return inter / raster.sum().item<double>();
}

double overlap_iou(const BoxMask& box, const ForegroundMask& fg) {
    check_mask(fg.mask, "overlap_iou");
    auto raster = box.rasterize(fg.mask.size(0), fg.mask.size(1));
    const double inter = (raster * fg.mask).sum().item<double>();
    const double uni = torch::maximum(raster, fg.mask).sum().item<double>();
    return inter / uni;
}

BoxMask sample_box(const ForegroundMask& fg, const BoxConfig& config, Rng& rng) {
    config.validate();
    check_mask(fg.mask, "sample_box");
    if (fg.mask.sum().item<double>() <= 0.0) throw SamplingError("foreground is empty (" + config.label + ")");
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        const double w = rng.uniform(config.min_size, config.max_size);
        const double h = rng.uniform(config.min_size, config.max_size);
        const double x0 = rng.uniform(0.0, 1.0 - w);
        const double y0 = rng.uniform(0.0, 1.0 - h);
        BoxMask box{x0, y0, std::min(1.0, x0 + w), std::min(1.0, y0 + h)};
        const double overlap = config.overlap_rule == OverlapRule::iou ? overlap_iou(box, fg) : overlap_fraction(box, fg);
        if (overlap >= config.min_overlap) return box;
    }
    throw SamplingError("no box satisfied size and overlap constraints for '" + config.label + "' after " +
                        std::to_string(config.max_attempts) + " attempts (foreground too small for the size range?)");
}

// ---------------------------------------------------------------------------

CategoryBoxTable::CategoryBoxTable() = default;

CategoryBoxTable CategoryBoxTable::builtin() {
    CategoryBoxTable table;
    // hazelnut/hole is the one published size range; everything else uses the defaults.
    BoxConfig hazelnut_hole;
    hazelnut_hole.min_size = 0.1;
    hazelnut_hole.max_size = 0.5;
    table.set("hazelnut/hole", hazelnut_hole);
    for (const char* texture : {"carpet", "grid", "leather", "tile", "wood", "toy_fabric"}) {
        BoxConfig c;
        c.foreground = ForegroundMethod::full_frame;
        table.set(texture, c);
    }
    return table;
}

void CategoryBoxTable::set(const std::string& key, BoxConfig config) {
    config.label = key;
    config.validate();
    overrides_[key] = std::move(config);
}

BoxConfig CategoryBoxTable::lookup(const std::string& category, const std::string& anomaly_type) const {
    const std::string full = category + "/" + anomaly_type;
    if (auto it = overrides_.find(full); it != overrides_.end()) return it->second;
    if (auto it = overrides_.find(category); it != overrides_.end()) {
        auto c = it->second;
        c.label = full;
        return c;
    }
    auto c = defaults_;
    c.label = full;
    return c;
}

void to_json(json& j, const CategoryBoxTable& t) {
    j = json::object();
    j["defaults"] = t.defaults_;
    j["categories"] = json::object();
    for (const auto& [key, cfg] : t.overrides_) j["categories"][key] = cfg;
}

void from_json(const json& j, CategoryBoxTable& t) {
    t = CategoryBoxTable();
    if (j.contains("defaults")) {
        BoxConfig d;
        from_json(j.at("defaults"), d);
        d.validate();
        t.defaults_ = d;
    }
    if (j.contains("categories")) {
        for (auto it = j.at("categories").begin(); it != j.at("categories").end(); ++it) {
            BoxConfig c = t.defaults_;
            from_json(it.value(), c);
            t.set(it.key(), c);
        }
    }
}

CategoryBoxTable CategoryBoxTable::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot open box table: " + path.string());
    json j;
    in >> j;
    return j.get<CategoryBoxTable>();
}

void CategoryBoxTable::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigurationError("cannot write box table: " + path.string());
    out << json(*this).dump(2) << '\n';
}

}  // namespace anogen
