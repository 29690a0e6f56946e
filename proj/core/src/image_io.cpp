#include "anogen/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "anogen/errors.hpp"

namespace anogen {
namespace {

cv::Mat load_raw(const std::filesystem::path& path, int flags) {
    cv::Mat mat = cv::imread(path.string(), flags);
    if (mat.empty()) {
        throw DataError("cannot read image: " + path.string());
    }
    if (mat.depth() == CV_16U) {
        mat.convertTo(mat, CV_8U, 1.0 / 257.0);
    }
    return mat;
}

torch::Tensor to_tensor_u8(const cv::Mat& mat) {
    const int channels = mat.channels();
    auto t = torch::from_blob(mat.data, {mat.rows, mat.cols, channels}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat).div_(255.0f).contiguous();
}

}  // namespace

void check_image(const torch::Tensor& image, const char* what) {
    if (!image.defined() || image.dim() != 3 || image.numel() == 0) {
        throw ShapeError(std::string(what) + ": expected a non-empty (C, H, W) image tensor");
    }
}

void check_mask(const torch::Tensor& mask, const char* what) {
    if (!mask.defined() || mask.dim() != 2 || mask.numel() == 0) {
        throw ShapeError(std::string(what) + ": expected a non-empty (H, W) mask tensor");
    }
}

torch::Tensor read_image(const std::filesystem::path& path, std::optional<std::int64_t> size) {
    cv::Mat mat = load_raw(path, cv::IMREAD_COLOR);
    cv::cvtColor(mat, mat, cv::COLOR_BGR2RGB);
    if (size && (mat.rows != *size || mat.cols != *size)) {
        cv::resize(mat, mat, cv::Size(static_cast<int>(*size), static_cast<int>(*size)), 0, 0,
                   cv::INTER_AREA);
    }
    return to_tensor_u8(mat);
}

torch::Tensor read_mask(const std::filesystem::path& path, std::optional<std::int64_t> size) {
    cv::Mat mat = load_raw(path, cv::IMREAD_GRAYSCALE);
    if (size && (mat.rows != *size || mat.cols != *size)) {
        cv::resize(mat, mat, cv::Size(static_cast<int>(*size), static_cast<int>(*size)), 0, 0,
                   cv::INTER_NEAREST);
    }
    return to_tensor_u8(mat)[0].gt(0.5f).to(torch::kFloat);
}

torch::Tensor quantize_u8(const torch::Tensor& image) {
    return image.detach().to(torch::kFloat).clamp(0.0f, 1.0f).mul(255.0f).round().div(255.0f);
}

void write_image(const std::filesystem::path& path, const torch::Tensor& image) {
    check_image(image, "write_image");
    const auto channels = image.size(0);
    if (channels != 1 && channels != 3) {
        throw ShapeError("write_image: expected 1 or 3 channels");
    }
    auto bytes = image.detach().to(torch::kFloat).clamp(0.0f, 1.0f).mul(255.0f).round()
                     .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat mat(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)),
                channels == 3 ? CV_8UC3 : CV_8UC1, bytes.data_ptr());
    cv::Mat out;
    if (channels == 3) {
        cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
    } else {
        out = mat;
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), out)) {
        throw DataError("cannot write image: " + path.string());
    }
}

void write_mask(const std::filesystem::path& path, const torch::Tensor& mask) {
    check_mask(mask, "write_mask");
    write_image(path, mask.gt(0.5f).to(torch::kFloat).unsqueeze(0));
}

}  // namespace anogen
