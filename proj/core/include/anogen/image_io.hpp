#pragma once

#include <filesystem>
#include <optional>

#include <torch/types.h>

namespace anogen {

// Images are float32 tensors of shape (C, H, W) with values in [0, 1].
// Masks are float32 tensors of shape (H, W) holding exactly 0 or 1.

torch::Tensor read_image(const std::filesystem::path& path,
                         std::optional<std::int64_t> size = std::nullopt);
torch::Tensor read_mask(const std::filesystem::path& path,
                        std::optional<std::int64_t> size = std::nullopt);

// Lossless 8-bit PNG. Values are clamped to [0, 1] and rounded to k/255.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

// Round to the nearest representable 8-bit level, i.e. what a PNG round trip yields.
torch::Tensor quantize_u8(const torch::Tensor& image);

void check_image(const torch::Tensor& image, const char* what);
void check_mask(const torch::Tensor& mask, const char* what);

}  // namespace anogen
