#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <torch/types.h>

namespace anogen {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const torch::Tensor& tensor);
std::string hex64(std::uint64_t value);

}  // namespace anogen
