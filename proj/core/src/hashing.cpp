#include "anogen/hashing.hpp"

#include <cstdio>

#include <torch/torch.h>

namespace anogen {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const torch::Tensor& tensor) {
    const auto contiguous = tensor.detach().cpu().contiguous();
    const auto* data = static_cast<const char*>(contiguous.data_ptr());
    const auto nbytes = static_cast<std::size_t>(contiguous.numel()) * contiguous.element_size();
    std::uint64_t h = fnv1a64(std::string_view(data, nbytes));
    for (auto d : contiguous.sizes()) {
        h = fnv1a64(std::to_string(d) + ",", h);
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace anogen
