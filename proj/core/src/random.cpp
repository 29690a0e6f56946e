#include "anogen/random.hpp"

#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "anogen/errors.hpp"
#include "anogen/hashing.hpp"

namespace anogen {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed)
    : seed_(seed), torch_gen_(at::make_generator<at::CPUGeneratorImpl>(seed)) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
        word = splitmix64(s);
    }
}

std::uint64_t Rng::next_u64() {
    // xoshiro256**
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) {
        throw ParameterError("uniform_int: empty range");
    }
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) {
        return static_cast<std::int64_t>(next_u64());
    }
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t draw = next_u64();
    while (draw >= limit) {
        draw = next_u64();
    }
    return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

torch::Tensor Rng::randn(at::IntArrayRef shape, torch::ScalarType dtype) {
    return torch::randn(shape, torch_gen_, torch::TensorOptions().dtype(dtype));
}

torch::Tensor Rng::rand(at::IntArrayRef shape, torch::ScalarType dtype) {
    return torch::rand(shape, torch_gen_, torch::TensorOptions().dtype(dtype));
}

torch::Tensor Rng::randint(std::int64_t lo, std::int64_t hi, at::IntArrayRef shape) {
    return torch::randint(lo, hi + 1, shape, torch_gen_, torch::TensorOptions().dtype(torch::kLong));
}

Rng Rng::fork(std::string_view name) const { return Rng(derive_seed(seed_, name)); }

Rng Rng::fork(std::uint64_t index) const {
    std::uint64_t s = seed_ ^ (0xd1b54a32d192ed03ULL * (index + 1));
    return Rng(splitmix64(s));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
    std::uint64_t s = root ^ fnv1a64(name);
    return splitmix64(s);
}

}  // namespace anogen
