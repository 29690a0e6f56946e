#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <ATen/core/Generator.h>
#include <torch/types.h>

namespace anogen {

// Seeded random source. Scalar draws come from a splitmix/xoshiro stream so
// they are identical across standard libraries; tensor draws go through a
// torch CPU generator seeded from the same root seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();
    bool bernoulli(double p);

    torch::Tensor randn(at::IntArrayRef shape, torch::ScalarType dtype = torch::kFloat);
    torch::Tensor rand(at::IntArrayRef shape, torch::ScalarType dtype = torch::kFloat);
    // Integers uniform in [lo, hi] inclusive, int64 dtype.
    torch::Tensor randint(std::int64_t lo, std::int64_t hi, at::IntArrayRef shape);

    // Independent child stream derived from (seed, name). Does not advance this stream.
    Rng fork(std::string_view name) const;
    // Child stream derived from (seed, index). Does not advance this stream.
    Rng fork(std::uint64_t index) const;

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i - 1)));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_[4];
    at::Generator torch_gen_;
};

// Deterministic sub-seed for a named stage, e.g. derive_seed(root, "stage1").
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

}  // namespace anogen
