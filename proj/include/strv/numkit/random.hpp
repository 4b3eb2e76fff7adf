#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

#include "strv/numkit/tensor.hpp"

namespace strv::numkit {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Uniform in +-sqrt(6 / (fan_in + fan_out)) where fan_in/fan_out are the
// tensor's rows/cols.
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);

// Box-Muller over uniform01, so streams do not depend on the standard
// library's distribution implementations.
double standard_normal(Rng& rng);
double uniform01(Rng& rng);
// Unbiased integer in [0, n) by rejection; n > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Fisher-Yates over uniform_index.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

}  // namespace strv::numkit
