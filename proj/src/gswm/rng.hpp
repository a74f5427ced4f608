// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gswm {

// All randomness flows from one master seed through named streams, so any
// sub-stream (weights init, one demo episode, one eval rollout) can be
// reproduced in isolation. Uniform/normal draws are hand-rolled on top of
// mt19937_64 because the std distributions are implementation-defined and
// we require identical bytes across platforms.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 bits of entropy.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t uniform_int(uint64_t n) {
    // Rejection-free modulo is biased for huge n; our n are tiny.
    return gen_() % n;
  }

  // Box-Muller, two uniforms per draw, no cached spare.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

// Stable 64-bit label hash (FNV-1a).
uint64_t hash_label(std::string_view label);

// Derive the seed of a named sub-stream from the master seed.
uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t counter = 0);

inline RngStream derive_stream(uint64_t master, std::string_view label, uint64_t counter = 0) {
  return RngStream(derive_seed(master, label, counter));
}

}  // namespace gswm
