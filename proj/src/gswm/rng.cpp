// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/rng.hpp"

#include <cmath>

namespace gswm {

uint64_t hash_label(std::string_view label) {
  uint64_t h = 1469598103934665603ull;
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

static uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view label, uint64_t counter) {
  uint64_t h = splitmix64(master ^ hash_label(label));
  return splitmix64(h + 0x9e3779b97f4a7c15ull * (counter + 1));
}

}  // namespace gswm
