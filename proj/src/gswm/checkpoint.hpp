// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gswm/nn.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// Checkpoint: `<stem>.json` manifest (tensor name, shape, byte offset) plus
// `<stem>.bin`, one blob of little-endian 32-bit floats, row-major.
// Round-trips are bit-exact.

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint(const std::string& stem, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta);

struct LoadedCheckpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;
  const NamedTensor* find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& stem);

// Registry parameters plus optional optimizer slots, ready for save_checkpoint.
std::vector<NamedTensor> snapshot_params(const Registry& reg);
std::vector<NamedTensor> snapshot_optimizer(const Adam& opt);
// Loads values into existing registry parameters by name; every registry
// parameter must be present with a matching shape.
void restore_params(Registry& reg, const LoadedCheckpoint& ckpt);
void restore_optimizer(Adam& opt, const LoadedCheckpoint& ckpt);

// Little-endian float serialization used by every binary format in the repo.
void append_f32_le(std::string& out, float v);
void append_u32_le(std::string& out, uint32_t v);
float read_f32_le(const unsigned char* p);
uint32_t read_u32_le(const unsigned char* p);

void write_file_bytes(const std::string& path, const std::string& bytes);
std::string read_file_bytes(const std::string& path);

}  // namespace gswm
