// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace gswm {

void append_f32_le(std::string& out, float v) {
  uint32_t u = 0;
  std::memcpy(&u, &v, 4);
  append_u32_le(out, u);
}

void append_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

float read_f32_le(const unsigned char* p) {
  const uint32_t u = read_u32_le(p);
  float f = 0.0f;
  std::memcpy(&f, &u, 4);
  return f;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw StateError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw StateError("write failed: " + path);
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw StateError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

void save_checkpoint(const std::string& stem, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& meta) {
  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  for (const NamedTensor& t : tensors) {
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["offset_bytes"] = blob.size();
    entry["numel"] = t.data.size();
    index.push_back(entry);
    for (float v : t.data) append_f32_le(blob, v);
  }
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["blob_bytes"] = blob.size();
  manifest["tensors"] = index;
  manifest["meta"] = meta;
  write_file_bytes(stem + ".bin", blob);
  write_file_bytes(stem + ".json", manifest.dump(2) + "\n");
}

const NamedTensor* LoadedCheckpoint::find(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

LoadedCheckpoint load_checkpoint(const std::string& stem) {
  LoadedCheckpoint out;
  nlohmann::json manifest = nlohmann::json::parse(read_file_bytes(stem + ".json"));
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw StateError("checkpoint format version mismatch in " + stem + ".json");
  }
  const std::string blob = read_file_bytes(stem + ".bin");
  if (blob.size() != manifest.value("blob_bytes", size_t{0})) {
    throw StateError("checkpoint blob size mismatch for " + stem);
  }
  out.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const size_t offset = entry.at("offset_bytes").get<size_t>();
    const size_t numel = entry.at("numel").get<size_t>();
    if (offset + numel * 4 > blob.size()) {
      throw StateError("checkpoint tensor '" + t.name + "' overruns blob");
    }
    t.data.resize(numel);
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + offset;
    for (size_t i = 0; i < numel; ++i) t.data[i] = read_f32_le(p + i * 4);
    out.tensors.push_back(std::move(t));
  }
  return out;
}

std::vector<NamedTensor> snapshot_params(const Registry& reg) {
  std::vector<NamedTensor> out;
  for (const Tensor& p : reg.params()) {
    out.push_back({p.name(), p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
  }
  return out;
}

std::vector<NamedTensor> snapshot_optimizer(const Adam& opt) {
  std::vector<NamedTensor> out;
  const auto& params = opt.params();
  auto& slots = const_cast<Adam&>(opt).slots();
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params[i].name();
    out.push_back({"opt.m." + n, params[i].shape(), slots[i].m});
    out.push_back({"opt.v." + n, params[i].shape(), slots[i].v});
    out.push_back({"opt.t." + n, {1}, {static_cast<float>(slots[i].t)}});
  }
  return out;
}

void restore_params(Registry& reg, const LoadedCheckpoint& ckpt) {
  for (const Tensor& pc : reg.params()) {
    Tensor p = pc;
    const NamedTensor* t = ckpt.find(p.name());
    if (!t) throw StateError("checkpoint missing parameter '" + p.name() + "'");
    if (t->shape != p.shape()) {
      throw StateError("checkpoint shape mismatch for '" + p.name() + "': file " +
                       shape_str(t->shape) + " vs model " + shape_str(p.shape()));
    }
    std::copy(t->data.begin(), t->data.end(), p.raw().begin());
  }
}

void restore_optimizer(Adam& opt, const LoadedCheckpoint& ckpt) {
  auto& slots = opt.slots();
  const auto& params = opt.params();
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params[i].name();
    const NamedTensor* m = ckpt.find("opt.m." + n);
    const NamedTensor* v = ckpt.find("opt.v." + n);
    const NamedTensor* t = ckpt.find("opt.t." + n);
    if (!m || !v || !t) throw StateError("checkpoint missing optimizer state for '" + n + "'");
    if (m->data.size() != slots[i].m.size() || v->data.size() != slots[i].v.size()) {
      throw StateError("optimizer state size mismatch for '" + n + "'");
    }
    slots[i].m = m->data;
    slots[i].v = v->data;
    slots[i].t = static_cast<int64_t>(t->data.at(0));
  }
}

}  // namespace gswm
