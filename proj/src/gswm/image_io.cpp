// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/image_io.hpp"

#include <cmath>
#include <cstdint>

#include "gswm/checkpoint.hpp"
#include "gswm/errors.hpp"

namespace gswm {

namespace {

constexpr char kDepthMagic[8] = {'G', 'S', 'W', 'M', 'D', 'P', 'T', 'H'};

unsigned char to_byte(float v) {
  double x = v;
  if (x < 0.0) x = 0.0;
  if (x > 1.0) x = 1.0;
  return static_cast<unsigned char>(std::lround(x * 255.0));
}

}  // namespace

void write_ppm(const std::string& path, int width, int height, const std::vector<float>& rgb) {
  if (width <= 0 || height <= 0) throw ContractError("write_ppm: empty image");
  const size_t n = static_cast<size_t>(width) * height * 3;
  if (rgb.size() != n) throw DimensionError("write_ppm: rgb size mismatch");
  std::string bytes = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  bytes.reserve(bytes.size() + n);
  for (float v : rgb) bytes.push_back(static_cast<char>(to_byte(v)));
  write_file_bytes(path, bytes);
}

LoadedImage read_ppm(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  size_t pos = 0;
  auto token = [&bytes, &pos]() {
    while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' ||
                                  bytes[pos] == '\r')) {
      ++pos;
    }
    const size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != ' ' && bytes[pos] != '\n' && bytes[pos] != '\t' &&
           bytes[pos] != '\r') {
      ++pos;
    }
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw StateError("read_ppm: not a binary pixmap");
  LoadedImage img;
  img.width = std::stoi(token());
  img.height = std::stoi(token());
  if (token() != "255") throw StateError("read_ppm: unsupported maxval");
  ++pos;  // single whitespace byte after maxval
  const size_t n = static_cast<size_t>(img.width) * img.height * 3;
  if (bytes.size() - pos != n) throw StateError("read_ppm: truncated pixel data");
  img.rgb.resize(n);
  for (size_t i = 0; i < n; ++i) {
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  }
  return img;
}

void write_depth_raster(const std::string& path, int width, int height,
                        const std::vector<float>& depth) {
  if (width <= 0 || height <= 0) throw ContractError("write_depth_raster: empty image");
  if (depth.size() != static_cast<size_t>(width) * height) {
    throw DimensionError("write_depth_raster: depth size mismatch");
  }
  std::string bytes(kDepthMagic, sizeof(kDepthMagic));
  append_u32_le(bytes, static_cast<uint32_t>(height));
  append_u32_le(bytes, static_cast<uint32_t>(width));
  for (float v : depth) append_f32_le(bytes, v);
  write_file_bytes(path, bytes);
}

LoadedDepth read_depth_raster(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < 16 || bytes.compare(0, sizeof(kDepthMagic), kDepthMagic,
                                         sizeof(kDepthMagic)) != 0) {
    throw StateError("read_depth_raster: bad header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  LoadedDepth out;
  out.height = static_cast<int>(read_u32_le(p + 8));
  out.width = static_cast<int>(read_u32_le(p + 12));
  const size_t n = static_cast<size_t>(out.width) * out.height;
  if (bytes.size() != 16 + n * 4) throw StateError("read_depth_raster: truncated data");
  out.depth.resize(n);
  for (size_t i = 0; i < n; ++i) out.depth[i] = read_f32_le(p + 16 + i * 4);
  return out;
}

}  // namespace gswm
