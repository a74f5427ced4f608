// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace gswm {

// 8-bit binary portable pixmap, maxval 255, row-major from the top-left.
// Values are clamped to [0,1] and rounded half away from zero, so the bytes
// are identical across platforms.
void write_ppm(const std::string& path, int width, int height, const std::vector<float>& rgb);

struct LoadedImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // [H*W*3] in [0,1]
};
LoadedImage read_ppm(const std::string& path);

// Depth raster: 16-byte header (8-byte magic "GSWMDPTH", u32 height,
// u32 width, little-endian) followed by H*W little-endian 32-bit floats.
void write_depth_raster(const std::string& path, int width, int height,
                        const std::vector<float>& depth);

struct LoadedDepth {
  int width = 0;
  int height = 0;
  std::vector<float> depth;
};
LoadedDepth read_depth_raster(const std::string& path);

}  // namespace gswm
