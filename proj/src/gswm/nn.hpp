// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gswm/rng.hpp"
#include "gswm/tensor.hpp"

namespace gswm {

// Owns every learnable tensor of a model under a unique hierarchical name.
// Checkpoints, freezing, and the optimizer all address parameters through it.
class Registry {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<float> init);
  const std::vector<Tensor>& params() const { return params_; }
  bool has(const std::string& name) const { return by_name_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  std::vector<Tensor> with_prefix(const std::string& prefix) const;
  // Freezes (or thaws) every parameter whose name starts with prefix.
  void set_frozen(const std::string& prefix, bool frozen);
  void zero_grads();

 private:
  std::vector<Tensor> params_;
  std::unordered_map<std::string, size_t> by_name_;
};

std::vector<float> uniform_init(RngStream& rng, size_t n, double lo, double hi);
// Fan-in scaled uniform, the torch Linear/Conv default: U(-1/sqrt(fan), +1/sqrt(fan)).
std::vector<float> fan_in_init(RngStream& rng, size_t n, int fan_in);

// y = x W^T + b with W stored [out,in]; activation applied separately.
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

struct DenseLayer {
  Tensor W, b;  // W: [out,in]
  DenseLayer() = default;
  DenseLayer(Registry& reg, const std::string& name, int in, int out, RngStream& rng);
  Tensor forward(const Tensor& x) const { return linear(x, W, b); }
  Tensor forward(const Tensor& x, Act act) const { return activate(forward(x), act); }
  int out_dim() const { return W.dim(0); }
  int in_dim() const { return W.dim(1); }
};

struct LayerNormLayer {
  Tensor gain, shift;
  double eps = 1e-5;
  LayerNormLayer() = default;
  LayerNormLayer(Registry& reg, const std::string& name, int width);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, shift, eps); }
};

struct Conv3dLayer {
  Tensor w, b;  // w: [Cout,Cin,3,3,3]
  int stride = 1;
  Conv3dLayer() = default;
  Conv3dLayer(Registry& reg, const std::string& name, int cin, int cout, int stride,
              RngStream& rng);
  Tensor forward(const Tensor& x, PadMode pad = PadMode::kZero) const {
    return conv3d(x, w, b, stride, pad);
  }
};

struct ConvT3dLayer {
  Tensor w, b;  // w: [Cin,Cout,3,3,3]
  ConvT3dLayer() = default;
  ConvT3dLayer(Registry& reg, const std::string& name, int cin, int cout, RngStream& rng);
  Tensor forward(const Tensor& x) const { return conv_transpose3d(x, w, b); }
};

struct ChannelNormLayer {
  Tensor gain, shift;
  double eps = 1e-5;
  ChannelNormLayer() = default;
  ChannelNormLayer(Registry& reg, const std::string& name, int channels);
  Tensor forward(const Tensor& x) const { return channel_norm(x, gain, shift, eps); }
};

struct Conv1dLayer {
  Tensor w, b;  // w: [Cout,Cin,3]
  Conv1dLayer() = default;
  Conv1dLayer(Registry& reg, const std::string& name, int cin, int cout, RngStream& rng);
  Tensor forward(const Tensor& x) const { return conv1d(x, w, b); }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Frozen parameters are skipped entirely;
// parameters with no grad buffer this step (unreached subgraphs) are skipped too.
// Moment buffers carry a per-parameter step count so freezing does not skew
// bias correction.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);
  void step();
  void zero_grad();
  const AdamConfig& config() const { return cfg_; }
  // Optimizer state exposed for exact-resume checkpointing.
  struct Slot {
    std::vector<float> m, v;
    int64_t t = 0;
  };
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  AdamConfig cfg_;
};

}  // namespace gswm
