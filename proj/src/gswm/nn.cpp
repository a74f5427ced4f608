// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/nn.hpp"

#include <cmath>

namespace gswm {

Tensor Registry::add(const std::string& name, Shape shape, std::vector<float> init) {
  if (by_name_.count(name)) throw StateError("duplicate parameter name '" + name + "'");
  Tensor t = Tensor::param(name, std::move(shape), std::move(init));
  by_name_[name] = params_.size();
  params_.push_back(t);
  return t;
}

Tensor Registry::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw StateError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::vector<Tensor> Registry::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const Tensor& p : params_) {
    if (p.name().rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

void Registry::set_frozen(const std::string& prefix, bool frozen) {
  for (Tensor& p : params_) {
    if (p.name().rfind(prefix, 0) == 0) p.set_frozen(frozen);
  }
}

void Registry::zero_grads() {
  for (Tensor& p : params_) p.node()->grad.clear();
}

std::vector<float> uniform_init(RngStream& rng, size_t n, double lo, double hi) {
  std::vector<float> out(n);
  for (float& v : out) v = static_cast<float>(rng.uniform(lo, hi));
  return out;
}

std::vector<float> fan_in_init(RngStream& rng, size_t n, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform_init(rng, n, -bound, bound);
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.ndim() != 2 || W.ndim() != 2) throw DimensionError("linear: 2-D x and W required");
  const int N = x.dim(0), K = x.dim(1), O = W.dim(0);
  if (W.dim(1) != K) {
    throw DimensionError("linear: input width " + std::to_string(K) + " vs layer in-dim " +
                         std::to_string(W.dim(1)));
  }
  if (b.size() != O) throw DimensionError("linear: bias length mismatch");
  auto node = make_node("linear", {N, O}, {x, W, b});
  const float* xv = x.data().data();
  const float* wv = W.data().data();
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double acc = b.data()[o];
      for (int k = 0; k < K; ++k) {
        acc += static_cast<double>(xv[n * K + k]) * wv[o * K + k];
      }
      node->value[static_cast<size_t>(n) * O + o] = static_cast<float>(acc);
    }
  }
  finalize_node(node);
  node->backward_fn = [N, K, O](Node& self) {
    const float* dy = self.grad.data();
    const float* xv = self.parents[0]->value.data();
    const float* wv = self.parents[1]->value.data();
    float* dx = nullptr, *dw = nullptr, *db = nullptr;
    {
      auto g = [](const std::shared_ptr<Node>& p) -> float* {
        if (!p->requires_grad) return nullptr;
        p->ensure_grad();
        return p->frozen ? nullptr : p->grad.data();
      };
      dx = g(self.parents[0]);
      dw = g(self.parents[1]);
      db = g(self.parents[2]);
    }
    if (dx) {
      for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int o = 0; o < O; ++o) {
            acc += static_cast<double>(dy[n * O + o]) * wv[o * K + k];
          }
          dx[n * K + k] += static_cast<float>(acc);
        }
      }
    }
    if (dw) {
      for (int o = 0; o < O; ++o) {
        for (int k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) {
            acc += static_cast<double>(dy[n * O + o]) * xv[n * K + k];
          }
          dw[o * K + k] += static_cast<float>(acc);
        }
      }
    }
    if (db) {
      for (int o = 0; o < O; ++o) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += dy[n * O + o];
        db[o] += static_cast<float>(acc);
      }
    }
  };
  return Tensor(node);
}

DenseLayer::DenseLayer(Registry& reg, const std::string& name, int in, int out, RngStream& rng) {
  W = reg.add(name + ".W", {out, in}, fan_in_init(rng, static_cast<size_t>(out) * in, in));
  b = reg.add(name + ".b", {out}, fan_in_init(rng, static_cast<size_t>(out), in));
}

LayerNormLayer::LayerNormLayer(Registry& reg, const std::string& name, int width) {
  gain = reg.add(name + ".gain", {width}, std::vector<float>(static_cast<size_t>(width), 1.0f));
  shift = reg.add(name + ".shift", {width}, std::vector<float>(static_cast<size_t>(width), 0.0f));
}

Conv3dLayer::Conv3dLayer(Registry& reg, const std::string& name, int cin, int cout, int stride_,
                         RngStream& rng)
    : stride(stride_) {
  const int fan = cin * 27;
  w = reg.add(name + ".w", {cout, cin, 3, 3, 3},
              fan_in_init(rng, static_cast<size_t>(cout) * cin * 27, fan));
  b = reg.add(name + ".b", {cout}, fan_in_init(rng, static_cast<size_t>(cout), fan));
}

ConvT3dLayer::ConvT3dLayer(Registry& reg, const std::string& name, int cin, int cout,
                           RngStream& rng) {
  const int fan = cin * 27;
  w = reg.add(name + ".w", {cin, cout, 3, 3, 3},
              fan_in_init(rng, static_cast<size_t>(cin) * cout * 27, fan));
  b = reg.add(name + ".b", {cout}, fan_in_init(rng, static_cast<size_t>(cout), fan));
}

ChannelNormLayer::ChannelNormLayer(Registry& reg, const std::string& name, int channels) {
  gain = reg.add(name + ".gain", {channels}, std::vector<float>(static_cast<size_t>(channels), 1.0f));
  shift = reg.add(name + ".shift", {channels}, std::vector<float>(static_cast<size_t>(channels), 0.0f));
}

Conv1dLayer::Conv1dLayer(Registry& reg, const std::string& name, int cin, int cout,
                         RngStream& rng) {
  const int fan = cin * 3;
  w = reg.add(name + ".w", {cout, cin, 3}, fan_in_init(rng, static_cast<size_t>(cout) * cin * 3, fan));
  b = reg.add(name + ".b", {cout}, fan_in_init(rng, static_cast<size_t>(cout), fan));
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  slots_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i].raw().size(), 0.0f);
    slots_[i].v.assign(params_[i].raw().size(), 0.0f);
  }
}

void Adam::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (p.frozen() || !p.has_grad()) continue;
    Slot& s = slots_[i];
    s.t += 1;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    auto vals = p.raw();
    auto grads = p.grad();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double g = grads[j];
      const double m = cfg_.beta1 * s.m[j] + (1.0 - cfg_.beta1) * g;
      const double v = cfg_.beta2 * s.v[j] + (1.0 - cfg_.beta2) * g * g;
      s.m[j] = static_cast<float>(m);
      s.v[j] = static_cast<float>(v);
      vals[j] = static_cast<float>(vals[j] - cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.node()->grad.clear();
}

}  // namespace gswm
