// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gswm/errors.hpp"

namespace gswm {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the reverse-mode tape. Values are 32-bit; reductions keep a
// 64-bit copy of scalar outputs in scalar64 so finite-difference checks stay
// meaningful. Graphs are define-by-run: children hold shared_ptrs to parents,
// so a loss tensor keeps its whole graph alive.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // allocated during backward, same length as value
  double scalar64 = 0.0;
  bool has_scalar64 = false;
  bool requires_grad = false;
  bool frozen = false;  // parameters only: reachable grads stay exactly zero
  const char* op = "leaf";
  std::string name;  // parameters only
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  int topo_mark = 0;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float v);
  static Tensor of(Shape shape, std::vector<float> data);
  static Tensor scalar(double v);
  // A learnable leaf: requires_grad, named for the checkpoint manifest.
  static Tensor param(std::string name, Shape shape, std::vector<float> data);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int64_t size() const { return n_->numel(); }

  std::span<const float> data() const { return {n_->value.data(), n_->value.size()}; }
  // Mutable view; for parameter initialization and optimizer updates only.
  std::span<float> raw() { return {n_->value.data(), n_->value.size()}; }
  std::span<const float> grad() const { return {n_->grad.data(), n_->grad.size()}; }
  bool has_grad() const { return !n_->grad.empty(); }

  // Scalar read; prefers the 64-bit copy recorded by reductions.
  double item() const;

  bool requires_grad() const { return n_->requires_grad; }
  bool frozen() const { return n_->frozen; }
  void set_frozen(bool f) { n_->frozen = f; }
  const std::string& name() const { return n_->name; }
  Node* node() const { return n_.get(); }
  std::shared_ptr<Node> node_ptr() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// --- graph machinery -------------------------------------------------------

// Allocates an op node wired to its parents; requires_grad is inherited.
std::shared_ptr<Node> make_node(const char* op, Shape shape, std::vector<Tensor> parents);
// Scans the freshly filled value for NaN/Inf and throws NumericalError
// naming the op. Call after filling node->value.
void finalize_node(const std::shared_ptr<Node>& node);

// Populates grads of every requires_grad node reachable from loss.
// loss must be a scalar produced by a recorded graph. Frozen leaves get a
// zero-filled grad buffer and receive no accumulation.
void backward(const Tensor& loss);

// --- elementwise / linear ops ----------------------------------------------

enum class Act { kNone, kRelu, kSoftplus, kSigmoid, kExp, kTanh };
Act act_from_string(const std::string& s);

Tensor matmul(const Tensor& a, const Tensor& b);           // [N,K] x [K,M]
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);              // same shape
Tensor mul(const Tensor& a, const Tensor& b);              // same shape
Tensor scale(const Tensor& x, double c);
Tensor add_row(const Tensor& x, const Tensor& row);        // [N,M] + [1,M]
Tensor activate(const Tensor& x, Act act);
Tensor clamp(const Tensor& x, float lo, float hi);         // zero grad outside
Tensor transpose2d(const Tensor& x);                       // [A,B] -> [B,A]
Tensor concat_cols(const std::vector<Tensor>& xs);         // [N,Mi] -> [N,sum Mi]
Tensor concat_rows(const std::vector<Tensor>& xs);         // [Ni,M] -> [sum Ni,M]
Tensor slice_cols(const Tensor& x, int c0, int c1);        // [N,M] -> [N,c1-c0]
Tensor broadcast_rows(const Tensor& row, int n);           // [1,M] -> [N,M]
Tensor tile_cols(const Tensor& col, int m);                // [N,1] -> [N,M]
Tensor row_max(const Tensor& x);                           // [N,M] -> [1,M], argmax routing
Tensor mean_rows(const Tensor& x);                         // [N,M] -> [1,M]
Tensor row_normalize(const Tensor& x);                     // rows scaled to unit norm
Tensor detach(const Tensor& x);                            // constant copy

// --- normalization ----------------------------------------------------------

// Per-row layer norm over the last dim: gain * (x-mean)/sqrt(var+eps) + shift.
// Statistics accumulate in 64-bit.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);

// --- reductions (scalar outputs carry scalar64) ------------------------------

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// sum over elements of (x - target)^2; target is a plain constant buffer.
Tensor sum_sq_diff(const Tensor& x, std::span<const float> target);
// mean over elements of (x - target)^2.
Tensor mse(const Tensor& x, std::span<const float> target);
Tensor mse(const Tensor& x, const Tensor& target);  // both sides on the tape
// c0*s0 + c1*s1 + ... over scalar tensors.
Tensor weighted_sum_scalars(const std::vector<std::pair<Tensor, double>>& terms);

// --- convolution family (layouts: 3d [C,D,H,W], 1d [C,L]) -------------------

enum class PadMode { kZero, kPeriodic };

// 3x3x3 kernel, padding 1, stride 1 or 2. w: [Cout,Cin,3,3,3], b: [Cout].
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              PadMode pad = PadMode::kZero);
// Transposed conv, 3x3x3 kernel, stride 2, pad 1, output_padding 1:
// output spatial extent is exactly 2x input. w: [Cin,Cout,3,3,3], b: [Cout].
Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b);
// Per-channel normalization over the spatial extent of one sample
// (batch-free), then affine: gain[c] * xhat + shift[c].
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps);
// [C,D,H,W] -> [D*H*W, C]; row n = (d*H + h)*W + w, matching VoxelGrid cells.
Tensor channels_to_rows(const Tensor& x);
// 1-D conv over [C,L], kernel 3, pad 1, stride 1. w: [Cout,Cin,3], b: [Cout].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace gswm
