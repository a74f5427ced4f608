// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace gswm {

namespace {

void expect_dim(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

// Grad pointer for accumulation; nullptr when the parent takes no gradient.
// Frozen leaves get a zero buffer allocated but receive nothing.
float* grad_of(const std::shared_ptr<Node>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  if (p->frozen) return nullptr;
  return p->grad.data();
}

int pad_index(int i, int n, PadMode pad) {
  if (i >= 0 && i < n) return i;
  if (pad == PadMode::kPeriodic) return ((i % n) + n) % n;
  return -1;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float v) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), v);
  return Tensor(n);
}

Tensor Tensor::of(Shape shape, std::vector<float> data) {
  expect_dim(static_cast<int64_t>(data.size()) == shape_numel(shape),
             "tensor data length does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return Tensor(n);
}

Tensor Tensor::scalar(double v) {
  auto n = std::make_shared<Node>();
  n->shape = {1};
  n->value = {static_cast<float>(v)};
  n->scalar64 = v;
  n->has_scalar64 = true;
  return Tensor(n);
}

Tensor Tensor::param(std::string name, Shape shape, std::vector<float> data) {
  Tensor t = of(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  t.node()->op = "param";
  t.node()->name = std::move(name);
  return t;
}

double Tensor::item() const {
  if (n_->has_scalar64) return n_->scalar64;
  expect_dim(n_->numel() == 1, "item() on non-scalar tensor " + shape_str(n_->shape));
  return static_cast<double>(n_->value[0]);
}

std::shared_ptr<Node> make_node(const char* op, Shape shape, std::vector<Tensor> parents) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0f);
  n->parents.reserve(parents.size());
  for (const Tensor& p : parents) {
    if (!p.defined()) throw ContractError(std::string(op) + ": undefined input tensor");
    if (p.requires_grad()) n->requires_grad = true;
    n->parents.push_back(p.node_ptr());
  }
  return n;
}

void finalize_node(const std::shared_ptr<Node>& node) {
  for (float v : node->value) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite output of op '") + node->op + "'");
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  Node* root = loss.node();
  if (root->numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(root->shape));
  }
  if (!root->requires_grad) {
    throw ContractError("backward on a graph with no learnable inputs");
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  seen.insert(root);
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Node* p = top.first->parents[top.second++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Act act_from_string(const std::string& s) {
  if (s == "none") return Act::kNone;
  if (s == "relu") return Act::kRelu;
  if (s == "softplus") return Act::kSoftplus;
  if (s == "sigmoid") return Act::kSigmoid;
  if (s == "exp") return Act::kExp;
  if (s == "tanh") return Act::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  expect_dim(a.ndim() == 2 && b.ndim() == 2, "matmul needs 2-D inputs");
  const int N = a.dim(0), K = a.dim(1), M = b.dim(1);
  expect_dim(b.dim(0) == K, "matmul inner dims differ: " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  auto node = make_node("matmul", {N, M}, {a, b});
  const float* av = a.data().data();
  const float* bv = b.data().data();
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < M; ++m) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        acc += static_cast<double>(av[n * K + k]) * bv[k * M + m];
      }
      node->value[static_cast<size_t>(n) * M + m] = static_cast<float>(acc);
    }
  }
  finalize_node(node);
  node->backward_fn = [N, K, M](Node& self) {
    const float* dy = self.grad.data();
    const float* av = self.parents[0]->value.data();
    const float* bv = self.parents[1]->value.data();
    if (float* da = grad_of(self.parents[0])) {
      for (int n = 0; n < N; ++n) {
        for (int k = 0; k < K; ++k) {
          double acc = 0.0;
          for (int m = 0; m < M; ++m) {
            acc += static_cast<double>(dy[n * M + m]) * bv[k * M + m];
          }
          da[n * K + k] += static_cast<float>(acc);
        }
      }
    }
    if (float* db = grad_of(self.parents[1])) {
      for (int k = 0; k < K; ++k) {
        for (int m = 0; m < M; ++m) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) {
            acc += static_cast<double>(av[n * K + k]) * dy[n * M + m];
          }
          db[k * M + m] += static_cast<float>(acc);
        }
      }
    }
  };
  return Tensor(node);
}

namespace {

Tensor ewise(const char* op, const Tensor& a, const Tensor& b,
             float (*fwd)(float, float),
             void (*bwd)(float, float, float, float&, float&)) {
  expect_dim(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto node = make_node(op, a.shape(), {a, b});
  const size_t n = node->value.size();
  for (size_t i = 0; i < n; ++i) node->value[i] = fwd(a.data()[i], b.data()[i]);
  finalize_node(node);
  node->backward_fn = [bwd, n](Node& self) {
    float* da = grad_of(self.parents[0]);
    float* db = grad_of(self.parents[1]);
    const float* av = self.parents[0]->value.data();
    const float* bv = self.parents[1]->value.data();
    for (size_t i = 0; i < n; ++i) {
      float ga = 0.0f, gb = 0.0f;
      bwd(av[i], bv[i], self.grad[i], ga, gb);
      if (da) da[i] += ga;
      if (db) db[i] += gb;
    }
  };
  return Tensor(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return ewise(
      "add", a, b, [](float x, float y) { return x + y; },
      [](float, float, float g, float& ga, float& gb) { ga = g; gb = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ewise(
      "sub", a, b, [](float x, float y) { return x - y; },
      [](float, float, float g, float& ga, float& gb) { ga = g; gb = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ewise(
      "mul", a, b, [](float x, float y) { return x * y; },
      [](float x, float y, float g, float& ga, float& gb) { ga = g * y; gb = g * x; });
}

Tensor scale(const Tensor& x, double c) {
  auto node = make_node("scale", x.shape(), {x});
  const float fc = static_cast<float>(c);
  for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = x.data()[i] * fc;
  finalize_node(node);
  node->backward_fn = [fc](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (size_t i = 0; i < self.value.size(); ++i) dx[i] += self.grad[i] * fc;
    }
  };
  return Tensor(node);
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  expect_dim(x.ndim() == 2, "add_row: x must be 2-D");
  const int N = x.dim(0), M = x.dim(1);
  expect_dim(static_cast<int64_t>(M) == row.size(),
             "add_row: row length " + std::to_string(row.size()) + " vs cols " +
                 std::to_string(M));
  auto node = make_node("add_row", x.shape(), {x, row});
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < M; ++m) {
      node->value[static_cast<size_t>(n) * M + m] = x.data()[n * M + m] + row.data()[m];
    }
  }
  finalize_node(node);
  node->backward_fn = [N, M](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (size_t i = 0; i < self.value.size(); ++i) dx[i] += self.grad[i];
    }
    if (float* dr = grad_of(self.parents[1])) {
      for (int m = 0; m < M; ++m) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) acc += self.grad[static_cast<size_t>(n) * M + m];
        dr[m] += static_cast<float>(acc);
      }
    }
  };
  return Tensor(node);
}

Tensor activate(const Tensor& x, Act act) {
  if (act == Act::kNone) return x;
  const char* name = "act";
  switch (act) {
    case Act::kRelu: name = "relu"; break;
    case Act::kSoftplus: name = "softplus"; break;
    case Act::kSigmoid: name = "sigmoid"; break;
    case Act::kExp: name = "exp"; break;
    case Act::kTanh: name = "tanh"; break;
    default: break;
  }
  auto node = make_node(name, x.shape(), {x});
  const size_t n = node->value.size();
  for (size_t i = 0; i < n; ++i) {
    double v = x.data()[i];
    double y = 0.0;
    switch (act) {
      case Act::kRelu: y = v > 0.0 ? v : 0.0; break;
      case Act::kSoftplus: y = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); break;
      case Act::kSigmoid: y = stable_sigmoid(v); break;
      case Act::kExp: y = std::exp(v); break;
      case Act::kTanh: y = std::tanh(v); break;
      default: break;
    }
    node->value[i] = static_cast<float>(y);
  }
  finalize_node(node);
  node->backward_fn = [act, n](Node& self) {
    float* dx = grad_of(self.parents[0]);
    if (!dx) return;
    const float* xv = self.parents[0]->value.data();
    const float* yv = self.value.data();
    for (size_t i = 0; i < n; ++i) {
      double d = 0.0;
      switch (act) {
        case Act::kRelu: d = xv[i] > 0.0f ? 1.0 : 0.0; break;
        case Act::kSoftplus: d = stable_sigmoid(xv[i]); break;
        case Act::kSigmoid: d = static_cast<double>(yv[i]) * (1.0 - yv[i]); break;
        case Act::kExp: d = yv[i]; break;
        case Act::kTanh: d = 1.0 - static_cast<double>(yv[i]) * yv[i]; break;
        default: break;
      }
      dx[i] += static_cast<float>(self.grad[i] * d);
    }
  };
  return Tensor(node);
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  auto node = make_node("clamp", x.shape(), {x});
  for (size_t i = 0; i < node->value.size(); ++i) {
    node->value[i] = std::min(std::max(x.data()[i], lo), hi);
  }
  finalize_node(node);
  node->backward_fn = [lo, hi](Node& self) {
    float* dx = grad_of(self.parents[0]);
    if (!dx) return;
    const float* xv = self.parents[0]->value.data();
    for (size_t i = 0; i < self.value.size(); ++i) {
      if (xv[i] > lo && xv[i] < hi) dx[i] += self.grad[i];
    }
  };
  return Tensor(node);
}

Tensor transpose2d(const Tensor& x) {
  expect_dim(x.ndim() == 2, "transpose2d: x must be 2-D");
  const int N = x.dim(0), M = x.dim(1);
  auto node = make_node("transpose2d", {M, N}, {x});
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < M; ++m) {
      node->value[static_cast<size_t>(m) * N + n] = x.data()[static_cast<size_t>(n) * M + m];
    }
  }
  finalize_node(node);
  node->backward_fn = [N, M](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (int n = 0; n < N; ++n) {
        for (int m = 0; m < M; ++m) {
          dx[static_cast<size_t>(n) * M + m] += self.grad[static_cast<size_t>(m) * N + n];
        }
      }
    }
  };
  return Tensor(node);
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  expect_dim(!xs.empty(), "concat_cols: no inputs");
  const int N = xs[0].dim(0);
  int M = 0;
  for (const Tensor& x : xs) {
    expect_dim(x.ndim() == 2 && x.dim(0) == N, "concat_cols: row counts differ");
    M += x.dim(1);
  }
  auto node = make_node("concat_cols", {N, M}, xs);
  std::vector<int> widths;
  int off = 0;
  for (const Tensor& x : xs) {
    const int m = x.dim(1);
    widths.push_back(m);
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j < m; ++j) {
        node->value[static_cast<size_t>(n) * M + off + j] =
            x.data()[static_cast<size_t>(n) * m + j];
      }
    }
    off += m;
  }
  finalize_node(node);
  node->backward_fn = [N, M, widths](Node& self) {
    int off2 = 0;
    for (size_t p = 0; p < self.parents.size(); ++p) {
      const int m = widths[p];
      if (float* dx = grad_of(self.parents[p])) {
        for (int n = 0; n < N; ++n) {
          for (int j = 0; j < m; ++j) {
            dx[static_cast<size_t>(n) * m + j] +=
                self.grad[static_cast<size_t>(n) * M + off2 + j];
          }
        }
      }
      off2 += m;
    }
  };
  return Tensor(node);
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  expect_dim(!xs.empty(), "concat_rows: no inputs");
  const int M = xs[0].dim(1);
  int N = 0;
  for (const Tensor& x : xs) {
    expect_dim(x.ndim() == 2 && x.dim(1) == M, "concat_rows: column counts differ");
    N += x.dim(0);
  }
  auto node = make_node("concat_rows", {N, M}, xs);
  std::vector<int> heights;
  size_t off = 0;
  for (const Tensor& x : xs) {
    heights.push_back(x.dim(0));
    std::copy(x.data().begin(), x.data().end(), node->value.begin() + off);
    off += x.data().size();
  }
  finalize_node(node);
  node->backward_fn = [M, heights](Node& self) {
    size_t off2 = 0;
    for (size_t p = 0; p < self.parents.size(); ++p) {
      const size_t len = static_cast<size_t>(heights[p]) * M;
      if (float* dx = grad_of(self.parents[p])) {
        for (size_t i = 0; i < len; ++i) dx[i] += self.grad[off2 + i];
      }
      off2 += len;
    }
  };
  return Tensor(node);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  expect_dim(x.ndim() == 2, "slice_cols: x must be 2-D");
  const int N = x.dim(0), M = x.dim(1);
  expect_dim(0 <= c0 && c0 < c1 && c1 <= M, "slice_cols: bad range");
  const int m = c1 - c0;
  auto node = make_node("slice_cols", {N, m}, {x});
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < m; ++j) {
      node->value[static_cast<size_t>(n) * m + j] =
          x.data()[static_cast<size_t>(n) * M + c0 + j];
    }
  }
  finalize_node(node);
  node->backward_fn = [N, M, m, c0](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (int n = 0; n < N; ++n) {
        for (int j = 0; j < m; ++j) {
          dx[static_cast<size_t>(n) * M + c0 + j] += self.grad[static_cast<size_t>(n) * m + j];
        }
      }
    }
  };
  return Tensor(node);
}

Tensor broadcast_rows(const Tensor& row, int n) {
  const int M = static_cast<int>(row.size());
  auto node = make_node("broadcast_rows", {n, M}, {row});
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < M; ++m) node->value[static_cast<size_t>(i) * M + m] = row.data()[m];
  }
  finalize_node(node);
  node->backward_fn = [n, M](Node& self) {
    if (float* dr = grad_of(self.parents[0])) {
      for (int m = 0; m < M; ++m) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += self.grad[static_cast<size_t>(i) * M + m];
        dr[m] += static_cast<float>(acc);
      }
    }
  };
  return Tensor(node);
}

Tensor tile_cols(const Tensor& col, int m) {
  expect_dim(col.ndim() == 2 && col.dim(1) == 1, "tile_cols: col must be [N,1]");
  const int N = col.dim(0);
  auto node = make_node("tile_cols", {N, m}, {col});
  for (int n = 0; n < N; ++n) {
    for (int j = 0; j < m; ++j) node->value[static_cast<size_t>(n) * m + j] = col.data()[n];
  }
  finalize_node(node);
  node->backward_fn = [N, m](Node& self) {
    if (float* dc = grad_of(self.parents[0])) {
      for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) acc += self.grad[static_cast<size_t>(n) * m + j];
        dc[n] += static_cast<float>(acc);
      }
    }
  };
  return Tensor(node);
}

Tensor row_max(const Tensor& x) {
  expect_dim(x.ndim() == 2 && x.dim(0) >= 1, "row_max: x must be [N>=1,M]");
  const int N = x.dim(0), M = x.dim(1);
  auto node = make_node("row_max", {1, M}, {x});
  std::vector<int> arg(static_cast<size_t>(M), 0);
  for (int m = 0; m < M; ++m) {
    float best = x.data()[m];
    int bi = 0;
    for (int n = 1; n < N; ++n) {
      const float v = x.data()[static_cast<size_t>(n) * M + m];
      if (v > best) { best = v; bi = n; }
    }
    node->value[m] = best;
    arg[m] = bi;
  }
  finalize_node(node);
  node->backward_fn = [M, arg](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (int m = 0; m < M; ++m) dx[static_cast<size_t>(arg[m]) * M + m] += self.grad[m];
    }
  };
  return Tensor(node);
}

Tensor mean_rows(const Tensor& x) {
  expect_dim(x.ndim() == 2 && x.dim(0) >= 1, "mean_rows: x must be [N>=1,M]");
  const int N = x.dim(0), M = x.dim(1);
  auto node = make_node("mean_rows", {1, M}, {x});
  for (int m = 0; m < M; ++m) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) acc += x.data()[static_cast<size_t>(n) * M + m];
    node->value[m] = static_cast<float>(acc / N);
  }
  finalize_node(node);
  node->backward_fn = [N, M](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (int m = 0; m < M; ++m) {
        const float g = self.grad[m] / static_cast<float>(N);
        for (int n = 0; n < N; ++n) dx[static_cast<size_t>(n) * M + m] += g;
      }
    }
  };
  return Tensor(node);
}

Tensor row_normalize(const Tensor& x) {
  expect_dim(x.ndim() == 2, "row_normalize: x must be 2-D");
  const int N = x.dim(0), M = x.dim(1);
  auto node = make_node("row_normalize", x.shape(), {x});
  std::vector<double> norms(static_cast<size_t>(N), 1.0);
  for (int n = 0; n < N; ++n) {
    double n2 = 0.0;
    for (int m = 0; m < M; ++m) {
      const double v = x.data()[static_cast<size_t>(n) * M + m];
      n2 += v * v;
    }
    const double norm = std::sqrt(n2);
    if (norm == 0.0) throw NumericalError("row_normalize: zero-norm row");
    norms[static_cast<size_t>(n)] = norm;
    if (std::abs(norm - 1.0) <= 2.5e-7) {
      // Already unit within float round-off: pass values through bit-exact so
      // an identity deformation cannot perturb a quaternion.
      for (int m = 0; m < M; ++m) {
        node->value[static_cast<size_t>(n) * M + m] = x.data()[static_cast<size_t>(n) * M + m];
      }
    } else {
      for (int m = 0; m < M; ++m) {
        node->value[static_cast<size_t>(n) * M + m] =
            static_cast<float>(x.data()[static_cast<size_t>(n) * M + m] / norm);
      }
    }
  }
  finalize_node(node);
  node->backward_fn = [N, M, norms](Node& self) {
    float* dx = grad_of(self.parents[0]);
    if (!dx) return;
    const float* yv = self.value.data();
    for (int n = 0; n < N; ++n) {
      double dot = 0.0;
      for (int m = 0; m < M; ++m) {
        dot += static_cast<double>(self.grad[static_cast<size_t>(n) * M + m]) *
               yv[static_cast<size_t>(n) * M + m];
      }
      const double inv = 1.0 / norms[static_cast<size_t>(n)];
      for (int m = 0; m < M; ++m) {
        const size_t i = static_cast<size_t>(n) * M + m;
        dx[i] += static_cast<float>((self.grad[i] - yv[i] * dot) * inv);
      }
    }
  };
  return Tensor(node);
}

Tensor detach(const Tensor& x) {
  auto n = std::make_shared<Node>();
  n->op = "detach";
  n->shape = x.shape();
  n->value.assign(x.data().begin(), x.data().end());
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  expect_dim(x.ndim() == 2, "layer_norm: x must be 2-D");
  const int N = x.dim(0), M = x.dim(1);
  expect_dim(gain.size() == M && shift.size() == M, "layer_norm: gain/shift length mismatch");
  auto node = make_node("layer_norm", x.shape(), {x, gain, shift});
  std::vector<double> mu(static_cast<size_t>(N)), inv_std(static_cast<size_t>(N));
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int m = 0; m < M; ++m) s += x.data()[static_cast<size_t>(n) * M + m];
    const double mean = s / M;
    double v = 0.0;
    for (int m = 0; m < M; ++m) {
      const double d = x.data()[static_cast<size_t>(n) * M + m] - mean;
      v += d * d;
    }
    const double istd = 1.0 / std::sqrt(v / M + eps);
    mu[static_cast<size_t>(n)] = mean;
    inv_std[static_cast<size_t>(n)] = istd;
    for (int m = 0; m < M; ++m) {
      const double xhat = (x.data()[static_cast<size_t>(n) * M + m] - mean) * istd;
      node->value[static_cast<size_t>(n) * M + m] =
          static_cast<float>(gain.data()[m] * xhat + shift.data()[m]);
    }
  }
  finalize_node(node);
  node->backward_fn = [N, M, mu, inv_std](Node& self) {
    float* dx = grad_of(self.parents[0]);
    float* dg = grad_of(self.parents[1]);
    float* db = grad_of(self.parents[2]);
    const float* xv = self.parents[0]->value.data();
    const float* gv = self.parents[1]->value.data();
    std::vector<double> dg_acc, db_acc;
    if (dg) dg_acc.assign(static_cast<size_t>(M), 0.0);
    if (db) db_acc.assign(static_cast<size_t>(M), 0.0);
    std::vector<double> xhat(static_cast<size_t>(M)), dxh(static_cast<size_t>(M));
    for (int n = 0; n < N; ++n) {
      const double istd = inv_std[static_cast<size_t>(n)];
      const double mean = mu[static_cast<size_t>(n)];
      double s1 = 0.0, s2 = 0.0;
      for (int m = 0; m < M; ++m) {
        const size_t i = static_cast<size_t>(n) * M + m;
        xhat[static_cast<size_t>(m)] = (xv[i] - mean) * istd;
        dxh[static_cast<size_t>(m)] = static_cast<double>(self.grad[i]) * gv[m];
        s1 += dxh[static_cast<size_t>(m)];
        s2 += dxh[static_cast<size_t>(m)] * xhat[static_cast<size_t>(m)];
        if (dg) dg_acc[static_cast<size_t>(m)] += self.grad[i] * xhat[static_cast<size_t>(m)];
        if (db) db_acc[static_cast<size_t>(m)] += self.grad[i];
      }
      if (dx) {
        for (int m = 0; m < M; ++m) {
          const size_t i = static_cast<size_t>(n) * M + m;
          dx[i] += static_cast<float>(
              istd * (dxh[static_cast<size_t>(m)] - s1 / M - xhat[static_cast<size_t>(m)] * s2 / M));
        }
      }
    }
    for (int m = 0; m < M; ++m) {
      if (dg) dg[m] += static_cast<float>(dg_acc[static_cast<size_t>(m)]);
      if (db) db[m] += static_cast<float>(db_acc[static_cast<size_t>(m)]);
    }
  };
  return Tensor(node);
}

Tensor sum_all(const Tensor& x) {
  auto node = make_node("sum_all", {1}, {x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  node->value[0] = static_cast<float>(acc);
  node->scalar64 = acc;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      const float g = self.grad[0];
      for (size_t i = 0; i < self.parents[0]->value.size(); ++i) dx[i] += g;
    }
  };
  return Tensor(node);
}

Tensor mean_all(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  expect_dim(x.size() >= 1, "mean_all: empty tensor");
  auto node = make_node("mean_all", {1}, {x});
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  acc /= n;
  node->value[0] = static_cast<float>(acc);
  node->scalar64 = acc;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [n](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      const float g = static_cast<float>(self.grad[0] / n);
      for (size_t i = 0; i < self.parents[0]->value.size(); ++i) dx[i] += g;
    }
  };
  return Tensor(node);
}

namespace {

Tensor sq_diff_reduce(const char* op, const Tensor& x, std::span<const float> target,
                      bool take_mean) {
  expect_dim(static_cast<int64_t>(target.size()) == x.size(),
             std::string(op) + ": target length mismatch");
  auto node = make_node(op, {1}, {x});
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - target[i];
    acc += d * d;
  }
  if (take_mean) acc /= n;
  node->value[0] = static_cast<float>(acc);
  node->scalar64 = acc;
  node->has_scalar64 = true;
  finalize_node(node);
  std::vector<float> tcopy(target.begin(), target.end());
  node->backward_fn = [tcopy, take_mean, n](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      const double g = take_mean ? self.grad[0] / n : self.grad[0];
      const float* xv = self.parents[0]->value.data();
      for (size_t i = 0; i < tcopy.size(); ++i) {
        dx[i] += static_cast<float>(2.0 * g * (static_cast<double>(xv[i]) - tcopy[i]));
      }
    }
  };
  return Tensor(node);
}

}  // namespace

Tensor sum_sq_diff(const Tensor& x, std::span<const float> target) {
  return sq_diff_reduce("sum_sq_diff", x, target, false);
}

Tensor mse(const Tensor& x, std::span<const float> target) {
  return sq_diff_reduce("mse", x, target, true);
}

Tensor mse(const Tensor& x, const Tensor& target) {
  expect_dim(x.size() == target.size(), "mse: size mismatch");
  auto node = make_node("mse", {1}, {x, target});
  const double n = static_cast<double>(x.size());
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - target.data()[i];
    acc += d * d;
  }
  acc /= n;
  node->value[0] = static_cast<float>(acc);
  node->scalar64 = acc;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [n](Node& self) {
    float* dx = grad_of(self.parents[0]);
    float* dt = grad_of(self.parents[1]);
    const float* xv = self.parents[0]->value.data();
    const float* tv = self.parents[1]->value.data();
    const double g = self.grad[0] / n;
    for (size_t i = 0; i < self.parents[0]->value.size(); ++i) {
      const double d = 2.0 * g * (static_cast<double>(xv[i]) - tv[i]);
      if (dx) dx[i] += static_cast<float>(d);
      if (dt) dt[i] -= static_cast<float>(d);
    }
  };
  return Tensor(node);
}

Tensor weighted_sum_scalars(const std::vector<std::pair<Tensor, double>>& terms) {
  expect_dim(!terms.empty(), "weighted_sum_scalars: no terms");
  std::vector<Tensor> parents;
  std::vector<double> coeffs;
  double acc = 0.0;
  for (const auto& [t, c] : terms) {
    expect_dim(t.size() == 1, "weighted_sum_scalars: non-scalar term");
    parents.push_back(t);
    coeffs.push_back(c);
    acc += c * t.item();
  }
  auto node = make_node("weighted_sum", {1}, parents);
  node->value[0] = static_cast<float>(acc);
  node->scalar64 = acc;
  node->has_scalar64 = true;
  finalize_node(node);
  node->backward_fn = [coeffs](Node& self) {
    for (size_t p = 0; p < self.parents.size(); ++p) {
      if (float* dt = grad_of(self.parents[p])) {
        dt[0] += static_cast<float>(self.grad[0] * coeffs[p]);
      }
    }
  };
  return Tensor(node);
}

// --- convolutions -----------------------------------------------------------

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, PadMode pad) {
  expect_dim(x.ndim() == 4, "conv3d: x must be [C,D,H,W]");
  expect_dim(w.ndim() == 5 && w.dim(2) == 3 && w.dim(3) == 3 && w.dim(4) == 3,
             "conv3d: w must be [Cout,Cin,3,3,3]");
  expect_dim(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");
  const int Cin = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  expect_dim(w.dim(1) == Cin, "conv3d: channel mismatch");
  const int Cout = w.dim(0);
  expect_dim(b.size() == Cout, "conv3d: bias length mismatch");
  const int Do = (D - 1) / stride + 1, Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  auto node = make_node("conv3d", {Cout, Do, Ho, Wo}, {x, w, b});
  const float* xv = x.data().data();
  const float* wv = w.data().data();
  const int64_t sp_in = static_cast<int64_t>(D) * H * W;
  const int64_t sp_out = static_cast<int64_t>(Do) * Ho * Wo;
  for (int oc = 0; oc < Cout; ++oc) {
    for (int od = 0; od < Do; ++od) {
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b.data()[oc];
          for (int ic = 0; ic < Cin; ++ic) {
            for (int kd = 0; kd < 3; ++kd) {
              const int id = pad_index(od * stride + kd - 1, D, pad);
              if (id < 0) continue;
              for (int kh = 0; kh < 3; ++kh) {
                const int ih = pad_index(oh * stride + kh - 1, H, pad);
                if (ih < 0) continue;
                for (int kw = 0; kw < 3; ++kw) {
                  const int iw = pad_index(ow * stride + kw - 1, W, pad);
                  if (iw < 0) continue;
                  acc += static_cast<double>(
                             xv[ic * sp_in + (static_cast<int64_t>(id) * H + ih) * W + iw]) *
                         wv[((static_cast<int64_t>(oc) * Cin + ic) * 27) + kd * 9 + kh * 3 + kw];
                }
              }
            }
          }
          node->value[oc * sp_out + (static_cast<int64_t>(od) * Ho + oh) * Wo + ow] =
              static_cast<float>(acc);
        }
      }
    }
  }
  finalize_node(node);
  node->backward_fn = [Cin, Cout, D, H, W, Do, Ho, Wo, stride, pad, sp_in, sp_out](Node& self) {
    const float* xv = self.parents[0]->value.data();
    const float* wv = self.parents[1]->value.data();
    const float* dy = self.grad.data();
    float* dxf = grad_of(self.parents[0]);
    float* dwf = grad_of(self.parents[1]);
    float* dbf = grad_of(self.parents[2]);
    std::vector<double> dx, dw;
    if (dxf) dx.assign(static_cast<size_t>(Cin) * sp_in, 0.0);
    if (dwf) dw.assign(static_cast<size_t>(Cout) * Cin * 27, 0.0);
    for (int oc = 0; oc < Cout; ++oc) {
      double db_acc = 0.0;
      for (int od = 0; od < Do; ++od) {
        for (int oh = 0; oh < Ho; ++oh) {
          for (int ow = 0; ow < Wo; ++ow) {
            const double g = dy[oc * sp_out + (static_cast<int64_t>(od) * Ho + oh) * Wo + ow];
            if (g == 0.0) continue;
            db_acc += g;
            for (int ic = 0; ic < Cin; ++ic) {
              for (int kd = 0; kd < 3; ++kd) {
                const int id = pad_index(od * stride + kd - 1, D, pad);
                if (id < 0) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int ih = pad_index(oh * stride + kh - 1, H, pad);
                  if (ih < 0) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int iw = pad_index(ow * stride + kw - 1, W, pad);
                    if (iw < 0) continue;
                    const int64_t xi = ic * sp_in + (static_cast<int64_t>(id) * H + ih) * W + iw;
                    const int64_t wi =
                        (static_cast<int64_t>(oc) * Cin + ic) * 27 + kd * 9 + kh * 3 + kw;
                    if (dwf) dw[static_cast<size_t>(wi)] += g * xv[xi];
                    if (dxf) dx[static_cast<size_t>(xi)] += g * wv[wi];
                  }
                }
              }
            }
          }
        }
      }
      if (dbf) dbf[oc] += static_cast<float>(db_acc);
    }
    if (dxf) for (size_t i = 0; i < dx.size(); ++i) dxf[i] += static_cast<float>(dx[i]);
    if (dwf) for (size_t i = 0; i < dw.size(); ++i) dwf[i] += static_cast<float>(dw[i]);
  };
  return Tensor(node);
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& w, const Tensor& b) {
  expect_dim(x.ndim() == 4, "conv_transpose3d: x must be [C,D,H,W]");
  expect_dim(w.ndim() == 5 && w.dim(2) == 3 && w.dim(3) == 3 && w.dim(4) == 3,
             "conv_transpose3d: w must be [Cin,Cout,3,3,3]");
  const int Cin = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  expect_dim(w.dim(0) == Cin, "conv_transpose3d: channel mismatch");
  const int Cout = w.dim(1);
  expect_dim(b.size() == Cout, "conv_transpose3d: bias length mismatch");
  const int Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
  auto node = make_node("conv_transpose3d", {Cout, Do, Ho, Wo}, {x, w, b});
  const float* xv = x.data().data();
  const float* wv = w.data().data();
  const int64_t sp_in = static_cast<int64_t>(D) * H * W;
  const int64_t sp_out = static_cast<int64_t>(Do) * Ho * Wo;
  // y[oc, 2p + k - 1] += x[ic, p] * w[ic, oc, k]; gathered from the output side.
  for (int oc = 0; oc < Cout; ++oc) {
    for (int od = 0; od < Do; ++od) {
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b.data()[oc];
          for (int kd = 0; kd < 3; ++kd) {
            const int nd = od - kd + 1;
            if (nd < 0 || nd % 2 != 0 || nd / 2 >= D) continue;
            for (int kh = 0; kh < 3; ++kh) {
              const int nh = oh - kh + 1;
              if (nh < 0 || nh % 2 != 0 || nh / 2 >= H) continue;
              for (int kw = 0; kw < 3; ++kw) {
                const int nw = ow - kw + 1;
                if (nw < 0 || nw % 2 != 0 || nw / 2 >= W) continue;
                const int64_t pi = (static_cast<int64_t>(nd / 2) * H + nh / 2) * W + nw / 2;
                for (int ic = 0; ic < Cin; ++ic) {
                  acc += static_cast<double>(xv[ic * sp_in + pi]) *
                         wv[(static_cast<int64_t>(ic) * Cout + oc) * 27 + kd * 9 + kh * 3 + kw];
                }
              }
            }
          }
          node->value[oc * sp_out + (static_cast<int64_t>(od) * Ho + oh) * Wo + ow] =
              static_cast<float>(acc);
        }
      }
    }
  }
  finalize_node(node);
  node->backward_fn = [Cin, Cout, D, H, W, Ho, Wo, sp_in, sp_out](Node& self) {
    const float* xv = self.parents[0]->value.data();
    const float* wv = self.parents[1]->value.data();
    const float* dy = self.grad.data();
    float* dxf = grad_of(self.parents[0]);
    float* dwf = grad_of(self.parents[1]);
    float* dbf = grad_of(self.parents[2]);
    std::vector<double> dx, dw;
    if (dxf) dx.assign(static_cast<size_t>(Cin) * sp_in, 0.0);
    if (dwf) dw.assign(static_cast<size_t>(Cin) * Cout * 27, 0.0);
    std::vector<double> db(static_cast<size_t>(Cout), 0.0);
    for (int oc = 0; oc < Cout; ++oc) {
      for (int64_t i = 0; i < sp_out; ++i) db[static_cast<size_t>(oc)] += dy[oc * sp_out + i];
    }
    for (int ic = 0; ic < Cin; ++ic) {
      for (int pd = 0; pd < D; ++pd) {
        for (int ph = 0; ph < H; ++ph) {
          for (int pw = 0; pw < W; ++pw) {
            const int64_t pi = (static_cast<int64_t>(pd) * H + ph) * W + pw;
            const double xval = xv[ic * sp_in + pi];
            double dx_acc = 0.0;
            for (int kd = 0; kd < 3; ++kd) {
              const int od = 2 * pd + kd - 1;
              if (od < 0 || od >= 2 * D) continue;
              for (int kh = 0; kh < 3; ++kh) {
                const int oh = 2 * ph + kh - 1;
                if (oh < 0 || oh >= Ho) continue;
                for (int kw = 0; kw < 3; ++kw) {
                  const int ow = 2 * pw + kw - 1;
                  if (ow < 0 || ow >= Wo) continue;
                  const int64_t yi = (static_cast<int64_t>(od) * Ho + oh) * Wo + ow;
                  for (int oc = 0; oc < Cout; ++oc) {
                    const double g = dy[oc * sp_out + yi];
                    const int64_t wi =
                        (static_cast<int64_t>(ic) * Cout + oc) * 27 + kd * 9 + kh * 3 + kw;
                    dx_acc += g * wv[wi];
                    if (dwf) dw[static_cast<size_t>(wi)] += g * xval;
                  }
                }
              }
            }
            if (dxf) dx[static_cast<size_t>(ic * sp_in + pi)] += dx_acc;
          }
        }
      }
    }
    if (dbf) for (int oc = 0; oc < Cout; ++oc) dbf[oc] += static_cast<float>(db[static_cast<size_t>(oc)]);
    if (dxf) for (size_t i = 0; i < dx.size(); ++i) dxf[i] += static_cast<float>(dx[i]);
    if (dwf) for (size_t i = 0; i < dw.size(); ++i) dwf[i] += static_cast<float>(dw[i]);
  };
  return Tensor(node);
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  expect_dim(x.ndim() >= 2, "channel_norm: x must have a channel dim plus spatial dims");
  const int C = x.dim(0);
  const int64_t S = x.size() / C;
  expect_dim(gain.size() == C && shift.size() == C, "channel_norm: gain/shift length mismatch");
  auto node = make_node("channel_norm", x.shape(), {x, gain, shift});
  std::vector<double> mu(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int64_t i = 0; i < S; ++i) s += x.data()[c * S + i];
    const double mean = s / static_cast<double>(S);
    double v = 0.0;
    for (int64_t i = 0; i < S; ++i) {
      const double d = x.data()[c * S + i] - mean;
      v += d * d;
    }
    const double istd = 1.0 / std::sqrt(v / static_cast<double>(S) + eps);
    mu[static_cast<size_t>(c)] = mean;
    inv_std[static_cast<size_t>(c)] = istd;
    for (int64_t i = 0; i < S; ++i) {
      node->value[static_cast<size_t>(c * S + i)] = static_cast<float>(
          gain.data()[c] * (x.data()[c * S + i] - mean) * istd + shift.data()[c]);
    }
  }
  finalize_node(node);
  node->backward_fn = [C, S, mu, inv_std](Node& self) {
    float* dx = grad_of(self.parents[0]);
    float* dg = grad_of(self.parents[1]);
    float* db = grad_of(self.parents[2]);
    const float* xv = self.parents[0]->value.data();
    const float* gv = self.parents[1]->value.data();
    for (int c = 0; c < C; ++c) {
      const double istd = inv_std[static_cast<size_t>(c)];
      const double mean = mu[static_cast<size_t>(c)];
      double s1 = 0.0, s2 = 0.0, sg = 0.0, sb = 0.0;
      for (int64_t i = 0; i < S; ++i) {
        const size_t idx = static_cast<size_t>(c * S + i);
        const double xhat = (xv[idx] - mean) * istd;
        const double dxh = static_cast<double>(self.grad[idx]) * gv[c];
        s1 += dxh;
        s2 += dxh * xhat;
        sg += self.grad[idx] * xhat;
        sb += self.grad[idx];
      }
      if (dg) dg[c] += static_cast<float>(sg);
      if (db) db[c] += static_cast<float>(sb);
      if (dx) {
        const double n = static_cast<double>(S);
        for (int64_t i = 0; i < S; ++i) {
          const size_t idx = static_cast<size_t>(c * S + i);
          const double xhat = (xv[idx] - mean) * istd;
          const double dxh = static_cast<double>(self.grad[idx]) * gv[c];
          dx[idx] += static_cast<float>(istd * (dxh - s1 / n - xhat * s2 / n));
        }
      }
    }
  };
  return Tensor(node);
}

Tensor channels_to_rows(const Tensor& x) {
  expect_dim(x.ndim() == 4, "channels_to_rows: x must be [C,D,H,W]");
  const int C = x.dim(0);
  const int64_t S = static_cast<int64_t>(x.dim(1)) * x.dim(2) * x.dim(3);
  auto node = make_node("channels_to_rows", {static_cast<int>(S), C}, {x});
  for (int64_t n = 0; n < S; ++n) {
    for (int c = 0; c < C; ++c) {
      node->value[static_cast<size_t>(n) * C + c] = x.data()[c * S + n];
    }
  }
  finalize_node(node);
  node->backward_fn = [C, S](Node& self) {
    if (float* dx = grad_of(self.parents[0])) {
      for (int64_t n = 0; n < S; ++n) {
        for (int c = 0; c < C; ++c) {
          dx[c * S + n] += self.grad[static_cast<size_t>(n) * C + c];
        }
      }
    }
  };
  return Tensor(node);
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  expect_dim(x.ndim() == 2, "conv1d: x must be [C,L]");
  expect_dim(w.ndim() == 3 && w.dim(2) == 3, "conv1d: w must be [Cout,Cin,3]");
  const int Cin = x.dim(0), L = x.dim(1);
  expect_dim(w.dim(1) == Cin, "conv1d: channel mismatch");
  const int Cout = w.dim(0);
  expect_dim(b.size() == Cout, "conv1d: bias length mismatch");
  auto node = make_node("conv1d", {Cout, L}, {x, w, b});
  for (int oc = 0; oc < Cout; ++oc) {
    for (int t = 0; t < L; ++t) {
      double acc = b.data()[oc];
      for (int ic = 0; ic < Cin; ++ic) {
        for (int k = 0; k < 3; ++k) {
          const int s = t + k - 1;
          if (s < 0 || s >= L) continue;
          acc += static_cast<double>(x.data()[static_cast<size_t>(ic) * L + s]) *
                 w.data()[(static_cast<size_t>(oc) * Cin + ic) * 3 + k];
        }
      }
      node->value[static_cast<size_t>(oc) * L + t] = static_cast<float>(acc);
    }
  }
  finalize_node(node);
  node->backward_fn = [Cin, Cout, L](Node& self) {
    const float* xv = self.parents[0]->value.data();
    const float* wv = self.parents[1]->value.data();
    float* dx = grad_of(self.parents[0]);
    float* dw = grad_of(self.parents[1]);
    float* db = grad_of(self.parents[2]);
    for (int oc = 0; oc < Cout; ++oc) {
      double db_acc = 0.0;
      for (int t = 0; t < L; ++t) {
        const double g = self.grad[static_cast<size_t>(oc) * L + t];
        db_acc += g;
        for (int ic = 0; ic < Cin; ++ic) {
          for (int k = 0; k < 3; ++k) {
            const int s = t + k - 1;
            if (s < 0 || s >= L) continue;
            const size_t wi = (static_cast<size_t>(oc) * Cin + ic) * 3 + k;
            if (dw) dw[wi] += static_cast<float>(g * xv[static_cast<size_t>(ic) * L + s]);
            if (dx) dx[static_cast<size_t>(ic) * L + s] += static_cast<float>(g * wv[wi]);
          }
        }
      }
      if (db) db[oc] += static_cast<float>(db_acc);
    }
  };
  return Tensor(node);
}

}  // namespace gswm
