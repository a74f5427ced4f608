// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#include "gswm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gswm {

double FdReport::frac_below(double tol) const {
  if (rel_errors.empty()) return 1.0;
  int64_t n = 0;
  for (double e : rel_errors) n += (e < tol) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(rel_errors.size());
}

bool FdReport::within(double atol, double rtol) const {
  for (size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i] - central[i]) > atol + rtol * std::abs(central[i])) return false;
  }
  return true;
}

FdReport finite_diff_check(const std::function<Tensor()>& forward,
                           const std::vector<Tensor>& params, double h) {
  if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");
  FdReport report;

  std::vector<Tensor> mut = params;
  for (Tensor& p : mut) p.node()->grad.clear();
  Tensor loss = forward();
  backward(loss);

  std::vector<std::vector<float>> analytic(mut.size());
  for (size_t i = 0; i < mut.size(); ++i) {
    if (mut[i].has_grad()) {
      analytic[i].assign(mut[i].grad().begin(), mut[i].grad().end());
    } else {
      analytic[i].assign(mut[i].raw().size(), 0.0f);
    }
  }

  for (size_t i = 0; i < mut.size(); ++i) {
    Tensor& p = mut[i];
    auto vals = p.raw();
    if (p.frozen()) {
      for (float g : analytic[i]) {
        if (g != 0.0f) report.frozen_grads_zero = false;
      }
      report.excluded_frozen += static_cast<int>(vals.size());
      continue;
    }
    for (size_t j = 0; j < vals.size(); ++j) {
      const float orig = vals[j];
      const float vp = static_cast<float>(orig + h);
      const float vm = static_cast<float>(orig - h);
      vals[j] = vp;
      const double lp = forward().item();
      vals[j] = vm;
      const double lm = forward().item();
      vals[j] = orig;
      // Divide by the step actually realized after float quantization.
      const double central = (lp - lm) / (static_cast<double>(vp) - vm);
      const double rel =
          std::abs(static_cast<double>(analytic[i][j]) - central) / std::max(1e-8, std::abs(central));
      report.rel_errors.push_back(rel);
      report.analytic.push_back(analytic[i][j]);
      report.central.push_back(central);
      report.checked += 1;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst_param = p.name().empty() ? ("param" + std::to_string(i)) : p.name();
        report.worst_index = static_cast<int>(j);
      }
    }
  }
  return report;
}

}  // namespace gswm
