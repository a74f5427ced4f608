// Copyright (c) 2026 gswm contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gswm/tensor.hpp"

namespace gswm {

struct FdReport {
  // One relative error per checked (non-frozen) parameter element.
  std::vector<double> rel_errors;
  // Parallel arrays with the raw comparison, for absolute-tolerance checks
  // (forward passes store float32, so FD carries an absolute noise floor).
  std::vector<double> analytic;
  std::vector<double> central;
  double max_rel = 0.0;
  int checked = 0;
  int excluded_frozen = 0;
  // Frozen parameters must report exactly-zero analytic gradients.
  bool frozen_grads_zero = true;
  std::string worst_param;
  int worst_index = -1;

  double frac_below(double tol) const;
  // True when |analytic - central| <= atol + rtol*|central| for every element.
  bool within(double atol, double rtol) const;
};

// Central-difference gradient check: rebuilds the forward graph via `forward`
// (which must be deterministic), compares analytic grads against
// (f(x+h)-f(x-h))/2h elementwise. Relative error is
// |analytic - central| / max(1e-8, |central|). Frozen parameters are verified
// to carry zero analytic gradient and excluded from the error list.
FdReport finite_diff_check(const std::function<Tensor()>& forward,
                           const std::vector<Tensor>& params, double h = 1e-3);

}  // namespace gswm
