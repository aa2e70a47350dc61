// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "fluidctl/ad/tape.hpp"

namespace fluidctl::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int nonfinite_coords = 0;  // coordinates where the numeric probe was not finite
  int checked_coords = 0;

  bool ok(double tol) const { return nonfinite_coords == 0 && max_rel_err < tol; }
};

//! Scalar function of several tensor inputs, evaluated through the tape.
using TapedFn = std::function<Value(Tape&, const std::vector<Value>&)>;

//! Compares reverse-mode gradients against central finite differences.
//!
//! Every stride-th coordinate of every input is probed with an absolute step
//! `eps`. The error metric is |a - n| / max(|a|, |n|, 1e-12) maximized over
//! the probed coordinates. The function must be deterministic.
GradCheckResult grad_check(const TapedFn& fn, const std::vector<Tensor>& points, double eps = 1e-5, int stride = 1);

//! Single-input convenience wrapper.
GradCheckResult grad_check(const std::function<Value(Tape&, const Value&)>& fn, const Tensor& point,
                           double eps = 1e-5);

}  // namespace fluidctl::ad
