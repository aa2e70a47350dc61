// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/ad/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace fluidctl::ad {

namespace {

double eval_plain(const TapedFn& fn, const std::vector<Tensor>& points) {
  // Detached inputs: the function runs without recording.
  std::vector<Value> vals;
  vals.reserve(points.size());
  for (const Tensor& p : points) vals.push_back(Value::constant(p));
  Tape scratch;  // present for signature symmetry; nothing records on it
  Value out = fn(scratch, vals);
  return out.tensor().item();
}

}  // namespace

GradCheckResult grad_check(const TapedFn& fn, const std::vector<Tensor>& points, double eps, int stride) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
  if (stride < 1) throw std::invalid_argument("grad_check: stride must be at least 1");

  // Analytic gradients.
  Tape tape;
  std::vector<Value> leaves;
  leaves.reserve(points.size());
  for (const Tensor& p : points) leaves.push_back(tape.leaf(p));
  Value loss = fn(tape, leaves);
  if (loss.tensor().size() != 1) throw std::invalid_argument("grad_check: function must return a scalar");

  std::vector<Tensor> analytic;
  if (loss.on_tape()) {
    tape.backward(loss);
    for (const Value& l : leaves) analytic.push_back(tape.grad(l));
  } else {
    // Function ignored its inputs: gradient is identically zero.
    for (const Tensor& p : points) analytic.emplace_back(p.shape());
  }

  GradCheckResult res;
  std::vector<Tensor> probe = points;
  for (size_t k = 0; k < points.size(); ++k) {
    for (int i = 0; i < points[k].size(); i += stride) {
      const double orig = probe[k][i];
      probe[k][i] = orig + eps;
      const double fp = eval_plain(fn, probe);
      probe[k][i] = orig - eps;
      const double fm = eval_plain(fn, probe);
      probe[k][i] = orig;

      ++res.checked_coords;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        ++res.nonfinite_coords;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double denom = std::max(std::max(std::fabs(a), std::fabs(numeric)), 1e-12);
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
    }
  }
  return res;
}

GradCheckResult grad_check(const std::function<Value(Tape&, const Value&)>& fn, const Tensor& point, double eps) {
  return grad_check([&fn](Tape& t, const std::vector<Value>& v) { return fn(t, v[0]); }, std::vector<Tensor>{point},
                    eps);
}

}  // namespace fluidctl::ad
