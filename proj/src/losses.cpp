// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/losses/losses.hpp"

#include <stdexcept>

#include "fluidctl/ad/ops_extra.hpp"

namespace fluidctl::losses {

using ad::Tensor;

void LossWeights::validate() const {
  if (l < 1) throw std::invalid_argument("losses: window length must be at least 1");
  const double all[] = {beta_xy, beta_alpha, beta_xdot, beta_alphadot, beta_prox, beta_f, beta_t, beta_df, beta_dt};
  for (double b : all)
    if (b < 0) throw std::invalid_argument("losses: weights must be nonnegative");
}

LossWeights LossWeights::for_dof(int dof) {
  LossWeights w;
  if (dof == 2) {
    w.beta_xy = 15.0;
    w.beta_xdot = 5.0;
    w.beta_f = 0.1;
    w.beta_df = 2.0;
    w.beta_prox = 0.1;
  } else if (dof == 3) {
    w.beta_xy = 5.0;
    w.beta_alpha = 30.0;
    w.beta_xdot = 5.0;
    w.beta_alphadot = 0.05;
    w.beta_f = 0.1;
    w.beta_df = 1.0;
    w.beta_dt = 1.0;
    w.beta_prox = 0.1;
  } else {
    throw std::invalid_argument("losses: dof must be 2 or 3");
  }
  return w;
}

LossWeights apply_ablation(const LossWeights& w, const std::string& token) {
  LossWeights out = w;
  if (token == "OVE") return out;
  if (token == "OV") {
    out.beta_f = out.beta_t = out.beta_df = out.beta_dt = 0.0;
    return out;
  }
  if (token == "OE") {
    out.beta_xdot = out.beta_alphadot = 0.0;
    return out;
  }
  if (token == "O") {
    out.beta_f = out.beta_t = out.beta_df = out.beta_dt = 0.0;
    out.beta_xdot = out.beta_alphadot = 0.0;
    return out;
  }
  throw std::invalid_argument("losses: unknown ablation \"" + token + "\" (valid: OVE, OV, OE, O)");
}

WindowStep window_step(const env::SimState& s, const env::Objective& obj) {
  WindowStep ws;
  ws.e_xy = ad::sub(Value::constant(Tensor::vec2(obj.x_obj.x, obj.x_obj.y)), s.body.x);
  ws.e_alpha = ad::wrap_angle_op(ad::sub(Value::constant(obj.alpha_obj), s.body.alpha));
  ws.xdot = s.body.v;
  ws.alphadot = s.body.omega;
  ws.f_c = s.last_force;
  ws.t_c = s.last_torque;
  return ws;
}

namespace {

Value scalar_const(double v) { return Value::constant(Tensor::scalar(v)); }

void check_trace(const WindowTrace& trace, const LossWeights& w) {
  w.validate();
  if (static_cast<int>(trace.steps.size()) != w.l)
    throw std::invalid_argument("losses: trace holds " + std::to_string(trace.steps.size()) + " steps, window is " +
                                std::to_string(w.l));
}

//! sum over steps of |get(step)|^2, scaled by beta / l.
template <typename Get>
Value scaled_square_sum(const WindowTrace& trace, double beta, int l, Get get) {
  Value acc;
  for (const WindowStep& s : trace.steps) {
    Value q = ad::sum(ad::square(get(s)));
    acc = acc.valid() ? ad::add(acc, q) : q;
  }
  return ad::mul(acc, scalar_const(beta / l));
}

}  // namespace

Value objective_term(const WindowTrace& trace, const LossWeights& w) {
  check_trace(trace, w);
  Value o = scalar_const(0.0);
  if (w.beta_xy > 0)
    o = ad::add(o, scaled_square_sum(trace, w.beta_xy, w.l, [](const WindowStep& s) { return s.e_xy; }));
  if (w.beta_alpha > 0)
    o = ad::add(o, scaled_square_sum(trace, w.beta_alpha, w.l, [](const WindowStep& s) { return s.e_alpha; }));
  return o;
}

Value velocity_term(const WindowTrace& trace, const LossWeights& w) {
  check_trace(trace, w);
  const Value one = scalar_const(1.0);
  const Value prox = scalar_const(w.beta_prox);
  Value v = scalar_const(0.0);
  if (w.beta_xdot > 0) {
    Value acc;
    for (const WindowStep& s : trace.steps) {
      Value gate = ad::recip(ad::add(ad::mul(prox, ad::sum(ad::square(s.e_xy))), one));
      Value q = ad::mul(ad::sum(ad::square(s.xdot)), gate);
      acc = acc.valid() ? ad::add(acc, q) : q;
    }
    v = ad::add(v, ad::mul(acc, scalar_const(w.beta_xdot / w.l)));
  }
  if (w.beta_alphadot > 0) {
    Value acc;
    for (const WindowStep& s : trace.steps) {
      Value gate = ad::recip(ad::add(ad::mul(prox, ad::sum(ad::square(s.e_alpha))), one));
      Value q = ad::mul(ad::sum(ad::square(s.alphadot)), gate);
      acc = acc.valid() ? ad::add(acc, q) : q;
    }
    v = ad::add(v, ad::mul(acc, scalar_const(w.beta_alphadot / w.l)));
  }
  return v;
}

Value effort_term(const WindowTrace& trace, const LossWeights& w) {
  check_trace(trace, w);
  Value e = scalar_const(0.0);
  if (w.beta_f > 0)
    e = ad::add(e, scaled_square_sum(trace, w.beta_f, w.l, [](const WindowStep& s) { return s.f_c; }));
  if (w.beta_t > 0)
    e = ad::add(e, scaled_square_sum(trace, w.beta_t, w.l, [](const WindowStep& s) { return s.t_c; }));
  if (w.beta_df > 0) {
    if (!trace.f_prev.valid()) throw std::invalid_argument("losses: effort-rate term needs the pre-window force");
    Value acc;
    const Value* prev = &trace.f_prev;
    for (const WindowStep& s : trace.steps) {
      Value q = ad::sum(ad::square(ad::sub(s.f_c, *prev)));
      acc = acc.valid() ? ad::add(acc, q) : q;
      prev = &s.f_c;
    }
    e = ad::add(e, ad::mul(acc, scalar_const(w.beta_df / w.l)));
  }
  if (w.beta_dt > 0) {
    if (!trace.t_prev.valid()) throw std::invalid_argument("losses: effort-rate term needs the pre-window torque");
    Value acc;
    const Value* prev = &trace.t_prev;
    for (const WindowStep& s : trace.steps) {
      Value q = ad::sum(ad::square(ad::sub(s.t_c, *prev)));
      acc = acc.valid() ? ad::add(acc, q) : q;
      prev = &s.t_c;
    }
    e = ad::add(e, ad::mul(acc, scalar_const(w.beta_dt / w.l)));
  }
  return e;
}

LossTerms total_loss(const WindowTrace& trace, const LossWeights& w) {
  LossTerms t;
  t.o = objective_term(trace, w);
  t.v = velocity_term(trace, w);
  t.e = effort_term(trace, w);
  t.total = ad::add(ad::add(t.o, t.v), t.e);
  return t;
}

Value reward(const WindowTrace& trace, const LossWeights& w) {
  return ad::mul(total_loss(trace, w).total, scalar_const(-1.0));
}

}  // namespace fluidctl::losses
