// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/baselines/baselines.hpp"

#include <stdexcept>

namespace fluidctl::baselines {

PIDTable pid_defaults(bool cylinder) {
  PIDTable t;
  if (cylinder) {
    t.force = {1.0, 8.0, 0.001};
  } else {
    t.force = {2.0, 15.0, 0.001};
    t.torque = {100.0, 1000.0, 0.01};
  }
  return t;
}

LoopShapingCoeffs loopshaping_defaults() {
  LoopShapingCoeffs c;
  c.n0 = 1.1700924033918623;
  c.n1 = -1.4694211940919182;
  c.n2 = 0.30598060140064326;
  c.d1 = -1.2306775904257603;
  c.d2 = 0.26726488821832250;
  return c;
}

double pid_step(const PIDGains& g, double e, ChannelMemory& mem) {
  if (!mem.primed) {
    mem.e_prev = e;
    mem.primed = true;
  }
  mem.e_sum += e;
  const double u = g.p * e + g.d * (e - mem.e_prev) / 0.1 + 0.1 * mem.e_sum * g.i;
  mem.e_prev = e;
  return u;
}

double loopshaping_step(const LoopShapingCoeffs& c, double e, LoopShapingMemory& mem) {
  const double u = c.n0 * e + c.n1 * mem.e1 + c.n2 * mem.e2 - c.d1 * mem.u1 - c.d2 * mem.u2;
  mem.e2 = mem.e1;
  mem.e1 = e;
  mem.u2 = mem.u1;
  mem.u1 = u;
  return u;
}

namespace {

bool same_objective(const env::Objective& a, const env::Objective& b) {
  return a.x_obj.x == b.x_obj.x && a.x_obj.y == b.x_obj.y && a.alpha_obj == b.alpha_obj;
}

//! Body-frame error channels shared by both classical controllers.
struct BodyError {
  Vec2 e_xy;
  double e_alpha = 0.0;
  double alpha = 0.0;
};

BodyError body_error(const env::SimState& s, const env::Objective& obj) {
  BodyError e;
  e.alpha = env::to_scalar(s.body.alpha);
  e.e_xy = rotate(obj.x_obj - env::to_vec2(s.body.x), -e.alpha);
  e.e_alpha = wrap_angle(obj.alpha_obj - e.alpha);
  return e;
}

class PidController final : public Controller {
 public:
  PidController(PIDTable gains, int dof) : gains_(gains), dof_(dof) {}

  void reset() override {
    mx_ = ChannelMemory{};
    my_ = ChannelMemory{};
    mt_ = ChannelMemory{};
    has_obj_ = false;
  }

  ControlSignal act(const env::SimState& s, const env::Objective& obj) override {
    if (!has_obj_ || !same_objective(obj, obj_)) {
      reset();
      obj_ = obj;
      has_obj_ = true;
    }
    const BodyError e = body_error(s, obj);
    const double ux = pid_step(gains_.force, e.e_xy.x, mx_);
    const double uy = pid_step(gains_.force, e.e_xy.y, my_);
    ControlSignal out;
    out.force = rotate(Vec2{ux, uy}, e.alpha);
    if (dof_ == 3) out.torque = pid_step(gains_.torque, e.e_alpha, mt_);
    return out;
  }

 private:
  PIDTable gains_;
  int dof_;
  ChannelMemory mx_, my_, mt_;
  env::Objective obj_;
  bool has_obj_ = false;
};

class LoopShapingController final : public Controller {
 public:
  explicit LoopShapingController(LoopShapingCoeffs c) : coeffs_(c) {}

  void reset() override {
    mx_ = LoopShapingMemory{};
    my_ = LoopShapingMemory{};
    has_obj_ = false;
  }

  ControlSignal act(const env::SimState& s, const env::Objective& obj) override {
    if (!has_obj_ || !same_objective(obj, obj_)) {
      reset();
      obj_ = obj;
      has_obj_ = true;
    }
    const BodyError e = body_error(s, obj);
    ControlSignal out;
    const double ux = loopshaping_step(coeffs_, e.e_xy.x, mx_);
    const double uy = loopshaping_step(coeffs_, e.e_xy.y, my_);
    out.force = rotate(Vec2{ux, uy}, e.alpha);
    return out;
  }

 private:
  LoopShapingCoeffs coeffs_;
  LoopShapingMemory mx_, my_;
  env::Objective obj_;
  bool has_obj_ = false;
};

}  // namespace

std::unique_ptr<Controller> make_baseline(const std::string& kind, const env::EnvironmentConfig& cfg) {
  if (kind == "pid") {
    return std::make_unique<PidController>(pid_defaults(cfg.shape && cfg.shape->is_cylinder()), cfg.dof);
  }
  if (kind == "loopshaping") {
    if (cfg.dof != 2)
      throw std::invalid_argument("baselines: loop shaping covers force channels only (2 dof environments)");
    return std::make_unique<LoopShapingController>(loopshaping_defaults());
  }
  throw std::invalid_argument("baselines: unknown controller \"" + kind + "\" (valid: pid, loopshaping)");
}

}  // namespace fluidctl::baselines
