// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>

#include "fluidctl/core/vec2.hpp"
#include "fluidctl/env/env.hpp"

namespace fluidctl::baselines {

//! Classical controllers share a fixed 0.1 sampling interval: the difference
//! formulas below hard-code it, independent of the solver step.

struct PIDGains {
  double p = 0.0;
  double d = 0.0;
  double i = 0.0;
};

struct PIDTable {
  PIDGains force;   // applied to each body-frame force axis
  PIDGains torque;  // angular channel (3 dof only)
};

//! Stock gain rows: cylinder {1, 8, 0.001}; box {2, 15, 0.001} for forces
//! and {100, 1000, 0.01} for torque.
PIDTable pid_defaults(bool cylinder);

struct LoopShapingCoeffs {
  double n0 = 0.0, n1 = 0.0, n2 = 0.0;
  double d1 = 0.0, d2 = 0.0;
};

//! The fixed discrete compensator; coefficients are exact table values.
LoopShapingCoeffs loopshaping_defaults();

//! Per-channel controller state. The first step seeds the previous error
//! with the current one, so the derivative term starts silent.
struct ChannelMemory {
  double e_prev = 0.0;
  double e_sum = 0.0;
  bool primed = false;
};

//! U = P e + D (e - e_prev) / 0.1 + 0.1 I sum(e), sum including e.
double pid_step(const PIDGains& g, double e, ChannelMemory& mem);

struct LoopShapingMemory {
  double e1 = 0.0, e2 = 0.0;
  double u1 = 0.0, u2 = 0.0;
};

//! U = n0 e + n1 e1 + n2 e2 - d1 u1 - d2 u2, histories shifted afterwards.
double loopshaping_step(const LoopShapingCoeffs& c, double e, LoopShapingMemory& mem);

// ---------------------------------------------------------------------------
// Environment-facing controllers

struct ControlSignal {
  Vec2 force;
  double torque = 0.0;
};

//! A stateful control law producing world-frame efforts. Classical
//! controllers reset their memories whenever the objective changes.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual ControlSignal act(const env::SimState& s, const env::Objective& obj) = 0;
};

//! kind is "pid" or "loopshaping". Loop shaping covers the force channels
//! only and therefore rejects environments with a rotational degree of
//! freedom. Outputs are unclamped; the environment enforces its limits.
std::unique_ptr<Controller> make_baseline(const std::string& kind, const env::EnvironmentConfig& cfg);

}  // namespace fluidctl::baselines
