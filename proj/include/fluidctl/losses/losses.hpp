// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "fluidctl/ad/tape.hpp"
#include "fluidctl/env/env.hpp"

namespace fluidctl::losses {

using ad::Value;

//! Weights of the three loss groups. A zero weight removes its summand from
//! the graph entirely, which is how the 2-dof defaults drop the angular
//! channels and how ablations are realized.
struct LossWeights {
  double beta_xy = 0.0;
  double beta_alpha = 0.0;
  double beta_xdot = 0.0;
  double beta_alphadot = 0.0;
  double beta_prox = 0.0;
  double beta_f = 0.0;
  double beta_t = 0.0;
  double beta_df = 0.0;
  double beta_dt = 0.0;
  int l = 16;  // window length

  void validate() const;  // throws std::invalid_argument
  static LossWeights for_dof(int dof);
};

//! Zeroes weight groups per ablation token: OVE keeps all, OV drops the
//! effort group, OE drops the velocity group, O keeps only the objective.
LossWeights apply_ablation(const LossWeights& w, const std::string& token);

//! One step of a BPTT window: post-step errors and velocities paired with
//! the effort that produced them.
struct WindowStep {
  Value e_xy;      // 2-vector, world frame (only norms enter the loss)
  Value e_alpha;   // scalar, wrapped
  Value xdot;      // 2-vector
  Value alphadot;  // scalar
  Value f_c;       // 2-vector, applied control force
  Value t_c;       // scalar, applied control torque
};

//! Exactly l steps plus the efforts preceding the window (zeros at episode
//! start) for the first effort-rate difference.
struct WindowTrace {
  std::vector<WindowStep> steps;
  Value f_prev;
  Value t_prev;
};

//! The trace entry for a state and the objective it was steered toward.
WindowStep window_step(const env::SimState& s, const env::Objective& obj);

// O = (beta_xy/l) sum |e_xy|^2 + (beta_alpha/l) sum e_alpha^2
Value objective_term(const WindowTrace& trace, const LossWeights& w);

// V = (beta_xdot/l) sum |xdot|^2 / (beta_prox |e_xy|^2 + 1)
//   + (beta_alphadot/l) sum alphadot^2 / (beta_prox e_alpha^2 + 1)
Value velocity_term(const WindowTrace& trace, const LossWeights& w);

// E = (beta_f/l) sum |F|^2 + (beta_t/l) sum T^2
//   + (beta_df/l) sum |F^n - F^{n-1}|^2 + (beta_dt/l) sum (T^n - T^{n-1})^2
Value effort_term(const WindowTrace& trace, const LossWeights& w);

struct LossTerms {
  Value o, v, e, total;
};

LossTerms total_loss(const WindowTrace& trace, const LossWeights& w);

//! -total_loss, for reinforcement-learning style consumers.
Value reward(const WindowTrace& trace, const LossWeights& w);

}  // namespace fluidctl::losses
