// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluidctl/ad/tape.hpp"
#include "fluidctl/env/env.hpp"

namespace fluidctl::policy {

using ad::Tensor;
using ad::Value;

//! Shape of the controller network and its observation window.
//!
//! The observation frame w holds [e_xy, xdot, F_c] in the body frame (6
//! values) plus [e_alpha, alphadot, T_c] with a rotational degree of freedom
//! (9 values). z concatenates the current frame with n_p past ones, newest
//! first, and is zero padded up to input_dim.
struct PolicyConfig {
  int dof = 2;
  int n_p = 1;         // past frames kept alongside the current one
  int input_dim = 16;  // first layer width
  int hidden = 38;     // width of both hidden layers
  double f_max = 50.0;
  double t_max = 2000.0;
  bool bounded = true;  // tanh output scaling; the supervised net omits it

  int frame_dim() const { return dof == 2 ? 6 : 9; }
  int output_dim() const { return dof == 2 ? 2 : 3; }
  void validate() const;  // throws std::invalid_argument

  //! The stock architectures: 2 dof [16, 38, 38, 2], 3 dof [32, 32, 32, 3].
  static PolicyConfig for_dof(int dof);
};

//! Trainable parameters plus frozen normalization statistics.
struct PolicyParams {
  PolicyConfig cfg;
  std::vector<Tensor> weights;  // three layers, each (out, in)
  std::vector<Tensor> biases;   // each (out)
  Tensor norm_mean, norm_std;   // per z entry; identity until measured

  void validate() const;
};

//! Glorot-uniform weights, zero biases, identity normalization.
PolicyParams init_policy(const PolicyConfig& cfg, uint64_t seed);

int count_parameters(const PolicyParams& p);

// ---------------------------------------------------------------------------
// Evaluation

//! Per-tape view of the parameters. With a tape the weights and biases are
//! leaves (gradients flow to them); without one everything is constant.
//! Normalization statistics and output scales are constants either way.
struct TapedPolicy {
  PolicyConfig cfg;
  std::vector<Value> weights, biases;
  Value norm_mean, norm_inv_std;
  Value scale;  // (f_max, f_max[, t_max]); unused when not bounded
};

TapedPolicy bind(ad::Tape* tape, const PolicyParams& p);

//! tanh(L3(relu(L2(relu(L1(normalize(z))))))) scaled per channel, or the raw
//! last layer when the config is unbounded.
Value policy_forward(const TapedPolicy& tp, const Value& z);

//! One observation frame from the body state and the active objective.
Value make_frame(const PolicyConfig& cfg, const env::SimState& s, const env::Objective& obj);

//! Concatenates the newest-first frames, zero-padding missing history and
//! the fixed tail up to input_dim.
Value assemble_z(const PolicyConfig& cfg, const std::vector<Value>& frames_newest_first);

//! Splits the network output into world-frame efforts. The network acts in
//! the body frame, so the force is rotated by the body angle; the torque is
//! frame invariant. For two degrees of freedom the torque is constant zero.
struct Efforts {
  Value force;
  Value torque;
};
Efforts to_world_efforts(const PolicyConfig& cfg, const Value& out, const Value& alpha);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary, little-endian: magic "POL1", u32 layer count, per layer u32 (in,
// out), then per layer row-major f64 weights followed by biases, then the
// normalization mean and std arrays, then f_max and t_max. A non-positive
// f_max marks an unbounded (supervised) network. n_p is recovered from the
// layer dims, so checkpoints assume the canonical padding (pad < frame_dim).

void save_policy(const std::string& path, const PolicyParams& p);
PolicyParams load_policy(const std::string& path);

}  // namespace fluidctl::policy
