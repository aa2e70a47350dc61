// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluidctl/env/env.hpp"
#include "fluidctl/losses/losses.hpp"
#include "fluidctl/policy/policy.hpp"

namespace fluidctl::train {

using ad::Tensor;

//! Hyperparameters of one window-BPTT training run. Zero-valued counters
//! mean "use the per-environment default" and are filled by
//! resolve_defaults: two degrees of freedom train for 1000 iterations and
//! halve the learning rate every 200, three for 5000 and 1000.
struct TrainConfig {
  env::EnvId env_id = env::EnvId::BaseNR;
  int nx = 0, ny = 0;      // grid override; 0 keeps the environment default
  int n_i = -1;            // optimizer updates; negative selects the default
  int l = 16;              // window length, solver steps per update
  double lr0 = 0.01;
  int lr_half_every = -1;  // iterations between halvings; negative = default
  int episode_length = 0;  // solver steps per episode; 0 = default
  std::uint64_t seed = 0;
  std::string ablation = "OVE";
  losses::LossWeights weights;  // all-zero betas select the per-dof defaults

  int warmup_episodes = 10;  // PID episodes measuring input statistics
  int validate_every = 100;  // updates between validation rollouts
  int validation_targets = 3;
  double validation_time = 40.0;  // time units per validation rollout
  std::string dump_path;  // window dump on a non-finite loss ("" = none)

  void validate() const;  // throws std::invalid_argument
};

//! Copy with every "use default" field filled in for the environment.
TrainConfig resolve_defaults(const TrainConfig& cfg);

//! lr0 halved every lr_half_every iterations (floor semantics).
double lr_schedule(const TrainConfig& cfg, int iteration);

// ---------------------------------------------------------------------------
// Logs and results

struct TrainRow {
  int iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
  double o = 0.0, v = 0.0, e = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

//! CSV with header iteration,lr,loss,O,V,E,wall_time.
void write_train_log(const std::string& path, const std::vector<TrainRow>& rows);

struct ValidationPoint {
  int iteration = 0;
  double error = 0.0;  // mean tracking error over held-out rollouts
};

struct TrainResult {
  policy::PolicyParams best;  // lowest validation error
  policy::PolicyParams last;
  std::vector<TrainRow> log;
  std::vector<ValidationPoint> validation;
  int best_iteration = 0;
};

// ---------------------------------------------------------------------------
// Optimization

//! Adaptive moment estimation with bias correction and global-norm gradient
//! clipping applied across all parameter tensors before the moments update.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double clip = 1.0);

  //! One in-place update; grads align with params. Returns the pre-clip
  //! global gradient norm.
  double step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, double lr);

 private:
  double beta1_, beta2_, eps_, clip_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

//! The six trainable tensors of a policy, in checkpoint order.
std::vector<Tensor*> trainable_tensors(policy::PolicyParams& p);

//! Mean/std of the assembled policy inputs over PID-driven warm-up
//! episodes, written into p. Standard deviations are floored at 1e-3 so
//! constant channels (including the zero padding) stay finite.
void measure_normalization(const env::Environment& environment, int episodes, std::uint64_t seed,
                           policy::PolicyParams* p);

//! Unsupervised training: backprop through l-step simulation windows.
//! Windows are disjoint and the state entering a window is detached, so one
//! update sees exactly l coupled steps. Throws std::runtime_error on a
//! non-finite loss after writing the window dump.
TrainResult train_diffphys(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Supervised pipeline

//! Flat sample store: count rows of z (observation vector) and 3 effort
//! targets (Fx, Fy, T; the torque slot is zero for 2 dof).
struct Dataset {
  int z_dim = 0;
  std::vector<double> z;        // count * z_dim, row major
  std::vector<double> targets;  // count * 3

  int count() const { return z_dim > 0 ? static_cast<int>(z.size()) / z_dim : 0; }
};

//! Binary: magic "DSET", u32 count, u32 z_dim, then per sample z followed
//! by the 3 targets, all little-endian f64.
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

struct DatasetPair {
  Dataset train, val;
};

//! Minimum-jerk blend: 0 -> 1 on [0, 1] with zero velocity and acceleration
//! at both ends. Monotone, so blended paths stay between their endpoints.
double quintic_blend(double tau);

//! Kinematically driven rest-to-rest trajectories toward sampled targets.
//! Each simulation contributes steps_per_sim samples (z as the policy would
//! see it, targets the efforts that reproduce the prescribed motion under
//! the recorded fluid forces). The split holds out whole simulations:
//! min(20, max(1, n/5)) of them.
DatasetPair generate_supervised_dataset(const env::EnvironmentConfig& ecfg, int n_sims, int steps_per_sim,
                                        std::uint64_t seed);

struct SupervisedConfig {
  int n_i = 150000;
  double lr0 = 0.01;
  int lr_half_every = 15000;
  int batch = 128;
  std::uint64_t seed = 0;
  int validate_every = 1000;

  void validate() const;
};

struct SupervisedResult {
  policy::PolicyParams best;
  policy::PolicyParams last;
  std::vector<TrainRow> log;  // loss column only; O, V, E stay zero
  std::vector<ValidationPoint> validation;
  int best_iteration = 0;
};

//! Minibatch regression of the unbounded network onto the dataset efforts.
//! Normalization statistics are measured on the training split.
SupervisedResult train_supervised(const Dataset& train_set, const Dataset& val_set, const SupervisedConfig& scfg);

}  // namespace fluidctl::train
