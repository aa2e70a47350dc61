// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fluidctl/ad/tape.hpp"
#include "fluidctl/body/body.hpp"
#include "fluidctl/core/vec2.hpp"
#include "fluidctl/fluid/grid.hpp"
#include "fluidctl/fluid/ops.hpp"

namespace fluidctl::env {

using ad::Value;

enum class EnvId { BaseNR, BuoyNR, Base, Inflow, InBuoy, Hold };

const char* env_id_name(EnvId id);
//! Throws std::invalid_argument listing the valid names.
EnvId parse_env_id(const std::string& name);

//! One experimental setup: which physics are active, the body, the grid and
//! the solver parameters. The six ids map to fixed rows; everything else
//! (resolution, tolerances, limits) is an override.
struct EnvironmentConfig {
  EnvId id = EnvId::BaseNR;
  bool inflow = false;
  bool buoyancy = false;
  bool forcing = false;
  int dof = 2;  // 2: forces only; 3: forces and torque

  std::shared_ptr<const body::BodyShape> shape;
  fluid::FluidParams fluid;

  int nx = 64, ny = 64;
  double domain_size = 100.0;
  int controller_sample_stride = 1;  // solver steps per control decision
  int episode_length = 1000;         // solver steps per training episode

  double f_max = 50.0;
  double t_max = 2000.0;

  fluid::GridSpec grid() const { return {nx, ny, domain_size / nx}; }
  void validate() const;  // throws std::invalid_argument
};

//! The Table row for an id at default (desk) resolution.
EnvironmentConfig make_environment(EnvId id);

// ---------------------------------------------------------------------------
// Schedules

struct Objective {
  double start_time = 0.0;
  Vec2 x_obj;
  double alpha_obj = 0.0;
};

struct ObjectiveSchedule {
  std::vector<Objective> items;  // start_time strictly increasing

  //! Active objective at time t: the last item with start_time <= t.
  const Objective& current(double t) const;
};

struct ForcingWindow {
  double t0 = 0.0, t1 = 0.0;  // [t0, t1)
  Vec2 force;
  double torque = 0.0;
};

struct ForcingSchedule {
  std::vector<ForcingWindow> windows;
};

//! Sum of all windows containing t (windows are normally disjoint).
void external_forcing(const ForcingSchedule& schedule, double t, Vec2* force, double* torque);

//! The default Hold forcing: x push, y push, then a torque burst.
ForcingSchedule hold_forcing();

//! Objectives drawn uniformly from [25, 75]^2 positions and, with three
//! degrees of freedom, [-pi/2, pi/2] angles; item k starts at t = k * hold.
ObjectiveSchedule sample_objectives(std::mt19937_64& rng, int count, double hold, int dof);

// ---------------------------------------------------------------------------
// Simulation state

struct BodyState {
  Value x, v;          // 2-vectors
  Value alpha, omega;  // scalars
};

struct SimState {
  Value ux, uy;  // staggered velocity components
  Value pressure;
  Value marker;
  fluid::FlagGrid flags;  // includes the body rasterized at its current pose
  BodyState body;
  double t = 0.0;
  int step_index = 0;
  Value last_force;   // most recent applied control force, world frame
  Value last_torque;  // most recent applied control torque
  bool terminated = false;  // body reached the domain boundary
};

//! Rewraps every tensor as a detached constant (for window boundaries).
SimState detach(const SimState& s);

inline Vec2 to_vec2(const Value& v) { return {v.tensor()[0], v.tensor()[1]}; }
inline double to_scalar(const Value& v) { return v.tensor()[0]; }

//! Extra observability for logs and tests; never feeds back into the physics.
struct StepInfo {
  Vec2 fluid_force;
  double fluid_torque = 0.0;
  fluid::PoissonStats poisson;
  double cfl = 0.0;  // max |u| dt / dx entering advection
  bool clamped = false;
};

//! Coupled fluid and rigid body stepping for one EnvironmentConfig.
class Environment {
 public:
  explicit Environment(EnvironmentConfig cfg);

  const EnvironmentConfig& config() const { return cfg_; }
  const std::vector<body::ContourSample>& contour() const { return *samples_; }

  //! Quiescent fluid, body at (40, 40) at rest, zero previous efforts.
  SimState reset() const;

  //! One coupled step. Control efforts are world frame; components beyond
  //! the limits are clamped with a diagnostic. For dof 2 the torque input
  //! is ignored. Differentiable when inputs live on a tape.
  SimState step(const SimState& s, const Value& force, const Value& torque, const ForcingSchedule& forcing,
                StepInfo* info = nullptr) const;

  //! Fluid step with the body kinematically driven: the fluid sees the
  //! current body motion, then the pose jumps to (x_next, alpha_next) with
  //! backward-difference velocities. Forward only; the stored last efforts
  //! pass through unchanged. Throws std::runtime_error when the prescribed
  //! pose touches the domain boundary.
  SimState step_kinematic(const SimState& s, Vec2 x_next, double alpha_next, StepInfo* info = nullptr) const;

 private:
  struct FluidHalf {
    Value ux, uy, p, marker;
    Value force, torque;  // fluid force and torque on the body
    double cfl = 0.0;
    fluid::PoissonStats stats;
    std::shared_ptr<body::BodyConfig> body_cfg;
  };
  FluidHalf fluid_half(const SimState& s) const;

  EnvironmentConfig cfg_;
  std::shared_ptr<const std::vector<body::ContourSample>> samples_;
  fluid::FlagGrid base_flags_;       // domain boundary conditions, no body
  std::vector<int> source_region_;   // candidate marker source cells
};

// ---------------------------------------------------------------------------
// Trajectory logging

//! One CSV row: the post-step state paired with the efforts that produced it.
struct TrajectoryRow {
  int step = 0;
  double t = 0.0;
  Vec2 x;
  double alpha = 0.0;
  Vec2 v;
  double omega = 0.0;
  Vec2 fc;
  double tc = 0.0;
  Vec2 x_obj;
  double alpha_obj = 0.0;
  Vec2 f_fluid;
  double t_fluid = 0.0;
};

TrajectoryRow trajectory_row(const SimState& s, const Objective& obj, const StepInfo& info);

void write_trajectory_header(std::ostream& os);
void write_trajectory_row(std::ostream& os, const TrajectoryRow& r);

}  // namespace fluidctl::env
