// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fluidctl/baselines/baselines.hpp"
#include "fluidctl/env/env.hpp"
#include "fluidctl/policy/policy.hpp"

namespace fluidctl::evalsuite {

// ---------------------------------------------------------------------------
// Controllers

//! A trained network behind the controller interface. Emits zero effort
//! until the frame ring holds n_p + 1 frames (the convention the trainer
//! uses) and clears the ring whenever the steered objective changes.
class PolicyController final : public baselines::Controller {
 public:
  explicit PolicyController(policy::PolicyParams params);

  void reset() override;
  baselines::ControlSignal act(const env::SimState& s, const env::Objective& obj) override;

  const policy::PolicyConfig& config() const { return params_.cfg; }

 private:
  policy::PolicyParams params_;
  std::deque<ad::Value> frames_;
  env::Objective obj_;
  bool steering_ = false;
};

//! pid | ls | diff | sup. The trained kinds read checkpoint_path; the
//! checkpoint's input width must match the environment's degrees of
//! freedom. Throws std::invalid_argument on unknown kinds or mismatches.
std::unique_ptr<baselines::Controller> make_controller(const std::string& kind, const std::string& checkpoint_path,
                                                       const env::EnvironmentConfig& ec);

//! Table label for a controller kind: PID, LS, Diff, Sup.
std::string controller_label(const std::string& kind);

// ---------------------------------------------------------------------------
// Rollouts

//! One named evaluation rollout: what to track, for how long, and any
//! external disturbances.
struct TestSpec {
  std::string name;
  env::ObjectiveSchedule schedule;
  env::ForcingSchedule forcing;
  int steps = 0;          // solver steps
  bool hold_mode = false;  // steady state over the whole episode
};

//! Post-step rows at uniform dt, one per executed solver step.
struct TrajectoryRecord {
  double dt = 0.0;
  int dof = 2;
  std::vector<env::TrajectoryRow> rows;
  bool complete = true;
  int termination_step = -1;  // step index when !complete
};

void write_trajectory_csv(const std::string& path, const TrajectoryRecord& traj);

//! Segments reconstructed from the stored objective columns, so metrics
//! recompute from the CSV alone.
env::ObjectiveSchedule schedule_from_record(const TrajectoryRecord& traj);

// ---------------------------------------------------------------------------
// Metrics

struct ChannelStats {
  double mean = 0.0, stddev = 0.0;
  // Pooling state so tables can merge stats across simulations exactly.
  long n = 0;
  double sum = 0.0, sumsq = 0.0;
};

struct SegmentMetrics {
  int begin = 0, end = 0;  // row span [begin, end)
  int window_begin = 0;    // first row of the steady state window
  double mean_xy = 0.0, mean_alpha = 0.0;
  ChannelStats ss_xy, ss_alpha;
  double max_force = 0.0, max_torque = 0.0;
};

struct MetricsReport {
  std::vector<SegmentMetrics> segments;
  double mean_xy = 0.0, mean_alpha = 0.0;  // whole trajectory
  //! mean averages the per-segment means; the deviation pools every step
  //! inside the included windows.
  ChannelStats ss_xy, ss_alpha;
  double max_force = 0.0, max_torque = 0.0;
  bool complete = true;
  int termination_step = -1;
};

//! (spatial, angular) steady state statistics. Each schedule segment of N
//! rows contributes rows ceil(N/4)..N-1; hold_mode widens the window to
//! the whole episode. Segments without rows are excluded with a warning.
std::pair<ChannelStats, ChannelStats> steady_state_error(const TrajectoryRecord& traj,
                                                         const env::ObjectiveSchedule& schedule, bool hold_mode);

MetricsReport metrics(const TrajectoryRecord& traj, const env::ObjectiveSchedule& schedule, bool hold_mode);

void write_report_csv(const std::string& path, const MetricsReport& r);

struct RunResult {
  TrajectoryRecord traj;
  MetricsReport report;
};

//! Deterministic rollout: the controller is consulted every
//! controller_sample_stride steps and its signal held in between. Episode
//! termination flags the report INCOMPLETE with the termination step.
RunResult run_test(baselines::Controller& controller, const env::EnvironmentConfig& ec, const TestSpec& spec);

//! Five random tracking simulations, three targets each, held 100 time
//! units apiece. Environments with forcing get the stock disturbances.
std::vector<TestSpec> default_test_schedules(const env::EnvironmentConfig& ec, std::uint64_t seed);

//! Single simulation pinned to the initial pose with the whole episode as
//! the steady state window; spans the full disturbance program.
TestSpec hold_test(const env::EnvironmentConfig& ec);

//! The fixed N-shaped four-corner trajectory.
TestSpec n_shape_test(const env::EnvironmentConfig& ec);

// ---------------------------------------------------------------------------
// Comparison tables

struct LabeledReport {
  std::string controller;  // table label, e.g. PID
  std::string test;        // spec name
  MetricsReport report;
};

struct ComparisonCell {
  bool present = false;
  bool complete = true;
  ChannelStats ss_xy;  // merged across the reports of one (test, controller)
};

struct ComparisonTable {
  std::vector<std::string> controllers;  // column order
  std::vector<std::string> tests;        // row order
  std::vector<std::vector<ComparisonCell>> cells;  // [test][controller]
  std::vector<int> best;  // winning column per row, -1 when undecided
};

//! Columns follow the conventional order RL, LS, Sup, PID, Diff (unknown
//! labels sort last, lexically). Best per row is the lowest spatial steady
//! state mean among complete cells; ties break toward the lower deviation,
//! then the lexically smaller controller label.
ComparisonTable compare(const std::vector<LabeledReport>& reports);

void write_comparison_csv(const std::string& path, const ComparisonTable& t);

//! Aligned plain text; the winning cell per row carries a leading '*'.
std::string format_comparison(const ComparisonTable& t);

}  // namespace fluidctl::evalsuite
