// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/evalsuite/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fluidctl/core/diag.hpp"

namespace fluidctl::evalsuite {

using ad::Tensor;
using ad::Value;

// ---------------------------------------------------------------------------
// PolicyController

PolicyController::PolicyController(policy::PolicyParams params) : params_(std::move(params)) {
  params_.cfg.validate();
}

void PolicyController::reset() {
  frames_.clear();
  steering_ = false;
}

baselines::ControlSignal PolicyController::act(const env::SimState& s, const env::Objective& obj) {
  const bool same = steering_ && obj.x_obj.x == obj_.x_obj.x && obj.x_obj.y == obj_.x_obj.y &&
                    obj.alpha_obj == obj_.alpha_obj;
  if (!same) {
    frames_.clear();
    obj_ = obj;
    steering_ = true;
  }
  const policy::PolicyConfig& pc = params_.cfg;
  frames_.push_front(policy::make_frame(pc, s, obj));
  if (static_cast<int>(frames_.size()) > pc.n_p + 1) frames_.pop_back();
  if (static_cast<int>(frames_.size()) < pc.n_p + 1) return {};

  policy::TapedPolicy tp = policy::bind(nullptr, params_);
  Value z = policy::assemble_z(pc, {frames_.begin(), frames_.end()});
  Value out = policy::policy_forward(tp, z);
  policy::Efforts eff = policy::to_world_efforts(pc, out, s.body.alpha);
  baselines::ControlSignal sig;
  sig.force = env::to_vec2(eff.force);
  sig.torque = env::to_scalar(eff.torque);
  return sig;
}

std::unique_ptr<baselines::Controller> make_controller(const std::string& kind, const std::string& checkpoint_path,
                                                       const env::EnvironmentConfig& ec) {
  if (kind == "pid") return baselines::make_baseline("pid", ec);
  if (kind == "ls") return baselines::make_baseline("loopshaping", ec);
  if (kind == "diff" || kind == "sup") {
    if (checkpoint_path.empty()) throw std::invalid_argument("eval: controller '" + kind + "' needs a checkpoint");
    policy::PolicyParams p = policy::load_policy(checkpoint_path);
    if (p.cfg.dof != ec.dof)
      throw std::invalid_argument("eval: checkpoint has " + std::to_string(p.cfg.dof) +
                                  " degrees of freedom, environment has " + std::to_string(ec.dof));
    return std::make_unique<PolicyController>(std::move(p));
  }
  throw std::invalid_argument("eval: unknown controller kind '" + kind + "' (pid, ls, diff, sup)");
}

std::string controller_label(const std::string& kind) {
  if (kind == "pid") return "PID";
  if (kind == "ls") return "LS";
  if (kind == "diff") return "Diff";
  if (kind == "sup") return "Sup";
  return kind;
}

// ---------------------------------------------------------------------------
// Trajectory records

void write_trajectory_csv(const std::string& path, const TrajectoryRecord& traj) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  env::write_trajectory_header(f);
  for (const env::TrajectoryRow& r : traj.rows) env::write_trajectory_row(f, r);
  if (!f) throw std::runtime_error("eval: write failed: " + path);
}

env::ObjectiveSchedule schedule_from_record(const TrajectoryRecord& traj) {
  env::ObjectiveSchedule s;
  for (size_t r = 0; r < traj.rows.size(); ++r) {
    const env::TrajectoryRow& row = traj.rows[r];
    const bool fresh = s.items.empty() || row.x_obj.x != s.items.back().x_obj.x ||
                       row.x_obj.y != s.items.back().x_obj.y || row.alpha_obj != s.items.back().alpha_obj;
    if (fresh) {
      env::Objective o;
      // Row r is the state after step r + 1; the objective steered the step
      // starting at r * dt.
      o.start_time = static_cast<double>(r) * traj.dt;
      o.x_obj = row.x_obj;
      o.alpha_obj = row.alpha_obj;
      s.items.push_back(o);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void pool(ChannelStats* c, double v) {
  ++c->n;
  c->sum += v;
  c->sumsq += v * v;
}

void finish(ChannelStats* c) {
  if (c->n == 0) return;
  const double mu = c->sum / static_cast<double>(c->n);
  c->mean = mu;
  c->stddev = std::sqrt(std::max(0.0, c->sumsq / static_cast<double>(c->n) - mu * mu));
}

double spatial_error(const env::TrajectoryRow& r) { return (r.x_obj - r.x).norm(); }
double angular_error(const env::TrajectoryRow& r) { return std::abs(wrap_angle(r.alpha_obj - r.alpha)); }

struct Span {
  int begin = 0, end = 0;  // row indices
};

//! Rows partitioned by the objective active at each row's decision time.
std::vector<Span> segment_spans(const TrajectoryRecord& traj, const env::ObjectiveSchedule& schedule) {
  std::vector<Span> spans(schedule.items.size());
  const int n = static_cast<int>(traj.rows.size());
  int seg = 0;
  int row = 0;
  for (size_t i = 0; i < schedule.items.size(); ++i) spans[i] = {n, n};
  while (row < n && !schedule.items.empty()) {
    const double t = static_cast<double>(row) * traj.dt;
    while (seg + 1 < static_cast<int>(schedule.items.size()) &&
           t >= schedule.items[static_cast<size_t>(seg) + 1].start_time - 1e-12)
      ++seg;
    if (spans[static_cast<size_t>(seg)].begin == n) spans[static_cast<size_t>(seg)].begin = row;
    spans[static_cast<size_t>(seg)].end = row + 1;
    ++row;
  }
  return spans;
}

}  // namespace

MetricsReport metrics(const TrajectoryRecord& traj, const env::ObjectiveSchedule& schedule, bool hold_mode) {
  if (schedule.items.empty()) throw std::invalid_argument("eval: empty objective schedule");
  MetricsReport rep;
  rep.complete = traj.complete;
  rep.termination_step = traj.termination_step;

  for (const env::TrajectoryRow& r : traj.rows) {
    rep.mean_xy += spatial_error(r);
    rep.mean_alpha += angular_error(r);
    rep.max_force = std::max(rep.max_force, r.fc.norm());
    rep.max_torque = std::max(rep.max_torque, std::abs(r.tc));
  }
  if (!traj.rows.empty()) {
    rep.mean_xy /= static_cast<double>(traj.rows.size());
    rep.mean_alpha /= static_cast<double>(traj.rows.size());
  }

  const std::vector<Span> spans = segment_spans(traj, schedule);
  double seg_sum_xy = 0.0, seg_sum_alpha = 0.0;
  for (size_t i = 0; i < spans.size(); ++i) {
    const Span& sp = spans[i];
    const int len = sp.end - sp.begin;
    if (len <= 0) {
      diag::warnf("eval: objective segment %zu has no trajectory rows, excluded", i);
      continue;
    }
    SegmentMetrics sm;
    sm.begin = sp.begin;
    sm.end = sp.end;
    // The window drops the first quarter of the segment; a hold run is
    // judged over the whole episode.
    const int local = hold_mode ? 0 : (len + 3) / 4;
    sm.window_begin = sp.begin + local;
    for (int r = sp.begin; r < sp.end; ++r) {
      const env::TrajectoryRow& row = traj.rows[static_cast<size_t>(r)];
      sm.mean_xy += spatial_error(row);
      sm.mean_alpha += angular_error(row);
      sm.max_force = std::max(sm.max_force, row.fc.norm());
      sm.max_torque = std::max(sm.max_torque, std::abs(row.tc));
      if (r >= sm.window_begin) {
        pool(&sm.ss_xy, spatial_error(row));
        pool(&sm.ss_alpha, angular_error(row));
        pool(&rep.ss_xy, spatial_error(row));
        pool(&rep.ss_alpha, angular_error(row));
      }
    }
    sm.mean_xy /= len;
    sm.mean_alpha /= len;
    finish(&sm.ss_xy);
    finish(&sm.ss_alpha);
    seg_sum_xy += sm.ss_xy.mean;
    seg_sum_alpha += sm.ss_alpha.mean;
    rep.segments.push_back(sm);
  }
  finish(&rep.ss_xy);
  finish(&rep.ss_alpha);
  // Overall mean re-weights segments equally; the pooled deviation stays.
  if (!rep.segments.empty()) {
    rep.ss_xy.mean = seg_sum_xy / static_cast<double>(rep.segments.size());
    rep.ss_alpha.mean = seg_sum_alpha / static_cast<double>(rep.segments.size());
  }
  return rep;
}

std::pair<ChannelStats, ChannelStats> steady_state_error(const TrajectoryRecord& traj,
                                                         const env::ObjectiveSchedule& schedule, bool hold_mode) {
  MetricsReport rep = metrics(traj, schedule, hold_mode);
  return {rep.ss_xy, rep.ss_alpha};
}

void write_report_csv(const std::string& path, const MetricsReport& r) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << "segment,begin,end,window_begin,mean_exy,mean_ealpha,ss_mean_exy,ss_std_exy,ss_mean_ealpha,ss_std_ealpha,"
       "max_force,max_torque,status\n";
  char buf[512];
  const std::string status =
      r.complete ? "complete" : "INCOMPLETE:" + std::to_string(r.termination_step);
  for (size_t i = 0; i < r.segments.size(); ++i) {
    const SegmentMetrics& s = r.segments[i];
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n", i, s.begin,
                  s.end, s.window_begin, s.mean_xy, s.mean_alpha, s.ss_xy.mean, s.ss_xy.stddev, s.ss_alpha.mean,
                  s.ss_alpha.stddev, s.max_force, s.max_torque, status.c_str());
    f << buf;
  }
  std::snprintf(buf, sizeof buf, "overall,0,%d,-1,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                r.segments.empty() ? 0 : r.segments.back().end, r.mean_xy, r.mean_alpha, r.ss_xy.mean,
                r.ss_xy.stddev, r.ss_alpha.mean, r.ss_alpha.stddev, r.max_force, r.max_torque, status.c_str());
  f << buf;
  if (!f) throw std::runtime_error("eval: write failed: " + path);
}

// ---------------------------------------------------------------------------
// Rollouts

RunResult run_test(baselines::Controller& controller, const env::EnvironmentConfig& ec, const TestSpec& spec) {
  if (spec.steps < 1) throw std::invalid_argument("eval: test spec has no steps");
  if (spec.schedule.items.empty()) throw std::invalid_argument("eval: test spec has no objectives");
  env::Environment environment(ec);
  const int stride = ec.controller_sample_stride;

  RunResult out;
  out.traj.dt = ec.fluid.dt;
  out.traj.dof = ec.dof;
  out.traj.rows.reserve(static_cast<size_t>(spec.steps));

  controller.reset();
  env::SimState s = environment.reset();
  baselines::ControlSignal sig;
  for (int k = 0; k < spec.steps; ++k) {
    const env::Objective& obj = spec.schedule.current(s.t);
    if (k % stride == 0) sig = controller.act(s, obj);
    env::StepInfo info;
    s = environment.step(s, Value::constant(Tensor::vec2(sig.force.x, sig.force.y)), Value::constant(sig.torque),
                         spec.forcing, &info);
    out.traj.rows.push_back(env::trajectory_row(s, obj, info));
    if (s.terminated) {
      out.traj.complete = false;
      out.traj.termination_step = s.step_index;
      break;
    }
  }
  out.report = metrics(out.traj, spec.schedule, spec.hold_mode);
  return out;
}

std::vector<TestSpec> default_test_schedules(const env::EnvironmentConfig& ec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double hold = 100.0;
  const int targets = 3;
  std::vector<TestSpec> specs;
  for (int sim = 0; sim < 5; ++sim) {
    TestSpec t;
    t.name = "track" + std::to_string(sim);
    t.schedule = env::sample_objectives(rng, targets, hold, ec.dof);
    t.steps = static_cast<int>(targets * hold / ec.fluid.dt + 0.5);
    if (ec.forcing) t.forcing = env::hold_forcing();
    specs.push_back(std::move(t));
  }
  return specs;
}

TestSpec hold_test(const env::EnvironmentConfig& ec) {
  TestSpec t;
  t.name = "hold";
  env::Objective o;
  o.x_obj = Vec2{40.0, 40.0};  // the reset pose
  t.schedule.items.push_back(o);
  t.hold_mode = true;
  if (ec.forcing) t.forcing = env::hold_forcing();
  // Long enough to cover the stock disturbance program with recovery room.
  t.steps = static_cast<int>(500.0 / ec.fluid.dt + 0.5);
  return t;
}

TestSpec n_shape_test(const env::EnvironmentConfig& ec) {
  TestSpec t;
  t.name = "nshape";
  const Vec2 corners[4] = {{30.0, 30.0}, {30.0, 70.0}, {70.0, 30.0}, {70.0, 70.0}};
  const double hold = 100.0;
  for (int k = 0; k < 4; ++k) {
    env::Objective o;
    o.start_time = k * hold;
    o.x_obj = corners[k];
    t.schedule.items.push_back(o);
  }
  t.steps = static_cast<int>(4 * hold / ec.fluid.dt + 0.5);
  if (ec.forcing) t.forcing = env::hold_forcing();
  return t;
}

// ---------------------------------------------------------------------------
// Comparison tables

namespace {

int label_rank(const std::string& label) {
  if (label == "RL") return 0;
  if (label == "LS") return 1;
  if (label == "Sup") return 2;
  if (label == "PID") return 3;
  if (label == "Diff") return 4;
  return 5;
}

}  // namespace

ComparisonTable compare(const std::vector<LabeledReport>& reports) {
  ComparisonTable t;
  for (const LabeledReport& r : reports) {
    if (std::find(t.controllers.begin(), t.controllers.end(), r.controller) == t.controllers.end())
      t.controllers.push_back(r.controller);
    if (std::find(t.tests.begin(), t.tests.end(), r.test) == t.tests.end()) t.tests.push_back(r.test);
  }
  std::sort(t.controllers.begin(), t.controllers.end(), [](const std::string& a, const std::string& b) {
    const int ra = label_rank(a), rb = label_rank(b);
    return ra != rb ? ra < rb : a < b;
  });

  // Merge multiple simulations of one (test, controller): means average
  // per report, deviations pool over every included step.
  t.cells.assign(t.tests.size(), std::vector<ComparisonCell>(t.controllers.size()));
  for (size_t row = 0; row < t.tests.size(); ++row) {
    for (size_t col = 0; col < t.controllers.size(); ++col) {
      ComparisonCell& c = t.cells[row][col];
      double mean_sum = 0.0;
      int count = 0;
      for (const LabeledReport& r : reports) {
        if (r.test != t.tests[row] || r.controller != t.controllers[col]) continue;
        mean_sum += r.report.ss_xy.mean;
        ++count;
        c.ss_xy.n += r.report.ss_xy.n;
        c.ss_xy.sum += r.report.ss_xy.sum;
        c.ss_xy.sumsq += r.report.ss_xy.sumsq;
        c.complete = c.complete && r.report.complete;
      }
      if (count == 0) continue;
      c.present = true;
      c.ss_xy.mean = mean_sum / count;
      if (c.ss_xy.n > 0) {
        const double mu = c.ss_xy.sum / static_cast<double>(c.ss_xy.n);
        c.ss_xy.stddev = std::sqrt(std::max(0.0, c.ss_xy.sumsq / static_cast<double>(c.ss_xy.n) - mu * mu));
      }
    }
  }

  t.best.assign(t.tests.size(), -1);
  for (size_t row = 0; row < t.cells.size(); ++row) {
    int win = -1;
    for (size_t col = 0; col < t.cells[row].size(); ++col) {
      const ComparisonCell& c = t.cells[row][col];
      if (!c.present || !c.complete) continue;
      if (win < 0) {
        win = static_cast<int>(col);
        continue;
      }
      const ComparisonCell& w = t.cells[row][static_cast<size_t>(win)];
      if (c.ss_xy.mean < w.ss_xy.mean ||
          (c.ss_xy.mean == w.ss_xy.mean &&
           (c.ss_xy.stddev < w.ss_xy.stddev ||
            (c.ss_xy.stddev == w.ss_xy.stddev && t.controllers[col] < t.controllers[static_cast<size_t>(win)]))))
        win = static_cast<int>(col);
    }
    t.best[row] = win;
  }
  return t;
}

void write_comparison_csv(const std::string& path, const ComparisonTable& t) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("eval: cannot write " + path);
  f << "test,controller,ss_mean_exy,ss_std_exy,complete,best\n";
  char buf[256];
  for (size_t row = 0; row < t.tests.size(); ++row) {
    for (size_t col = 0; col < t.controllers.size(); ++col) {
      const ComparisonCell& c = t.cells[row][col];
      if (!c.present) continue;
      std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%d,%d\n", t.tests[row].c_str(),
                    t.controllers[col].c_str(), c.ss_xy.mean, c.ss_xy.stddev, c.complete ? 1 : 0,
                    t.best[row] == static_cast<int>(col) ? 1 : 0);
      f << buf;
    }
  }
  if (!f) throw std::runtime_error("eval: write failed: " + path);
}

std::string format_comparison(const ComparisonTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head;
  head.push_back("test");
  for (const std::string& c : t.controllers) head.push_back(c);
  grid.push_back(head);
  for (size_t row = 0; row < t.tests.size(); ++row) {
    std::vector<std::string> line;
    line.push_back(t.tests[row]);
    for (size_t col = 0; col < t.controllers.size(); ++col) {
      const ComparisonCell& c = t.cells[row][col];
      if (!c.present) {
        line.push_back("-");
        continue;
      }
      char buf[96];
      if (c.complete)
        std::snprintf(buf, sizeof buf, "%s%.4f +- %.4f", t.best[row] == static_cast<int>(col) ? "*" : "",
                      c.ss_xy.mean, c.ss_xy.stddev);
      else
        std::snprintf(buf, sizeof buf, "INCOMPLETE");
      line.push_back(buf);
    }
    grid.push_back(std::move(line));
  }

  std::vector<size_t> widths(grid[0].size(), 0);
  for (const auto& line : grid)
    for (size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  std::ostringstream os;
  for (const auto& line : grid) {
    for (size_t c = 0; c < line.size(); ++c) {
      os << line[c];
      if (c + 1 < line.size()) os << std::string(widths[c] - line[c].size() + 2, ' ');
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace fluidctl::evalsuite
