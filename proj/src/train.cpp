// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/train/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>

#include "fluidctl/ad/ops_extra.hpp"
#include "fluidctl/baselines/baselines.hpp"
#include "fluidctl/core/diag.hpp"

namespace fluidctl::train {

using ad::Value;

namespace {

double halved_lr(double lr0, int half_every, int iteration) {
  return lr0 * std::pow(0.5, iteration / half_every);
}

double mean_tail(const std::vector<double>& xs, size_t from) {
  double s = 0.0;
  for (size_t i = from; i < xs.size(); ++i) s += xs[i];
  return s / static_cast<double>(xs.size() - from);
}

}  // namespace

void TrainConfig::validate() const {
  if (n_i < 0) throw std::invalid_argument("train: n_i must be non-negative");
  if (l < 1) throw std::invalid_argument("train: window length must be positive");
  if (lr0 <= 0.0) throw std::invalid_argument("train: lr0 must be positive");
  if (lr_half_every < 1) throw std::invalid_argument("train: lr_half_every must be positive");
  if (episode_length < l) throw std::invalid_argument("train: episode shorter than one window");
  if (warmup_episodes < 0 || validate_every < 0 || validation_targets < 0)
    throw std::invalid_argument("train: negative count");
  if (validation_time <= 0.0) throw std::invalid_argument("train: validation_time must be positive");
  weights.validate();
  losses::apply_ablation(weights, ablation);  // rejects unknown tokens
}

TrainConfig resolve_defaults(const TrainConfig& cfg) {
  TrainConfig out = cfg;
  const env::EnvironmentConfig ec = env::make_environment(cfg.env_id);
  if (out.n_i < 0) out.n_i = ec.dof == 2 ? 1000 : 5000;
  if (out.lr_half_every <= 0) out.lr_half_every = ec.dof == 2 ? 200 : 1000;
  if (out.episode_length <= 0) out.episode_length = ec.episode_length;
  const losses::LossWeights zero{};
  bool weights_unset = true;
  const double* a = &cfg.weights.beta_xy;
  const double* b = &zero.beta_xy;
  for (int k = 0; k < 9; ++k) weights_unset = weights_unset && a[k] == b[k];
  if (weights_unset) out.weights = losses::LossWeights::for_dof(ec.dof);
  out.weights.l = out.l;
  return out;
}

double lr_schedule(const TrainConfig& cfg, int iteration) {
  if (cfg.lr_half_every < 1) throw std::invalid_argument("train: lr_half_every must be positive");
  if (iteration < 0) throw std::invalid_argument("train: negative iteration");
  return halved_lr(cfg.lr0, cfg.lr_half_every, iteration);
}

void write_train_log(const std::string& path, const std::vector<TrainRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("train: cannot write " + path);
  f << "iteration,lr,loss,O,V,E,wall_time\n";
  char buf[256];
  for (const TrainRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.iteration, r.lr, r.loss, r.o, r.v,
                  r.e, r.wall_time);
    f << buf;
  }
  if (!f) throw std::runtime_error("train: write failed: " + path);
}

// ---------------------------------------------------------------------------
// Optimization

Adam::Adam(double beta1, double beta2, double eps, double clip)
    : beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip) {}

double Adam::step(const std::vector<Tensor*>& params, std::vector<Tensor> grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads length mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter set changed between steps");

  double sq = 0.0;
  for (const Tensor& g : grads)
    for (int i = 0; i < g.size(); ++i) sq += g[i] * g[i];
  const double norm = std::sqrt(sq);
  if (clip_ > 0.0 && norm > clip_) {
    const double s = clip_ / norm;
    for (Tensor& g : grads)
      for (int i = 0; i < g.size(); ++i) g[i] *= s;
  }

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t j = 0; j < params.size(); ++j) {
    Tensor& p = *params[j];
    const Tensor& g = grads[j];
    if (!p.same_shape(g)) throw std::invalid_argument("Adam: gradient shape mismatch");
    Tensor& m = m_[j];
    Tensor& v = v_[j];
    for (int i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  return norm;
}

std::vector<Tensor*> trainable_tensors(policy::PolicyParams& p) {
  std::vector<Tensor*> out;
  for (size_t i = 0; i < p.weights.size(); ++i) {
    out.push_back(&p.weights[i]);
    out.push_back(&p.biases[i]);
  }
  return out;
}

namespace {

//! Gradients in the trainable_tensors order.
std::vector<Tensor> collect_grads(const ad::Tape& tape, const policy::TapedPolicy& tp) {
  std::vector<Tensor> out;
  for (size_t i = 0; i < tp.weights.size(); ++i) {
    out.push_back(tape.grad(tp.weights[i]));
    out.push_back(tape.grad(tp.biases[i]));
  }
  return out;
}

Value detached(const Value& v) {
  Value d;
  d.data = v.data;
  return d;
}

//! Newest-first frame ring of capacity n_p + 1.
void push_frame(std::deque<Value>& hist, Value frame, int n_p) {
  hist.push_front(std::move(frame));
  if (static_cast<int>(hist.size()) > n_p + 1) hist.pop_back();
}

std::vector<Value> frames_of(const std::deque<Value>& hist) { return {hist.begin(), hist.end()}; }

//! Mean tracking error of a frozen policy steered at obj, averaged over the
//! last three quarters of the rollout. Terminated rollouts score infinity.
double rollout_error(const env::Environment& environment, const policy::PolicyParams& p, const env::Objective& obj,
                     int steps) {
  const env::EnvironmentConfig& ec = environment.config();
  const policy::PolicyConfig& pc = p.cfg;
  const int stride = ec.controller_sample_stride;
  policy::TapedPolicy tp = policy::bind(nullptr, p);
  env::SimState s = environment.reset();
  std::deque<Value> hist;
  env::ForcingSchedule no_forcing;
  Value force = Value::constant(ad::Tensor::vec2(0.0, 0.0));
  Value torque = Value::constant(0.0);
  std::vector<double> errs;
  for (int k = 0; k < steps; ++k) {
    if (k % stride == 0) {
      push_frame(hist, policy::make_frame(pc, s, obj), pc.n_p);
      // Same convention as training: zero control until the history is full.
      if (static_cast<int>(hist.size()) == pc.n_p + 1) {
        Value z = policy::assemble_z(pc, frames_of(hist));
        Value out = policy::policy_forward(tp, z);
        policy::Efforts eff = policy::to_world_efforts(pc, out, s.body.alpha);
        force = eff.force;
        torque = eff.torque;
      }
    }
    s = environment.step(s, force, torque, no_forcing);
    if (s.terminated) return std::numeric_limits<double>::infinity();
    double err = (obj.x_obj - env::to_vec2(s.body.x)).norm();
    if (ec.dof == 3) err += std::abs(wrap_angle(obj.alpha_obj - env::to_scalar(s.body.alpha)));
    errs.push_back(err);
  }
  if (errs.empty()) return std::numeric_limits<double>::infinity();
  return mean_tail(errs, errs.size() / 4);
}

void dump_window(const std::string& path, const losses::WindowTrace& trace, int update) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    diag::warnf("train: cannot write window dump to %s", path.c_str());
    return;
  }
  f << "# window preceding the non-finite loss at update " << update << "\n";
  f << "k,e_x,e_y,e_alpha,vx,vy,omega,Fc_x,Fc_y,Tc\n";
  char buf[400];
  for (size_t k = 0; k < trace.steps.size(); ++k) {
    const losses::WindowStep& s = trace.steps[k];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", k,
                  s.e_xy.tensor()[0], s.e_xy.tensor()[1], s.e_alpha.tensor()[0], s.xdot.tensor()[0],
                  s.xdot.tensor()[1], s.alphadot.tensor()[0], s.f_c.tensor()[0], s.f_c.tensor()[1],
                  s.t_c.tensor()[0]);
    f << buf;
  }
}

}  // namespace

void measure_normalization(const env::Environment& environment, int episodes, std::uint64_t seed,
                           policy::PolicyParams* p) {
  const env::EnvironmentConfig& ec = environment.config();
  const policy::PolicyConfig& pc = p->cfg;
  const int stride = ec.controller_sample_stride;
  const int dim = pc.input_dim;
  std::vector<double> sum(static_cast<size_t>(dim), 0.0), sumsq(static_cast<size_t>(dim), 0.0);
  long n = 0;

  auto pid = baselines::make_baseline("pid", ec);
  std::mt19937_64 rng(seed);
  env::ForcingSchedule no_forcing;
  const double hold = ec.episode_length * ec.fluid.dt;

  for (int epi = 0; epi < episodes; ++epi) {
    env::ObjectiveSchedule sched = env::sample_objectives(rng, 1, hold, ec.dof);
    const env::Objective& obj = sched.items[0];
    env::SimState s = environment.reset();
    pid->reset();
    std::deque<Value> hist;
    for (int k = 0; k < ec.episode_length && !s.terminated; ++k) {
      if (k % stride == 0) {
        push_frame(hist, policy::make_frame(pc, s, obj), pc.n_p);
        Value z = policy::assemble_z(pc, frames_of(hist));
        for (int d = 0; d < dim; ++d) {
          const double zd = z.tensor()[d];
          sum[static_cast<size_t>(d)] += zd;
          sumsq[static_cast<size_t>(d)] += zd * zd;
        }
        ++n;
      }
      baselines::ControlSignal sig = pid->act(s, obj);
      s = environment.step(s, Value::constant(Tensor::vec2(sig.force.x, sig.force.y)),
                           Value::constant(sig.torque), no_forcing);
    }
  }
  if (n == 0) return;  // keep the identity statistics

  Tensor mean({dim}), stdev({dim});
  for (int d = 0; d < dim; ++d) {
    const double mu = sum[static_cast<size_t>(d)] / static_cast<double>(n);
    const double var = std::max(0.0, sumsq[static_cast<size_t>(d)] / static_cast<double>(n) - mu * mu);
    mean[d] = mu;
    stdev[d] = std::max(std::sqrt(var), 1e-3);
  }
  p->norm_mean = std::move(mean);
  p->norm_std = std::move(stdev);
}

// ---------------------------------------------------------------------------
// Unsupervised window BPTT

TrainResult train_diffphys(const TrainConfig& cfg0) {
  TrainConfig cfg = resolve_defaults(cfg0);
  cfg.validate();

  env::EnvironmentConfig ec = env::make_environment(cfg.env_id);
  if (cfg.nx > 0) ec.nx = cfg.nx;
  if (cfg.ny > 0) ec.ny = cfg.ny;
  ec.episode_length = cfg.episode_length;
  env::Environment environment(ec);
  const int stride = ec.controller_sample_stride;
  if (cfg.l % stride != 0) throw std::invalid_argument("train: window length must be a multiple of the stride");

  const losses::LossWeights w = losses::apply_ablation(cfg.weights, cfg.ablation);

  policy::PolicyConfig pc = policy::PolicyConfig::for_dof(ec.dof);
  pc.f_max = ec.f_max;
  pc.t_max = ec.t_max;
  if (cfg.episode_length < cfg.l + pc.n_p * stride)
    throw std::invalid_argument("train: episode too short for the history warm-up plus one window");

  policy::PolicyParams params = policy::init_policy(pc, cfg.seed);
  measure_normalization(environment, cfg.warmup_episodes, cfg.seed ^ 0x5DEECE66Dull, &params);

  std::mt19937_64 obj_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::mt19937_64 val_rng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);
  const double hold = ec.episode_length * ec.fluid.dt;
  const env::ObjectiveSchedule val_targets = env::sample_objectives(val_rng, cfg.validation_targets, hold, ec.dof);
  const int val_steps = static_cast<int>(cfg.validation_time / ec.fluid.dt + 0.5);

  TrainResult res;
  res.best = params;
  res.last = params;
  double best_val = std::numeric_limits<double>::infinity();
  Adam adam;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  auto run_validation = [&](int iteration) {
    if (val_targets.items.empty()) return;
    double s = 0.0;
    for (const env::Objective& obj : val_targets.items) s += rollout_error(environment, params, obj, val_steps);
    const double score = s / static_cast<double>(val_targets.items.size());
    res.validation.push_back({iteration, score});
    if (score < best_val) {
      best_val = score;
      res.best = params;
      res.best_iteration = iteration;
    }
  };
  run_validation(0);

  env::SimState state;
  std::deque<Value> history;
  env::Objective obj;
  int ep_step = 0;
  env::ForcingSchedule no_forcing;
  const Value zero_f = Value::constant(Tensor::vec2(0.0, 0.0));
  const Value zero_t = Value::constant(0.0);

  // Fresh objective, fresh fluid, then zero-control steps until the frame
  // ring is full. Starting from rest the body cannot reach the boundary
  // here, but the loop guards the restart anyway.
  auto start_episode = [&] {
    for (;;) {
      obj = env::sample_objectives(obj_rng, 1, hold, ec.dof).items[0];
      state = environment.reset();
      history.clear();
      ep_step = 0;
      push_frame(history, policy::make_frame(pc, state, obj), pc.n_p);
      bool dead = false;
      while (static_cast<int>(history.size()) < pc.n_p + 1 && !dead) {
        for (int s2 = 0; s2 < stride; ++s2) {
          state = environment.step(state, zero_f, zero_t, no_forcing);
          ++ep_step;
          if (state.terminated) {
            dead = true;
            break;
          }
        }
        if (!dead) push_frame(history, policy::make_frame(pc, state, obj), pc.n_p);
      }
      if (!dead) return;
    }
  };
  start_episode();

  int updates = 0;
  while (updates < cfg.n_i) {
    if (ep_step + cfg.l > cfg.episode_length) {
      start_episode();
      continue;
    }

    // One window: fresh tape, parameters as leaves, everything that entered
    // the window as constants.
    auto tape = std::make_unique<ad::Tape>();
    policy::TapedPolicy tp = policy::bind(tape.get(), params);
    state = env::detach(state);
    for (Value& h : history) h = detached(h);

    losses::WindowTrace trace;
    trace.f_prev = state.last_force;
    trace.t_prev = state.last_torque;
    bool aborted = false;
    int k = 0;
    while (k < cfg.l && !aborted) {
      // Entry invariant: the frame of the current state sits at the front.
      Value z = policy::assemble_z(pc, frames_of(history));
      Value out = policy::policy_forward(tp, z);
      policy::Efforts eff = policy::to_world_efforts(pc, out, state.body.alpha);
      for (int s2 = 0; s2 < stride && k < cfg.l; ++s2) {
        state = environment.step(state, eff.force, eff.torque, no_forcing);
        ++k;
        ++ep_step;
        if (state.terminated) {
          aborted = true;
          break;
        }
        trace.steps.push_back(losses::window_step(state, obj));
      }
      if (!aborted) push_frame(history, policy::make_frame(pc, state, obj), pc.n_p);
    }
    if (aborted) {
      diag::warnf("train: episode terminated inside a window at update %d, restarting", updates);
      start_episode();
      continue;
    }

    losses::LossTerms lt = losses::total_loss(trace, w);
    const double loss = lt.total.tensor().item();
    if (!std::isfinite(loss)) {
      dump_window(cfg.dump_path, trace, updates);
      throw std::runtime_error("train: non-finite loss at update " + std::to_string(updates) +
                               (cfg.dump_path.empty() ? "" : " (window dumped to " + cfg.dump_path + ")"));
    }
    tape->backward(lt.total);
    std::vector<Tensor> grads = collect_grads(*tape, tp);
    tape.reset();  // frees the graph before the rollouts below

    const double lr = lr_schedule(cfg, updates);
    adam.step(trainable_tensors(params), std::move(grads), lr);
    res.log.push_back(
        {updates, lr, loss, lt.o.tensor().item(), lt.v.tensor().item(), lt.e.tensor().item(), wall()});
    ++updates;
    if (cfg.validate_every > 0 && updates % cfg.validate_every == 0 && updates < cfg.n_i) run_validation(updates);
  }
  if (cfg.n_i > 0) run_validation(cfg.n_i);
  res.last = params;
  return res;
}

// ---------------------------------------------------------------------------
// Dataset io

namespace {

constexpr char kDsetMagic[4] = {'D', 'S', 'E', 'T'};

void dset_fail(const std::string& path, const char* why) {
  throw std::runtime_error("dataset io: " + path + ": " + why);
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& d) {
  const int count = d.count();
  if (d.z_dim <= 0) dset_fail(path, "z dimension must be positive");
  if (static_cast<int>(d.z.size()) != count * d.z_dim || static_cast<int>(d.targets.size()) != count * 3)
    dset_fail(path, "inconsistent sample arrays");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) dset_fail(path, "cannot open for writing");
  const uint32_t n = static_cast<uint32_t>(count);
  const uint32_t zd = static_cast<uint32_t>(d.z_dim);
  f.write(kDsetMagic, 4);
  f.write(reinterpret_cast<const char*>(&n), 4);
  f.write(reinterpret_cast<const char*>(&zd), 4);
  for (int i = 0; i < count; ++i) {
    f.write(reinterpret_cast<const char*>(&d.z[static_cast<size_t>(i) * d.z_dim]),
            static_cast<std::streamsize>(sizeof(double)) * d.z_dim);
    f.write(reinterpret_cast<const char*>(&d.targets[static_cast<size_t>(i) * 3]), sizeof(double) * 3);
  }
  if (!f) dset_fail(path, "write failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) dset_fail(path, "cannot open");
  char magic[4];
  uint32_t n = 0, zd = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&n), 4);
  f.read(reinterpret_cast<char*>(&zd), 4);
  if (!f) dset_fail(path, "truncated header");
  if (std::memcmp(magic, kDsetMagic, 4) != 0) dset_fail(path, "bad magic");
  if (zd == 0 || zd > 4096 || n > (1u << 27)) dset_fail(path, "implausible shape");
  Dataset d;
  d.z_dim = static_cast<int>(zd);
  d.z.resize(static_cast<size_t>(n) * zd);
  d.targets.resize(static_cast<size_t>(n) * 3);
  for (uint32_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(&d.z[static_cast<size_t>(i) * zd]),
           static_cast<std::streamsize>(sizeof(double)) * zd);
    f.read(reinterpret_cast<char*>(&d.targets[static_cast<size_t>(i) * 3]), sizeof(double) * 3);
  }
  if (!f) dset_fail(path, "truncated data");
  return d;
}

// ---------------------------------------------------------------------------
// Supervised dataset generation

double quintic_blend(double tau) { return ((6.0 * tau - 15.0) * tau + 10.0) * tau * tau * tau; }

namespace {

double circumradius(const body::BodyShape& shape) {
  if (shape.is_cylinder()) return shape.radius();
  return 0.5 * std::hypot(shape.width(), shape.height());
}

//! The quintic path is monotone per coordinate, so it stays inside the
//! bounding box of its endpoints.
bool path_safe(const env::EnvironmentConfig& ec, Vec2 start, const env::Objective& obj) {
  const fluid::GridSpec g = ec.grid();
  const double margin = circumradius(*ec.shape) + 2.0 * g.dx;
  const double lox = std::min(start.x, obj.x_obj.x), hix = std::max(start.x, obj.x_obj.x);
  const double loy = std::min(start.y, obj.x_obj.y), hiy = std::max(start.y, obj.x_obj.y);
  return lox - margin >= 0.0 && hix + margin <= g.width() && loy - margin >= 0.0 && hiy + margin <= g.height();
}

}  // namespace

DatasetPair generate_supervised_dataset(const env::EnvironmentConfig& ecfg, int n_sims, int steps_per_sim,
                                        std::uint64_t seed) {
  env::EnvironmentConfig ec = ecfg;
  ec.validate();
  if (n_sims < 2) throw std::invalid_argument("dataset: need at least 2 simulations for a validation split");
  if (steps_per_sim < 2) throw std::invalid_argument("dataset: need at least 2 steps per simulation");

  env::Environment environment(ec);
  policy::PolicyConfig pc = policy::PolicyConfig::for_dof(ec.dof);
  pc.f_max = ec.f_max;
  pc.t_max = ec.t_max;
  const int stride = ec.controller_sample_stride;
  const double dt = ec.fluid.dt;
  const double m = ec.shape->mass();
  const double inertia = ec.shape->inertia();
  const Vec2 start{40.0, 40.0};

  const int n_val = std::min(20, std::max(1, n_sims / 5));
  const int n_train = n_sims - n_val;
  DatasetPair out;
  out.train.z_dim = out.val.z_dim = pc.input_dim;

  std::mt19937_64 rng(seed);
  const double hold = steps_per_sim * dt;

  for (int sim = 0; sim < n_sims; ++sim) {
    Dataset& dst = sim < n_train ? out.train : out.val;

    env::Objective obj;
    for (int tries = 0;; ++tries) {
      if (tries >= 100) throw std::runtime_error("dataset: no target found inside the domain margins");
      obj = env::sample_objectives(rng, 1, hold, ec.dof).items[0];
      if (path_safe(ec, start, obj)) break;
    }

    // Prescribed poses at every solver step, rest to rest over the episode.
    const int N = steps_per_sim;
    std::vector<Vec2> X(static_cast<size_t>(N) + 1);
    std::vector<double> A(static_cast<size_t>(N) + 1, 0.0);
    for (int k = 0; k <= N; ++k) {
      const double b = quintic_blend(static_cast<double>(k) / N);
      X[static_cast<size_t>(k)] = start + (obj.x_obj - start) * b;
      if (ec.dof == 3) A[static_cast<size_t>(k)] = obj.alpha_obj * b;
    }

    env::SimState state = environment.reset();
    std::deque<Value> hist;
    bool pending = false;
    std::vector<double> pending_z(static_cast<size_t>(pc.input_dim), 0.0);

    for (int k = 0; k < N; ++k) {
      if (k % stride == 0) {
        push_frame(hist, policy::make_frame(pc, state, obj), pc.n_p);
        Value z = policy::assemble_z(pc, frames_of(hist));
        for (int d = 0; d < pc.input_dim; ++d) pending_z[static_cast<size_t>(d)] = z.tensor()[d];
        pending = true;
      }

      env::StepInfo si;
      state = environment.step_kinematic(state, X[static_cast<size_t>(k) + 1], A[static_cast<size_t>(k) + 1], &si);

      // Backward-difference acceleration over the step just taken; the
      // fluid force is subtracted so a dynamic replay of these efforts
      // retraces the prescribed poses.
      const Vec2 xm1 = k == 0 ? X[0] : X[static_cast<size_t>(k) - 1];
      const double am1 = k == 0 ? A[0] : A[static_cast<size_t>(k) - 1];
      const Vec2 acc = (X[static_cast<size_t>(k) + 1] - X[static_cast<size_t>(k)] * 2.0 + xm1) * (1.0 / (dt * dt));
      const double aacc = (A[static_cast<size_t>(k) + 1] - 2.0 * A[static_cast<size_t>(k)] + am1) / (dt * dt);
      const Vec2 f_hat = acc * m - si.fluid_force;
      const double t_hat = ec.dof == 3 ? inertia * aacc - si.fluid_torque : 0.0;

      if (pending) {
        dst.z.insert(dst.z.end(), pending_z.begin(), pending_z.end());
        dst.targets.push_back(f_hat.x);
        dst.targets.push_back(f_hat.y);
        dst.targets.push_back(t_hat);
        pending = false;
      }
      state.last_force = Value::constant(Tensor::vec2(f_hat.x, f_hat.y));
      state.last_torque = Value::constant(t_hat);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Supervised regression

void SupervisedConfig::validate() const {
  if (n_i < 0) throw std::invalid_argument("train: n_i must be non-negative");
  if (lr0 <= 0.0) throw std::invalid_argument("train: lr0 must be positive");
  if (lr_half_every < 1) throw std::invalid_argument("train: lr_half_every must be positive");
  if (batch < 1) throw std::invalid_argument("train: batch must be positive");
  if (validate_every < 1) throw std::invalid_argument("train: validate_every must be positive");
}

namespace {

//! relu(W1 Z + b1) -> relu(W2 . + b2) -> W3 . + b3 on an (in, batch) matrix.
Value batched_forward(const policy::TapedPolicy& tp, const Value& zt) {
  const int cols = zt.tensor().cols();
  Value h = zt;
  for (int layer = 0; layer < 3; ++layer) {
    h = ad::add(ad::matmul(tp.weights[static_cast<size_t>(layer)], h),
                ad::broadcast_cols(tp.biases[static_cast<size_t>(layer)], cols));
    if (layer < 2) h = ad::relu(h);
  }
  return h;
}

//! Normalized z of sample `idx` written into column `col`.
void fill_column(Tensor& zt, int col, const Dataset& d, int idx, const Tensor& mean, const Tensor& stdev) {
  for (int r = 0; r < d.z_dim; ++r) {
    const double raw = d.z[static_cast<size_t>(idx) * d.z_dim + r];
    zt.at(r, col) = (raw - mean[r]) / stdev[r];
  }
}

}  // namespace

SupervisedResult train_supervised(const Dataset& train_set, const Dataset& val_set, const SupervisedConfig& scfg) {
  scfg.validate();
  ad::ensure_extra_ops_registered();
  if (train_set.count() == 0) throw std::invalid_argument("train: empty training dataset");

  int dof = 0;
  if (train_set.z_dim == policy::PolicyConfig::for_dof(2).input_dim) dof = 2;
  else if (train_set.z_dim == policy::PolicyConfig::for_dof(3).input_dim) dof = 3;
  else throw std::invalid_argument("train: dataset z dimension matches no stock architecture");
  if (val_set.count() > 0 && val_set.z_dim != train_set.z_dim)
    throw std::invalid_argument("train: train/validation z dimensions differ");

  policy::PolicyConfig pc = policy::PolicyConfig::for_dof(dof);
  pc.bounded = false;  // regression targets are unbounded efforts
  policy::PolicyParams params = policy::init_policy(pc, scfg.seed);

  // Normalization statistics from the training split.
  {
    const int dim = train_set.z_dim;
    const int n = train_set.count();
    Tensor mean({dim}), stdev({dim});
    for (int r = 0; r < dim; ++r) {
      double s = 0.0, sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double v = train_set.z[static_cast<size_t>(i) * dim + r];
        s += v;
        sq += v * v;
      }
      const double mu = s / n;
      mean[r] = mu;
      stdev[r] = std::max(std::sqrt(std::max(0.0, sq / n - mu * mu)), 1e-3);
    }
    params.norm_mean = std::move(mean);
    params.norm_std = std::move(stdev);
  }

  const int out_dim = pc.output_dim();
  auto target_of = [&](const Dataset& d, int idx, int ch) { return d.targets[static_cast<size_t>(idx) * 3 + ch]; };

  auto mean_loss_on = [&](const Dataset& d) {
    policy::TapedPolicy tp = policy::bind(nullptr, params);
    const int n = d.count();
    Tensor zt({d.z_dim, n});
    for (int i = 0; i < n; ++i) fill_column(zt, i, d, i, params.norm_mean, params.norm_std);
    const Tensor pred = batched_forward(tp, Value::constant(std::move(zt))).tensor();
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < out_dim; ++ch) {
        const double diff = pred.at(ch, i) - target_of(d, i, ch);
        s += diff * diff;
      }
    return s / n;
  };

  SupervisedResult res;
  res.best = params;
  res.last = params;
  double best_val = std::numeric_limits<double>::infinity();
  Adam adam;
  std::mt19937_64 rng(scfg.seed ^ 0x94D049BB133111EBull);
  std::uniform_int_distribution<int> pick(0, train_set.count() - 1);
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  auto run_validation = [&](int iteration) {
    if (val_set.count() == 0) return;
    const double score = mean_loss_on(val_set);
    res.validation.push_back({iteration, score});
    if (score < best_val) {
      best_val = score;
      res.best = params;
      res.best_iteration = iteration;
    }
  };
  run_validation(0);

  for (int it = 0; it < scfg.n_i; ++it) {
    const int bs = std::min(scfg.batch, train_set.count());
    Tensor zt({train_set.z_dim, bs});
    Tensor yt({out_dim, bs});
    for (int j = 0; j < bs; ++j) {
      const int idx = pick(rng);
      fill_column(zt, j, train_set, idx, params.norm_mean, params.norm_std);
      for (int ch = 0; ch < out_dim; ++ch) yt.at(ch, j) = target_of(train_set, idx, ch);
    }

    ad::Tape tape;
    policy::TapedPolicy tp = policy::bind(&tape, params);
    Value pred = batched_forward(tp, Value::constant(std::move(zt)));
    Value loss = ad::mul(Value::constant(1.0 / bs), ad::sum(ad::square(ad::sub(pred, Value::constant(yt)))));
    const double lv = loss.tensor().item();
    if (!std::isfinite(lv)) throw std::runtime_error("train: non-finite supervised loss at iteration " + std::to_string(it));
    tape.backward(loss);
    std::vector<Tensor> grads = collect_grads(tape, tp);

    const double lr = halved_lr(scfg.lr0, scfg.lr_half_every, it);
    adam.step(trainable_tensors(params), std::move(grads), lr);
    res.log.push_back({it, lr, lv, 0.0, 0.0, 0.0, wall()});
    if ((it + 1) % scfg.validate_every == 0 && it + 1 < scfg.n_i) run_validation(it + 1);
  }
  if (scfg.n_i > 0) run_validation(scfg.n_i);
  res.last = params;
  if (val_set.count() == 0) res.best = params;
  return res;
}

}  // namespace fluidctl::train
