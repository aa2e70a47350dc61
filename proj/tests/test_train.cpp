// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fluidctl/train/train.hpp"

using namespace fluidctl;
using ad::Tensor;
using ad::Value;
using namespace fluidctl::train;

namespace {

std::string temp_path(const char* stem) {
  return std::string("/tmp/fluidctl_train_") + stem + "_" + std::to_string(getpid());
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedules and configuration

TEST_CASE("learning rate halves on the floor schedule") {
  TrainConfig cfg;
  cfg.lr0 = 0.01;
  cfg.lr_half_every = 200;
  CHECK(lr_schedule(cfg, 0) == 0.01);
  CHECK(lr_schedule(cfg, 199) == 0.01);
  CHECK(lr_schedule(cfg, 200) == 0.005);
  CHECK(lr_schedule(cfg, 399) == 0.005);
  CHECK(lr_schedule(cfg, 400) == 0.0025);
  CHECK_THROWS_AS(lr_schedule(cfg, -1), std::invalid_argument);
}

TEST_CASE("defaults resolve by degrees of freedom") {
  TrainConfig two;
  two.env_id = env::EnvId::BaseNR;
  TrainConfig r2 = resolve_defaults(two);
  CHECK(r2.n_i == 1000);
  CHECK(r2.lr_half_every == 200);
  CHECK(r2.episode_length == 1000);
  CHECK(r2.lr0 == 0.01);
  CHECK(r2.l == 16);
  CHECK(r2.weights.l == 16);
  CHECK(r2.weights.beta_xy == losses::LossWeights::for_dof(2).beta_xy);

  TrainConfig three;
  three.env_id = env::EnvId::Base;
  TrainConfig r3 = resolve_defaults(three);
  CHECK(r3.n_i == 5000);
  CHECK(r3.lr_half_every == 1000);

  // Explicit values survive, including an explicit zero iteration count.
  TrainConfig pinned;
  pinned.n_i = 0;
  pinned.lr_half_every = 7;
  pinned.episode_length = 64;
  TrainConfig rp = resolve_defaults(pinned);
  CHECK(rp.n_i == 0);
  CHECK(rp.lr_half_every == 7);
  CHECK(rp.episode_length == 64);
}

TEST_CASE("quintic blend is a monotone rest to rest ramp") {
  CHECK(quintic_blend(0.0) == 0.0);
  CHECK(quintic_blend(1.0) == 1.0);
  CHECK(quintic_blend(0.5) == doctest::Approx(0.5).epsilon(1e-15));
  const double h = 1e-4;
  CHECK(std::abs(quintic_blend(h) - quintic_blend(0.0)) / h < 1e-6);
  CHECK(std::abs(quintic_blend(1.0) - quintic_blend(1.0 - h)) / h < 1e-6);
  double prev = 0.0;
  for (int k = 1; k <= 50; ++k) {
    double cur = quintic_blend(k / 50.0);
    CHECK(cur > prev);
    prev = cur;
  }
}

// ---------------------------------------------------------------------------
// Optimizer

TEST_CASE("adam clips by global norm and reports the raw norm") {
  Tensor p({2}, {1.0, 1.0});
  Tensor g({2}, {3.0, 4.0});
  Adam adam;  // clip 1.0
  const double lr = 0.1;
  double norm = adam.step({&p}, {g}, lr);
  CHECK(norm == doctest::Approx(5.0).epsilon(1e-15));
  // After clipping to {0.6, 0.8} the first Adam step is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - lr * 0.6 / (0.6 + 1e-8)).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 - lr * 0.8 / (0.8 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam leaves small gradients unclipped") {
  Tensor p({2}, {0.0, 0.0});
  Tensor g({2}, {0.3, -0.4});
  Adam adam;
  double norm = adam.step({&p}, {g}, 0.01);
  CHECK(norm == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[0] < 0.0);  // moves against the gradient
  CHECK(p[1] > 0.0);
}

TEST_CASE("adam rejects mismatched gradients") {
  Tensor p({2});
  Adam adam;
  CHECK_THROWS_AS(adam.step({&p}, {}, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(adam.step({&p}, {Tensor({3})}, 0.01), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Logs and datasets

TEST_CASE("train log csv carries the per term columns") {
  const std::string path = temp_path("log.csv");
  std::vector<TrainRow> rows;
  rows.push_back({0, 0.01, 1.5, 1.0, 0.25, 0.25, 0.125});
  rows.push_back({1, 0.01, 0.75, 0.5, 0.125, 0.125, 0.25});
  write_train_log(path, rows);

  std::ifstream f(path);
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "iteration,lr,loss,O,V,E,wall_time");
  REQUIRE(std::getline(f, line));
  double it, lr, loss, o, v, e, wt;
  REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf", &it, &lr, &loss, &o, &v, &e, &wt) == 7);
  CHECK(it == 0.0);
  CHECK(lr == 0.01);
  CHECK(loss == 1.5);
  CHECK(o == 1.0);
  CHECK(v == 0.25);
  CHECK(e == 0.25);
  REQUIRE(std::getline(f, line));
  CHECK(!std::getline(f, line));
  std::remove(path.c_str());
}

TEST_CASE("dataset files round trip bit for bit") {
  Dataset d;
  d.z_dim = 16;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 16; ++k) d.z.push_back(u(rng));
    for (int k = 0; k < 3; ++k) d.targets.push_back(u(rng));
  }
  const std::string path = temp_path("dset");
  save_dataset(path, d);
  Dataset back = load_dataset(path);
  CHECK(back.z_dim == 16);
  CHECK(back.count() == 3);
  CHECK(std::memcmp(back.z.data(), d.z.data(), sizeof(double) * d.z.size()) == 0);
  CHECK(std::memcmp(back.targets.data(), d.targets.data(), sizeof(double) * d.targets.size()) == 0);
  std::remove(path.c_str());
}

TEST_CASE("dataset loading rejects corrupt files") {
  const std::string path = temp_path("dset_bad");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
    uint32_t n = 1, zd = 16;
    f.write(reinterpret_cast<char*>(&n), 4);
    f.write(reinterpret_cast<char*>(&zd), 4);
  }
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "DSET";
    uint32_t n = 4, zd = 16;
    f.write(reinterpret_cast<char*>(&n), 4);
    f.write(reinterpret_cast<char*>(&zd), 4);
    double x = 1.0;  // far fewer doubles than 4 * 19
    f.write(reinterpret_cast<char*>(&x), 8);
  }
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);
  CHECK_THROWS_AS(load_dataset(temp_path("missing")), std::runtime_error);
  std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// Normalization statistics

TEST_CASE("normalization statistics are deterministic and floored") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 24;
  ec.episode_length = 30;
  env::Environment environment(ec);
  policy::PolicyConfig pc = policy::PolicyConfig::for_dof(2);

  policy::PolicyParams a = policy::init_policy(pc, 1);
  measure_normalization(environment, 2, 42, &a);
  REQUIRE(a.norm_mean.size() == pc.input_dim);
  REQUIRE(a.norm_std.size() == pc.input_dim);
  for (int d = 0; d < pc.input_dim; ++d) CHECK(a.norm_std[d] >= 1e-3);
  // The padded tail dimensions never vary: zero mean, floored deviation.
  CHECK(a.norm_mean[pc.input_dim - 1] == 0.0);
  CHECK(a.norm_std[pc.input_dim - 1] == 1e-3);
  // The error dimensions do vary across PID warm up.
  CHECK(a.norm_std[0] > 1e-3);

  policy::PolicyParams b = policy::init_policy(pc, 1);
  measure_normalization(environment, 2, 42, &b);
  CHECK(same_bits(a.norm_mean, b.norm_mean));
  CHECK(same_bits(a.norm_std, b.norm_std));
}

// ---------------------------------------------------------------------------
// Unsupervised training

TEST_CASE("zero iterations return the freshly initialized parameters") {
  TrainConfig cfg;
  cfg.env_id = env::EnvId::BaseNR;
  cfg.nx = cfg.ny = 24;
  cfg.n_i = 0;
  cfg.l = 8;
  cfg.lr_half_every = 100;
  cfg.episode_length = 40;
  cfg.seed = 5;
  cfg.warmup_episodes = 0;  // identity statistics, directly comparable
  cfg.validation_targets = 0;

  TrainResult res = train_diffphys(cfg);
  CHECK(res.log.empty());
  CHECK(res.validation.empty());

  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  policy::PolicyConfig pc = policy::PolicyConfig::for_dof(2);
  pc.f_max = ec.f_max;
  pc.t_max = ec.t_max;
  policy::PolicyParams init = policy::init_policy(pc, 5);
  REQUIRE(res.best.weights.size() == init.weights.size());
  for (size_t i = 0; i < init.weights.size(); ++i) {
    CHECK(same_bits(res.best.weights[i], init.weights[i]));
    CHECK(same_bits(res.last.weights[i], init.weights[i]));
    CHECK(same_bits(res.best.biases[i], init.biases[i]));
  }
}

TEST_CASE("window training logs the schedule and repeats bit for bit") {
  TrainConfig cfg;
  cfg.env_id = env::EnvId::BaseNR;
  cfg.nx = cfg.ny = 24;
  cfg.n_i = 5;
  cfg.l = 8;
  cfg.lr_half_every = 2;
  cfg.episode_length = 40;
  cfg.seed = 9;
  cfg.warmup_episodes = 1;
  cfg.validate_every = 2;
  cfg.validation_targets = 1;
  cfg.validation_time = 2.0;

  TrainResult a = train_diffphys(cfg);
  REQUIRE(a.log.size() == 5);
  for (int it = 0; it < 5; ++it) {
    const TrainRow& r = a.log[static_cast<size_t>(it)];
    CHECK(r.iteration == it);
    CHECK(r.lr == lr_schedule(cfg, it));
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(r.o + r.v + r.e).epsilon(1e-12));
    CHECK(r.o >= 0.0);
    CHECK(r.v >= 0.0);
    CHECK(r.e >= 0.0);
  }
  // Validation at iteration 0, after updates 2 and 4, and at the end.
  REQUIRE(a.validation.size() == 4);
  CHECK(a.validation[0].iteration == 0);
  CHECK(a.validation[1].iteration == 2);
  CHECK(a.validation[2].iteration == 4);
  CHECK(a.validation[3].iteration == 5);
  double best = a.validation[0].error;
  for (const ValidationPoint& v : a.validation) best = std::min(best, v.error);
  bool found = false;
  for (const ValidationPoint& v : a.validation)
    if (v.iteration == a.best_iteration && v.error == best) found = true;
  CHECK(found);

  TrainResult b = train_diffphys(cfg);
  REQUIRE(b.log.size() == a.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
  for (size_t i = 0; i < a.last.weights.size(); ++i) {
    CHECK(same_bits(a.last.weights[i], b.last.weights[i]));
    CHECK(same_bits(a.last.biases[i], b.last.biases[i]));
    CHECK(same_bits(a.best.weights[i], b.best.weights[i]));
  }
}

TEST_CASE("window loss gradient matches finite differences") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 32;
  ec.fluid.poisson_tol = 1e-12;
  ec.fluid.poisson_max_iter = 5000;
  env::Environment environment(ec);
  env::ForcingSchedule nof;

  env::Objective obj;
  obj.x_obj = Vec2{55.0, 60.0};

  // A short constant push gives the start state some motion.
  env::SimState start = environment.reset();
  const Value warm = Value::constant(Tensor::vec2(2.0, 1.0));
  const Value zt = Value::constant(0.0);
  for (int k = 0; k < 3; ++k) start = environment.step(start, warm, zt, nof);
  REQUIRE(!start.terminated);

  losses::LossWeights w = losses::LossWeights::for_dof(2);
  w.l = 4;

  // Steps after the first hold this fixed effort in every evaluation.
  const Vec2 rest{2.0, 1.0};
  auto window_loss = [&](Vec2 first) {
    env::SimState s = start;
    losses::WindowTrace trace;
    trace.f_prev = s.last_force;
    trace.t_prev = s.last_torque;
    for (int k = 0; k < 4; ++k) {
      const Vec2 f = k == 0 ? first : rest;
      s = environment.step(s, Value::constant(Tensor::vec2(f.x, f.y)), zt, nof);
      REQUIRE(!s.terminated);
      trace.steps.push_back(losses::window_step(s, obj));
    }
    return losses::total_loss(trace, w).total.tensor().item();
  };

  ad::Tape tape;
  Value first = tape.leaf(Tensor::vec2(2.0, 1.0));
  {
    env::SimState s = start;
    losses::WindowTrace trace;
    trace.f_prev = s.last_force;
    trace.t_prev = s.last_torque;
    for (int k = 0; k < 4; ++k) {
      Value f = k == 0 ? first : Value::constant(Tensor::vec2(rest.x, rest.y));
      s = environment.step(s, f, zt, nof);
      REQUIRE(!s.terminated);
      trace.steps.push_back(losses::window_step(s, obj));
    }
    tape.backward(losses::total_loss(trace, w).total);
  }
  Tensor g = tape.grad(first);
  REQUIRE(g.size() == 2);

  const double eps = 1e-4;
  for (int c = 0; c < 2; ++c) {
    Vec2 hi = rest, lo = rest;
    (c == 0 ? hi.x : hi.y) += eps;
    (c == 0 ? lo.x : lo.y) -= eps;
    const double fd = (window_loss(hi) - window_loss(lo)) / (2.0 * eps);
    const double rel = std::abs(g[c] - fd) / std::max(std::abs(fd), 1e-12);
    INFO("component ", c, " analytic ", g[c], " fd ", fd);
    CHECK(rel < 1e-3);
  }
}

// ---------------------------------------------------------------------------
// Supervised data generation

TEST_CASE("the dataset split holds out whole simulations") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 24;

  DatasetPair p = generate_supervised_dataset(ec, 5, 30, 3);
  CHECK(p.train.z_dim == 16);
  CHECK(p.val.z_dim == 16);
  CHECK(p.train.count() == 4 * 30);  // one simulation of five held out
  CHECK(p.val.count() == 30);
  for (double v : p.train.targets) CHECK(std::isfinite(v));
  for (double v : p.train.z) CHECK(std::isfinite(v));
  // Torque targets vanish for a two degree of freedom body.
  for (int i = 0; i < p.train.count(); ++i) CHECK(p.train.targets[static_cast<size_t>(i) * 3 + 2] == 0.0);

  DatasetPair q = generate_supervised_dataset(ec, 10, 6, 3);
  CHECK(q.train.count() == 8 * 6);  // n/5 simulations held out
  CHECK(q.val.count() == 2 * 6);

  CHECK_THROWS_AS(generate_supervised_dataset(ec, 1, 30, 3), std::invalid_argument);
  CHECK_THROWS_AS(generate_supervised_dataset(ec, 5, 1, 3), std::invalid_argument);
}

TEST_CASE("holding the pose yields efforts that exactly cancel the fluid force") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BuoyNR);
  ec.nx = ec.ny = 32;
  env::Environment environment(ec);
  env::ForcingSchedule nof;
  const Vec2 home{40.0, 40.0};

  // Kinematic hold: zero acceleration, so the implied effort is minus the
  // fluid force sampled that step.
  std::vector<Vec2> efforts;
  double peak = 0.0;
  {
    env::SimState s = environment.reset();
    for (int k = 0; k < 10; ++k) {
      env::StepInfo si;
      s = environment.step_kinematic(s, home, 0.0, &si);
      efforts.push_back(Vec2{-si.fluid_force.x, -si.fluid_force.y});
      peak = std::max(peak, si.fluid_force.norm());
    }
  }
  CHECK(peak > 0.0);  // buoyancy makes the cancellation nontrivial

  // Dynamic replay of those efforts keeps the body exactly at rest: the
  // recomputed fluid force matches bit for bit and the sum cancels.
  env::SimState s = environment.reset();
  for (const Vec2& f : efforts) {
    s = environment.step(s, Value::constant(Tensor::vec2(f.x, f.y)), Value::constant(0.0), nof);
    REQUIRE(!s.terminated);
    CHECK(env::to_vec2(s.body.x).x == home.x);
    CHECK(env::to_vec2(s.body.x).y == home.y);
    CHECK(env::to_vec2(s.body.v).x == 0.0);
    CHECK(env::to_vec2(s.body.v).y == 0.0);
  }
}

TEST_CASE("dynamic replay of kinematic efforts retraces the path") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 32;
  env::Environment environment(ec);
  env::ForcingSchedule nof;

  // Gentle enough that the implied efforts (added mass roughly doubles the
  // inertial part) stay inside the clamp; clamping would break the replay.
  const int N = 80;
  const double dt = ec.fluid.dt;
  const double m = ec.shape->mass();
  const Vec2 start{40.0, 40.0};
  const Vec2 goal{48.0, 45.0};
  std::vector<Vec2> X(static_cast<size_t>(N) + 1);
  for (int k = 0; k <= N; ++k)
    X[static_cast<size_t>(k)] = start + (goal - start) * quintic_blend(static_cast<double>(k) / N);

  std::vector<Vec2> efforts;
  {
    env::SimState s = environment.reset();
    for (int k = 0; k < N; ++k) {
      env::StepInfo si;
      s = environment.step_kinematic(s, X[static_cast<size_t>(k) + 1], 0.0, &si);
      const Vec2 xm1 = k == 0 ? X[0] : X[static_cast<size_t>(k) - 1];
      const Vec2 acc = (X[static_cast<size_t>(k) + 1] - X[static_cast<size_t>(k)] * 2.0 + xm1) * (1.0 / (dt * dt));
      efforts.push_back(acc * m - si.fluid_force);
    }
  }

  double max_effort = 0.0;
  for (const Vec2& f : efforts) max_effort = std::max(max_effort, std::max(std::abs(f.x), std::abs(f.y)));
  CHECK(max_effort < ec.f_max);  // replay never trips the clamp

  env::SimState s = environment.reset();
  double drift = 0.0;
  for (int k = 0; k < N; ++k) {
    const Vec2& f = efforts[static_cast<size_t>(k)];
    s = environment.step(s, Value::constant(Tensor::vec2(f.x, f.y)), Value::constant(0.0), nof);
    REQUIRE(!s.terminated);
    drift = std::max(drift, (env::to_vec2(s.body.x) - X[static_cast<size_t>(k) + 1]).norm());
  }
  INFO("peak drift ", drift);
  CHECK(drift < 1e-6);
}

// ---------------------------------------------------------------------------
// Supervised regression

TEST_CASE("supervised training memorizes a single sample") {
  Dataset one;
  one.z_dim = 16;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 16; ++k) one.z.push_back(u(rng));
  one.targets = {3.0, -2.0, 0.0};

  SupervisedConfig scfg;
  scfg.n_i = 4000;
  scfg.lr0 = 0.01;
  scfg.lr_half_every = 400;
  scfg.batch = 4;
  scfg.seed = 3;
  scfg.validate_every = 1000;

  SupervisedResult res = train_supervised(one, Dataset{}, scfg);
  REQUIRE(res.log.size() == 4000);
  INFO("final loss ", res.log.back().loss);
  CHECK(res.log.back().loss < 1e-6);
  // Without a validation split the best checkpoint is the last one.
  CHECK(res.validation.empty());
  for (size_t i = 0; i < res.best.weights.size(); ++i) CHECK(same_bits(res.best.weights[i], res.last.weights[i]));
  // The fitted network reproduces the target on the raw training input
  // (the forward pass applies the stored normalization itself).
  policy::TapedPolicy tp = policy::bind(nullptr, res.last);
  Tensor zt({16});
  for (int k = 0; k < 16; ++k) zt[k] = one.z[static_cast<size_t>(k)];
  Tensor out = policy::policy_forward(tp, Value::constant(zt)).tensor();
  CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(out[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("supervised training tracks validation and repeats bit for bit") {
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 24;
  DatasetPair p = generate_supervised_dataset(ec, 2, 20, 7);
  REQUIRE(p.train.count() == 20);
  REQUIRE(p.val.count() == 20);

  SupervisedConfig scfg;
  scfg.n_i = 60;
  scfg.lr_half_every = 30;
  scfg.batch = 8;
  scfg.seed = 13;
  scfg.validate_every = 20;

  SupervisedResult a = train_supervised(p.train, p.val, scfg);
  REQUIRE(a.log.size() == 60);
  // Validation at 0, 20, 40 and the final iteration.
  REQUIRE(a.validation.size() == 4);
  CHECK(a.validation[0].iteration == 0);
  CHECK(a.validation.back().iteration == 60);
  for (const ValidationPoint& v : a.validation) CHECK(std::isfinite(v.error));
  double best = a.validation[0].error;
  for (const ValidationPoint& v : a.validation) best = std::min(best, v.error);
  CHECK(best <= a.validation[0].error);

  SupervisedResult b = train_supervised(p.train, p.val, scfg);
  for (size_t i = 0; i < a.last.weights.size(); ++i) CHECK(same_bits(a.last.weights[i], b.last.weights[i]));
  for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);

  CHECK_THROWS_AS(train_supervised(Dataset{}, Dataset{}, scfg), std::invalid_argument);
  Dataset odd;
  odd.z_dim = 7;
  odd.z.resize(7);
  odd.targets.resize(3);
  CHECK_THROWS_AS(train_supervised(odd, Dataset{}, scfg), std::invalid_argument);
}
