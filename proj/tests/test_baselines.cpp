// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fluidctl/baselines/baselines.hpp"

using namespace fluidctl;
using namespace fluidctl::baselines;
using ad::Tensor;
using ad::Value;

namespace {

env::SimState state_at(Vec2 x, double alpha) {
  env::SimState s;
  s.body.x = Value::constant(Tensor::vec2(x.x, x.y));
  s.body.v = Value::constant(Tensor::vec2(0.0, 0.0));
  s.body.alpha = Value::constant(alpha);
  s.body.omega = Value::constant(0.0);
  s.last_force = Value::constant(Tensor::vec2(0.0, 0.0));
  s.last_torque = Value::constant(0.0);
  return s;
}

}  // namespace

TEST_CASE("pid formula matches the hand oracle") {
  PIDGains g{1.0, 8.0, 0.001};
  ChannelMemory m;
  pid_step(g, 1.5, m);  // primes e_prev and the sum
  const double u = pid_step(g, 2.0, m);
  CHECK(std::abs(u - 42.00035) < 1e-12);
}

TEST_CASE("pid first step seeds the derivative silently") {
  PIDGains g{1.0, 8.0, 0.001};
  ChannelMemory m;
  const double u = pid_step(g, 1.0, m);
  CHECK(std::abs(u - 1.0001) < 1e-12);
}

TEST_CASE("pid with zero error history emits zero") {
  PIDGains g{2.0, 15.0, 0.001};
  ChannelMemory m;
  for (int k = 0; k < 5; ++k) CHECK(pid_step(g, 0.0, m) == 0.0);
}

TEST_CASE("pid is linear in the error sequence") {
  PIDGains g{2.0, 15.0, 0.001};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<double> errors;
  for (int k = 0; k < 50; ++k) errors.push_back(u(rng));

  const double c = 3.75;
  ChannelMemory a, b;
  for (double e : errors) {
    const double ua = pid_step(g, e, a);
    const double ub = pid_step(g, c * e, b);
    CHECK(ub == doctest::Approx(c * ua).epsilon(1e-12));
  }
}

TEST_CASE("loop shaping coefficients are stored bit exactly") {
  LoopShapingCoeffs c = loopshaping_defaults();
  CHECK(c.n0 == 1.1700924033918623);
  CHECK(c.n1 == -1.4694211940919182);
  CHECK(c.n2 == 0.30598060140064326);
  CHECK(c.d1 == -1.2306775904257603);
  CHECK(c.d2 == 0.26726488821832250);
}

TEST_CASE("loop shaping step response") {
  LoopShapingCoeffs c = loopshaping_defaults();
  LoopShapingMemory m;
  const double u0 = loopshaping_step(c, 1.0, m);
  CHECK(u0 == c.n0);
  const double u1 = loopshaping_step(c, 1.0, m);
  CHECK(std::abs(u1 - (c.n0 + c.n1 - c.d1 * u0)) < 1e-15);
  CHECK(u1 == doctest::Approx(1.14066).epsilon(1e-4));
}

TEST_CASE("loop shaping matches an independent recursion for 100 steps") {
  LoopShapingCoeffs c = loopshaping_defaults();
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);

  LoopShapingMemory m;
  double e1 = 0.0, e2 = 0.0, u1 = 0.0, u2 = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double e = dist(rng);
    const double got = loopshaping_step(c, e, m);
    const double want = c.n0 * e + c.n1 * e1 + c.n2 * e2 - c.d1 * u1 - c.d2 * u2;
    CHECK(got == want);
    e2 = e1;
    e1 = e;
    u2 = u1;
    u1 = want;
  }
}

TEST_CASE("memory reset reproduces identical replays") {
  PIDGains g{2.0, 15.0, 0.001};
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> errors;
  for (int k = 0; k < 20; ++k) errors.push_back(dist(rng));

  std::vector<double> first, second;
  ChannelMemory m;
  for (double e : errors) first.push_back(pid_step(g, e, m));
  m = ChannelMemory{};
  for (double e : errors) second.push_back(pid_step(g, e, m));
  CHECK(first == second);

  LoopShapingCoeffs c = loopshaping_defaults();
  LoopShapingMemory lm;
  std::vector<double> lfirst, lsecond;
  for (double e : errors) lfirst.push_back(loopshaping_step(c, e, lm));
  lm = LoopShapingMemory{};
  for (double e : errors) lsecond.push_back(loopshaping_step(c, e, lm));
  CHECK(lfirst == lsecond);
}

TEST_CASE("controller factory selects the gain rows") {
  env::EnvironmentConfig cyl = env::make_environment(env::EnvId::BaseNR);
  auto pid_cyl = make_baseline("pid", cyl);
  // First act on a unit x error: U = P e + 0.1 I e with the cylinder row.
  env::Objective obj{0.0, Vec2{41.0, 40.0}, 0.0};
  ControlSignal out = pid_cyl->act(state_at({40.0, 40.0}, 0.0), obj);
  CHECK(std::abs(out.force.x - (1.0 * 1.0 + 0.1 * 0.001 * 1.0)) < 1e-12);
  CHECK(out.force.y == 0.0);
  CHECK(out.torque == 0.0);

  env::EnvironmentConfig box = env::make_environment(env::EnvId::Base);
  auto pid_box = make_baseline("pid", box);
  env::Objective obj2{0.0, Vec2{41.0, 40.0}, 0.5};
  ControlSignal out2 = pid_box->act(state_at({40.0, 40.0}, 0.0), obj2);
  CHECK(std::abs(out2.force.x - (2.0 * 1.0 + 0.1 * 0.001 * 1.0)) < 1e-12);
  CHECK(std::abs(out2.torque - (100.0 * 0.5 + 0.1 * 0.01 * 0.5)) < 1e-12);

  CHECK_THROWS_AS(make_baseline("loopshaping", box), std::invalid_argument);
  CHECK_THROWS_AS(make_baseline("h-infinity", cyl), std::invalid_argument);
  auto ls = make_baseline("loopshaping", cyl);
  ControlSignal lout = ls->act(state_at({40.0, 40.0}, 0.0), obj);
  CHECK(lout.force.x == loopshaping_defaults().n0);
}

TEST_CASE("pid controller works in the body frame") {
  env::EnvironmentConfig box = env::make_environment(env::EnvId::Base);
  auto pid = make_baseline("pid", box);
  const double half_pi = 1.5707963267948966;
  env::Objective obj{0.0, Vec2{41.0, 40.0}, half_pi};
  // World error (1, 0) seen from a body at 90 degrees is (0, -1), so the
  // body-frame effort (0, -U) maps back to world (U, 0).
  ControlSignal out = pid->act(state_at({40.0, 40.0}, half_pi), obj);
  CHECK(out.force.x == doctest::Approx(2.0001).epsilon(1e-10));
  CHECK(out.force.y == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(out.torque == 0.0);  // at the objective angle
}

TEST_CASE("objective changes reset the controller memory") {
  env::EnvironmentConfig cyl = env::make_environment(env::EnvId::BaseNR);
  auto pid = make_baseline("pid", cyl);
  env::Objective a{0.0, Vec2{45.0, 40.0}, 0.0};
  pid->act(state_at({40.0, 40.0}, 0.0), a);
  pid->act(state_at({41.0, 40.0}, 0.0), a);

  // Same body pose, new objective: the derivative seeds fresh, so the
  // output is the pure first-step response to the new error.
  env::Objective b{100.0, Vec2{30.0, 40.0}, 0.0};
  ControlSignal out = pid->act(state_at({41.0, 40.0}, 0.0), b);
  CHECK(std::abs(out.force.x - (1.0 * -11.0 + 0.1 * 0.001 * -11.0)) < 1e-12);
}
