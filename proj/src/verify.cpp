// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/cli/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <random>

#include "fluidctl/baselines/baselines.hpp"
#include "fluidctl/body/body.hpp"
#include "fluidctl/env/env.hpp"
#include "fluidctl/fluid/kernels.hpp"
#include "fluidctl/losses/losses.hpp"
#include "fluidctl/policy/policy.hpp"

namespace fluidctl::cli {

namespace {

using ad::Tensor;
using ad::Value;

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

VerifyResult check_parameters() {
  VerifyResult r{"parameters", false, ""};
  const policy::PolicyConfig pc2 = policy::PolicyConfig::for_dof(2);
  const policy::PolicyConfig pc3 = policy::PolicyConfig::for_dof(3);
  const int n2 = policy::count_parameters(policy::init_policy(pc2, 0));
  const int n3 = policy::count_parameters(policy::init_policy(pc3, 0));
  const bool dims2 = pc2.input_dim == 16 && pc2.hidden == 38 && pc2.output_dim() == 2;
  const bool dims3 = pc3.input_dim == 32 && pc3.hidden == 32 && pc3.output_dim() == 3;
  r.pass = n2 == 2206 && dims2 && dims3;
  r.detail = fmt("2 dof [%d, %d, %d, %d] with %d parameters, 3 dof %d", pc2.input_dim, pc2.hidden, pc2.hidden,
                 pc2.output_dim(), n2, n3);
  return r;
}

VerifyResult check_projection() {
  VerifyResult r{"projection", false, ""};
  const int n = 64;
  fluid::GridSpec g{n, n, 100.0 / n};
  fluid::FlagGrid flags = fluid::FlagGrid::closed_box(n, n);
  const body::BodyShape box = body::BodyShape::box(20.0, 6.0, 36.0, 4000.0);
  body::rasterize_body(box, Vec2{50.0, 50.0}, 0.3, g, flags);

  fluid::FluidParams params;  // poisson_tol 1e-6, 2000 iterations
  std::mt19937 rng(7u);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto rnd = [&](int rows, int cols) {
    Tensor t({rows, cols});
    for (int i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
  };

  double worst = 0.0, secs = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor ux = rnd(g.ny, g.nx + 1), uy = rnd(g.ny + 1, g.nx);
    Tensor bux, buy;
    fluid::bc_forward(flags, g, params, fluid::BodyBc{}, ux, uy, bux, buy);
    Tensor pre = fluid::divergence_forward(bux, buy, flags, g);

    const auto t0 = std::chrono::steady_clock::now();
    fluid::PoissonStats st;
    fluid::ProjectOut out = fluid::project_forward(bux, buy, flags, g, params, &st);
    secs = std::max(secs, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    Tensor post = fluid::divergence_forward(out.ux, out.uy, flags, g);
    double mpre = 0.0, mpost = 0.0;
    for (int i = 0; i < pre.size(); ++i) mpre = std::max(mpre, std::abs(pre[i]));
    for (int i = 0; i < post.size(); ++i) mpost = std::max(mpost, std::abs(post[i]));
    worst = std::max(worst, mpost / mpre);
  }
  r.pass = worst < 1e-4 && secs < 1.0;
  r.detail = fmt("max divergence ratio %.3g (limit 1e-4), slowest solve %.3f s", worst, secs);
  return r;
}

VerifyResult check_gradient() {
  VerifyResult r{"gradient", false, ""};
  env::EnvironmentConfig ec = env::make_environment(env::EnvId::BaseNR);
  ec.nx = ec.ny = 32;
  // The FD baseline needs the projection converged far past the probe size.
  ec.fluid.poisson_tol = 1e-12;
  ec.fluid.poisson_max_iter = 5000;
  env::Environment environment(ec);
  const env::ForcingSchedule nof;
  const Value zt = Value::constant(0.0);

  losses::LossWeights w = losses::LossWeights::for_dof(2);
  w.l = 4;

  double worst = 0.0;
  for (uint32_t seed = 1; seed <= 2 && worst < 1e-3; ++seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    const Vec2 warm{dist(rng), dist(rng)};
    const Vec2 nominal{dist(rng), dist(rng)};
    env::Objective obj;
    obj.x_obj = Vec2{45.0 + 4.0 * dist(rng), 45.0 + 4.0 * dist(rng)};

    env::SimState start = environment.reset();
    for (int k = 0; k < 3; ++k)
      start = environment.step(start, Value::constant(Tensor::vec2(warm.x, warm.y)), zt, nof);

    auto window_loss = [&](Vec2 first) {
      env::SimState s = start;
      losses::WindowTrace trace;
      trace.f_prev = s.last_force;
      trace.t_prev = s.last_torque;
      for (int k = 0; k < 4; ++k) {
        const Vec2 f = k == 0 ? first : nominal;
        s = environment.step(s, Value::constant(Tensor::vec2(f.x, f.y)), zt, nof);
        trace.steps.push_back(losses::window_step(s, obj));
      }
      return losses::total_loss(trace, w).total.tensor().item();
    };

    ad::Tape tape;
    Value first = tape.leaf(Tensor::vec2(nominal.x, nominal.y));
    {
      env::SimState s = start;
      losses::WindowTrace trace;
      trace.f_prev = s.last_force;
      trace.t_prev = s.last_torque;
      for (int k = 0; k < 4; ++k) {
        Value f = k == 0 ? first : Value::constant(Tensor::vec2(nominal.x, nominal.y));
        s = environment.step(s, f, zt, nof);
        trace.steps.push_back(losses::window_step(s, obj));
      }
      tape.backward(losses::total_loss(trace, w).total);
    }
    const Tensor grad = tape.grad(first);

    const double eps = 1e-4;
    for (int c = 0; c < 2; ++c) {
      Vec2 hi = nominal, lo = nominal;
      (c == 0 ? hi.x : hi.y) += eps;
      (c == 0 ? lo.x : lo.y) -= eps;
      const double fd = (window_loss(hi) - window_loss(lo)) / (2.0 * eps);
      worst = std::max(worst, std::abs(grad[c] - fd) / std::max(std::abs(fd), 1e-12));
    }
  }
  r.pass = worst < 1e-3;
  r.detail = fmt("max relative error %.3g over 2 seeds (limit 1e-3)", worst);
  return r;
}

VerifyResult check_baselines() {
  VerifyResult r{"baselines", false, ""};
  const baselines::PIDGains g = baselines::pid_defaults(true).force;
  const baselines::LoopShapingCoeffs c = baselines::loopshaping_defaults();

  // The table rows, restated here so a regression in the library constants
  // cannot hide.
  const double table[5] = {1.1700924033918623, -1.4694211940919182, 0.30598060140064326, -1.2306775904257603,
                           0.26726488821832250};
  const double stored[5] = {c.n0, c.n1, c.n2, c.d1, c.d2};
  if (std::memcmp(table, stored, sizeof table) != 0) {
    r.detail = "loop-shaping coefficients differ from the table";
    return r;
  }

  baselines::ChannelMemory pm;
  baselines::LoopShapingMemory lm;
  double sum = 0.0, e_prev = 0.0;
  double e1 = 0.0, e2 = 0.0, u1 = 0.0, u2 = 0.0;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double e = std::sin(0.37 * k) + 0.002 * k;

    sum += e;
    const double pid_direct = g.p * e + g.d * (e - (k == 0 ? e : e_prev)) / 0.1 + 0.1 * g.i * sum;
    e_prev = e;
    worst = std::max(worst, std::abs(baselines::pid_step(g, e, pm) - pid_direct));

    const double ls_direct = c.n0 * e + c.n1 * e1 + c.n2 * e2 - c.d1 * u1 - c.d2 * u2;
    e2 = e1;
    e1 = e;
    u2 = u1;
    u1 = ls_direct;
    worst = std::max(worst, std::abs(baselines::loopshaping_step(c, e, lm) - ls_direct));
  }
  r.pass = worst <= 1e-12;
  r.detail = fmt("max deviation from direct evaluation %.3g over 100 steps (limit 1e-12)", worst);
  return r;
}

}  // namespace

std::vector<VerifyResult> run_verify_suites() {
  return {check_parameters(), check_projection(), check_gradient(), check_baselines()};
}

}  // namespace fluidctl::cli
