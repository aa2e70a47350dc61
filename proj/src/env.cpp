// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/env/env.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

#include "fluidctl/ad/ops_extra.hpp"
#include "fluidctl/core/diag.hpp"

namespace fluidctl::env {

using ad::Tensor;
using fluid::Cell;
using fluid::FieldKind;
using fluid::GridSpec;

const char* env_id_name(EnvId id) {
  switch (id) {
    case EnvId::BaseNR: return "BaseNR";
    case EnvId::BuoyNR: return "BuoyNR";
    case EnvId::Base: return "Base";
    case EnvId::Inflow: return "Inflow";
    case EnvId::InBuoy: return "InBuoy";
    case EnvId::Hold: return "Hold";
  }
  return "?";
}

EnvId parse_env_id(const std::string& name) {
  static const EnvId all[] = {EnvId::BaseNR, EnvId::BuoyNR, EnvId::Base, EnvId::Inflow, EnvId::InBuoy, EnvId::Hold};
  for (EnvId id : all)
    if (name == env_id_name(id)) return id;
  std::string valid;
  for (EnvId id : all) {
    if (!valid.empty()) valid += ", ";
    valid += env_id_name(id);
  }
  throw std::invalid_argument("unknown environment \"" + name + "\" (valid: " + valid + ")");
}

void EnvironmentConfig::validate() const {
  if (dof != 2 && dof != 3) throw std::invalid_argument("env: dof must be 2 or 3");
  if (!shape) throw std::invalid_argument("env: body shape not set");
  if (nx < 8 || ny < 8) throw std::invalid_argument("env: grid must be at least 8x8");
  if (domain_size <= 0) throw std::invalid_argument("env: domain size must be positive");
  if (controller_sample_stride < 1) throw std::invalid_argument("env: controller stride must be at least 1");
  if (episode_length < 1) throw std::invalid_argument("env: episode length must be at least 1");
  if (f_max <= 0 || t_max <= 0) throw std::invalid_argument("env: effort limits must be positive");
  fluid.validate();
}

EnvironmentConfig make_environment(EnvId id) {
  EnvironmentConfig c;
  c.id = id;
  switch (id) {
    case EnvId::BaseNR:
      c.dof = 2;
      break;
    case EnvId::BuoyNR:
      c.dof = 2;
      c.buoyancy = true;
      break;
    case EnvId::Base:
      c.dof = 3;
      break;
    case EnvId::Inflow:
      c.dof = 3;
      c.inflow = true;
      break;
    case EnvId::InBuoy:
      c.dof = 3;
      c.inflow = true;
      c.buoyancy = true;
      break;
    case EnvId::Hold:
      c.dof = 3;
      c.inflow = true;
      c.buoyancy = true;
      c.forcing = true;
      break;
  }
  if (c.dof == 2) {
    c.shape = std::make_shared<body::BodyShape>(body::BodyShape::cylinder(5.0, 11.78));
  } else {
    c.shape = std::make_shared<body::BodyShape>(body::BodyShape::box(20.0, 6.0, 36.0, 4000.0));
  }
  // The inflow setups run at the higher Reynolds number with a halved time
  // step; the controller then acts every second solver step.
  c.fluid.re = c.inflow ? 3000.0 : 1000.0;
  c.fluid.dt = c.inflow ? 0.05 : 0.1;
  c.controller_sample_stride = c.inflow ? 2 : 1;
  return c;
}

// ---------------------------------------------------------------------------
// Schedules

const Objective& ObjectiveSchedule::current(double t) const {
  if (items.empty()) throw std::logic_error("env: empty objective schedule");
  const Objective* best = &items.front();
  for (const auto& o : items) {
    if (o.start_time > t) break;
    best = &o;
  }
  return *best;
}

void external_forcing(const ForcingSchedule& schedule, double t, Vec2* force, double* torque) {
  *force = Vec2{0.0, 0.0};
  *torque = 0.0;
  for (const auto& w : schedule.windows) {
    if (t >= w.t0 && t < w.t1) {
      *force += w.force;
      *torque += w.torque;
    }
  }
}

ForcingSchedule hold_forcing() {
  ForcingSchedule s;
  s.windows.push_back({100.0, 180.0, Vec2{25.0, 0.0}, 0.0});
  s.windows.push_back({250.0, 330.0, Vec2{0.0, 25.0}, 0.0});
  s.windows.push_back({380.0, 460.0, Vec2{0.0, 0.0}, 1000.0});
  return s;
}

ObjectiveSchedule sample_objectives(std::mt19937_64& rng, int count, double hold, int dof) {
  std::uniform_real_distribution<double> pos(25.0, 75.0);
  std::uniform_real_distribution<double> ang(-1.5707963267948966, 1.5707963267948966);
  ObjectiveSchedule s;
  for (int k = 0; k < count; ++k) {
    Objective o;
    o.start_time = k * hold;
    o.x_obj = Vec2{pos(rng), pos(rng)};
    o.alpha_obj = dof == 3 ? ang(rng) : 0.0;
    s.items.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Environment

SimState detach(const SimState& s) {
  auto det = [](const Value& v) {
    Value d;
    d.data = v.data;
    return d;
  };
  SimState out = s;
  out.ux = det(s.ux);
  out.uy = det(s.uy);
  out.pressure = det(s.pressure);
  out.marker = det(s.marker);
  out.body.x = det(s.body.x);
  out.body.v = det(s.body.v);
  out.body.alpha = det(s.body.alpha);
  out.body.omega = det(s.body.omega);
  out.last_force = det(s.last_force);
  out.last_torque = det(s.last_torque);
  return out;
}

Environment::Environment(EnvironmentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const GridSpec g = cfg_.grid();
  samples_ = std::make_shared<const std::vector<body::ContourSample>>(cfg_.shape->contour(0.5 * g.dx));
  base_flags_ = cfg_.inflow ? fluid::FlagGrid::channel(g.nx, g.ny) : fluid::FlagGrid::closed_box(g.nx, g.ny);
  // Marker source candidates: a 10-unit-wide strip at the bottom center.
  // Cells the body currently covers are skipped at step time.
  const double mid = 0.5 * g.width();
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (g.cy(j) < 5.0 && std::abs(g.cx(i) - mid) <= 5.0) source_region_.push_back(j * g.nx + i);
    }
  }
  fluid::ensure_fluid_ops_registered();
  body::ensure_body_ops_registered();
  ad::ensure_extra_ops_registered();
}

SimState Environment::reset() const {
  const GridSpec g = cfg_.grid();
  SimState s;
  s.ux = Value::constant(Tensor({g.ny, g.nx + 1}));
  s.uy = Value::constant(Tensor({g.ny + 1, g.nx}));
  s.pressure = Value::constant(Tensor({g.ny, g.nx}));
  s.marker = Value::constant(Tensor({g.ny, g.nx}));
  s.flags = base_flags_;
  body::rasterize_body(*cfg_.shape, Vec2{40.0, 40.0}, 0.0, g, s.flags);
  s.body.x = Value::constant(Tensor::vec2(40.0, 40.0));
  s.body.v = Value::constant(Tensor::vec2(0.0, 0.0));
  s.body.alpha = Value::constant(0.0);
  s.body.omega = Value::constant(0.0);
  s.last_force = Value::constant(Tensor::vec2(0.0, 0.0));
  s.last_torque = Value::constant(0.0);
  return s;
}

namespace {

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (int i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

}  // namespace

Environment::FluidHalf Environment::fluid_half(const SimState& s) const {
  const GridSpec g = cfg_.grid();
  const double dt = cfg_.fluid.dt;

  auto step_cfg = std::make_shared<fluid::StepConfig>();
  step_cfg->flags = s.flags;
  step_cfg->grid = g;
  step_cfg->params = cfg_.fluid;
  if (cfg_.buoyancy) {
    for (int idx : source_region_) {
      if (s.flags.cells[static_cast<size_t>(idx)] == Cell::Fluid) step_cfg->source_cells.push_back(idx);
    }
  }
  FluidHalf out;
  step_cfg->stats_sink = &out.stats;

  out.body_cfg = std::make_shared<body::BodyConfig>();
  out.body_cfg->shape = cfg_.shape;
  out.body_cfg->samples = samples_;
  out.body_cfg->flags = s.flags;
  out.body_cfg->grid = g;
  out.body_cfg->dt = dt;

  auto bc1 = fluid::apply_bcs(step_cfg, s.ux, s.uy, s.body.v, s.body.omega, s.body.x);

  const double umax = std::max(max_abs(bc1.ux.tensor()), max_abs(bc1.uy.tensor()));
  out.cfl = umax * dt / g.dx;
  if (out.cfl > 1.0) diag::warnf("env: CFL number %.3g exceeds 1 at step %d", out.cfl, s.step_index);

  Value aux = fluid::advect(step_cfg, FieldKind::FaceX, bc1.ux, bc1.ux, bc1.uy);
  Value auy = fluid::advect(step_cfg, FieldKind::FaceY, bc1.uy, bc1.ux, bc1.uy);
  Value am = fluid::advect(step_cfg, FieldKind::Center, s.marker, bc1.ux, bc1.uy);
  Value m2 = cfg_.buoyancy ? fluid::marker_source(step_cfg, am) : am;

  Value dux = fluid::diffuse(step_cfg, FieldKind::FaceX, aux);
  Value duy = fluid::diffuse(step_cfg, FieldKind::FaceY, auy);
  Value by = cfg_.buoyancy ? fluid::buoyancy(step_cfg, duy, m2) : duy;

  auto bc2 = fluid::apply_bcs(step_cfg, dux, by, s.body.v, s.body.omega, s.body.x);
  auto pr = fluid::project(step_cfg, bc2.ux, bc2.uy);

  auto ft = body::force_torque(out.body_cfg, pr.p, s.body.x, s.body.alpha);

  out.ux = pr.ux;
  out.uy = pr.uy;
  out.p = pr.p;
  out.marker = m2;
  out.force = ft.force;
  out.torque = ft.torque;
  return out;
}

SimState Environment::step(const SimState& s, const Value& force, const Value& torque, const ForcingSchedule& forcing,
                           StepInfo* info) const {
  if (s.terminated) throw std::logic_error("env: cannot step a terminated state");
  if (!s.ux.valid() || !s.body.x.valid()) throw std::invalid_argument("env: uninitialized state");
  if (force.tensor().size() != 2) throw std::invalid_argument("env: control force must be a 2-vector");
  if (cfg_.dof == 3 && torque.tensor().size() != 1)
    throw std::invalid_argument("env: control torque must be a scalar");

  const GridSpec g = cfg_.grid();
  const double dt = cfg_.fluid.dt;

  // Effort limits. The clamp has a pass-through adjoint, so a policy pushing
  // past the bound still receives gradient through the saturated component.
  bool clamped = false;
  for (int k = 0; k < 2; ++k) {
    if (std::abs(force.tensor()[k]) > cfg_.f_max) clamped = true;
  }
  Value fc = ad::clamp_abs_op(force, cfg_.f_max);
  Value tc;
  if (cfg_.dof == 3) {
    if (std::abs(torque.tensor()[0]) > cfg_.t_max) clamped = true;
    tc = ad::clamp_abs_op(torque, cfg_.t_max);
  } else {
    tc = Value::constant(0.0);
  }
  if (clamped) {
    diag::warnf("env: control effort (%g, %g; %g) exceeds limits (%g; %g), clamping",
                force.tensor()[0], force.tensor()[1], cfg_.dof == 3 ? torque.tensor()[0] : 0.0, cfg_.f_max,
                cfg_.t_max);
  }

  FluidHalf fh = fluid_half(s);

  Vec2 fext;
  double text = 0.0;
  external_forcing(forcing, s.t, &fext, &text);

  Value f_tot = ad::add(fh.force, fc);
  if (fext.x != 0.0 || fext.y != 0.0) f_tot = ad::add(f_tot, Value::constant(Tensor::vec2(fext.x, fext.y)));
  Value t_tot;
  if (cfg_.dof == 3) {
    t_tot = ad::add(fh.torque, tc);
    if (text != 0.0) t_tot = ad::add(t_tot, Value::constant(text));
  } else {
    t_tot = Value::constant(0.0);
  }

  auto mo = body::integrate(fh.body_cfg, s.body.x, s.body.v, f_tot, s.body.alpha, s.body.omega, t_tot);

  SimState out;
  out.ux = fh.ux;
  out.uy = fh.uy;
  out.pressure = fh.p;
  out.marker = fh.marker;
  out.body.x = mo.x;
  out.body.v = mo.v;
  out.body.alpha = mo.alpha;
  out.body.omega = mo.omega;
  out.step_index = s.step_index + 1;
  out.t = out.step_index * dt;
  out.last_force = fc;
  out.last_torque = tc;

  // Rasterize at the new pose so the stored flags match the stored body
  // state. Failure means the body reached a prescribed cell: the episode is
  // over and the previous flags are kept for inspection. Rasterization sees
  // nothing once the body clears the grid in a single step, so the bounding
  // disk is checked first; otherwise a runaway body would sail on forever
  // with an empty footprint.
  out.flags = base_flags_;
  const Vec2 xn = to_vec2(mo.x);
  const double rb = cfg_.shape->is_cylinder() ? cfg_.shape->radius()
                                              : 0.5 * std::hypot(cfg_.shape->width(), cfg_.shape->height());
  const bool gone = !std::isfinite(xn.x) || !std::isfinite(xn.y) || xn.x + rb < 0.0 || xn.x - rb > g.width() ||
                    xn.y + rb < 0.0 || xn.y - rb > g.height();
  if (gone) {
    out.flags = s.flags;
    out.terminated = true;
    diag::warnf("env: body left the domain at step %d, episode terminated", out.step_index);
  } else {
    try {
      body::rasterize_body(*cfg_.shape, xn, to_scalar(mo.alpha), g, out.flags);
    } catch (const std::runtime_error&) {
      out.flags = s.flags;
      out.terminated = true;
      diag::warnf("env: body reached the domain boundary at step %d, episode terminated", out.step_index);
    }
  }

  if (info) {
    info->fluid_force = to_vec2(fh.force);
    info->fluid_torque = to_scalar(fh.torque);
    info->poisson = fh.stats;
    info->cfl = fh.cfl;
    info->clamped = clamped;
  }
  return out;
}

SimState Environment::step_kinematic(const SimState& s, Vec2 x_next, double alpha_next, StepInfo* info) const {
  if (s.terminated) throw std::logic_error("env: cannot step a terminated state");
  if (!s.ux.valid() || !s.body.x.valid()) throw std::invalid_argument("env: uninitialized state");

  const GridSpec g = cfg_.grid();
  const double dt = cfg_.fluid.dt;
  FluidHalf fh = fluid_half(s);

  // Backward-difference velocities match the dynamic integrator, which also
  // satisfies v' = (x' - x) / dt, so a dynamic replay of the implied efforts
  // reproduces the prescribed poses.
  const Vec2 x_cur = to_vec2(s.body.x);
  const double a_cur = to_scalar(s.body.alpha);

  SimState out;
  out.ux = fh.ux;
  out.uy = fh.uy;
  out.pressure = fh.p;
  out.marker = fh.marker;
  out.body.x = Value::constant(Tensor::vec2(x_next.x, x_next.y));
  out.body.v = Value::constant(Tensor::vec2((x_next.x - x_cur.x) / dt, (x_next.y - x_cur.y) / dt));
  out.body.alpha = Value::constant(alpha_next);
  out.body.omega = Value::constant((alpha_next - a_cur) / dt);
  out.step_index = s.step_index + 1;
  out.t = out.step_index * dt;
  out.last_force = s.last_force;
  out.last_torque = s.last_torque;
  out.flags = base_flags_;
  body::rasterize_body(*cfg_.shape, x_next, alpha_next, g, out.flags);

  if (info) {
    info->fluid_force = to_vec2(fh.force);
    info->fluid_torque = to_scalar(fh.torque);
    info->poisson = fh.stats;
    info->cfl = fh.cfl;
    info->clamped = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory logging

TrajectoryRow trajectory_row(const SimState& s, const Objective& obj, const StepInfo& info) {
  TrajectoryRow r;
  r.step = s.step_index;
  r.t = s.t;
  r.x = to_vec2(s.body.x);
  r.alpha = to_scalar(s.body.alpha);
  r.v = to_vec2(s.body.v);
  r.omega = to_scalar(s.body.omega);
  r.fc = to_vec2(s.last_force);
  r.tc = to_scalar(s.last_torque);
  r.x_obj = obj.x_obj;
  r.alpha_obj = obj.alpha_obj;
  r.f_fluid = info.fluid_force;
  r.t_fluid = info.fluid_torque;
  return r;
}

void write_trajectory_header(std::ostream& os) {
  os << "step,t,x,y,alpha,vx,vy,omega,Fc_x,Fc_y,Tc,x_obj,y_obj,alpha_obj,Ffluid_x,Ffluid_y,Tfluid\n";
}

void write_trajectory_row(std::ostream& os, const TrajectoryRow& r) {
  char buf[640];
  std::snprintf(buf, sizeof buf,
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                r.step, r.t, r.x.x, r.x.y, r.alpha, r.v.x, r.v.y, r.omega, r.fc.x, r.fc.y, r.tc, r.x_obj.x, r.x_obj.y,
                r.alpha_obj, r.f_fluid.x, r.f_fluid.y, r.t_fluid);
  os << buf;
}

}  // namespace fluidctl::env
