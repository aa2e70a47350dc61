// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/body/body.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

#include "fluidctl/core/diag.hpp"

namespace fluidctl::body {

// ---------------------------------------------------------------------------
// Geometry

BodyShape BodyShape::cylinder(double radius, double mass) {
  BodyShape s;
  s.cylinder_ = true;
  s.radius_ = radius;
  s.mass_ = mass;
  s.inertia_ = 0.5 * mass * radius * radius;
  return s;
}

BodyShape BodyShape::box(double width, double height, double mass, double inertia) {
  BodyShape s;
  s.cylinder_ = false;
  s.width_ = width;
  s.height_ = height;
  s.mass_ = mass;
  s.inertia_ = inertia;
  return s;
}

double BodyShape::sdf(Vec2 p, Vec2 center, double alpha) const {
  if (cylinder_) return (p - center).norm() - radius_;
  const Vec2 q = rotate(p - center, -alpha);
  const double qx = std::fabs(q.x) - 0.5 * width_;
  const double qy = std::fabs(q.y) - 0.5 * height_;
  if (qx <= 0.0 && qy <= 0.0) return std::max(qx, qy);
  return std::sqrt(std::max(qx, 0.0) * std::max(qx, 0.0) + std::max(qy, 0.0) * std::max(qy, 0.0));
}

std::vector<ContourSample> BodyShape::contour(double max_spacing) const {
  std::vector<ContourSample> out;
  if (cylinder_) {
    const double per = 2.0 * M_PI * radius_;
    const int n = std::max(8, static_cast<int>(std::ceil(per / max_spacing)));
    const double ds = per / n;
    for (int k = 0; k < n; ++k) {
      const double th = (k + 0.5) * 2.0 * M_PI / n;
      ContourSample s;
      s.q = {radius_ * std::cos(th), radius_ * std::sin(th)};
      s.nb = {std::cos(th), std::sin(th)};
      s.ds = ds;
      s.chi = cross(s.q, s.nb);
      out.push_back(s);
    }
    return out;
  }
  const double hw = 0.5 * width_, hh = 0.5 * height_;
  const Vec2 corners[4] = {{hw, -hh}, {hw, hh}, {-hw, hh}, {-hw, -hh}};
  const Vec2 normals[4] = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}};
  for (int e = 0; e < 4; ++e) {
    const Vec2 a = corners[e], b = corners[(e + 1) % 4];
    const double len = (b - a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len / max_spacing)));
    const double ds = len / n;
    for (int k = 0; k < n; ++k) {
      const double t = (k + 0.5) / n;
      ContourSample s;
      s.q = a + (b - a) * t;
      s.nb = normals[e];
      s.ds = ds;
      s.chi = cross(s.q, s.nb);
      out.push_back(s);
    }
  }
  return out;
}

void rasterize_body(const BodyShape& shape, Vec2 center, double alpha, const GridSpec& grid, FlagGrid& flags) {
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      if (shape.sdf({grid.cx(i), grid.cy(j)}, center, alpha) > 0.0) continue;
      if (!flags.fluid(j, i))
        throw std::runtime_error("body: rasterization reached a non fluid cell; the body left the open domain");
      flags.set(j, i, Cell::Obstacle);
    }
}

// ---------------------------------------------------------------------------
// Pressure sampling on the contour

namespace {

constexpr double kMinWeight = 1e-12;

//! Bilinear probe restricted to fluid cells, with renormalized weights.
struct Probe {
  int cell[4];
  double w[4];
  double dwx[4], dwy[4];  // weight derivatives with respect to the position
  int n = 0;
  double wsum = 0.0;
  bool usable() const { return n > 0 && wsum > kMinWeight; }
};

Probe probe_at(Vec2 p, const FlagGrid& flags, const GridSpec& g) {
  Probe pr;
  const double gx = (p.x - 0.5 * g.dx) / g.dx;
  const double gy = (p.y - 0.5 * g.dx) / g.dx;
  int i0 = std::clamp(static_cast<int>(std::floor(gx)), 0, g.nx - 2);
  int j0 = std::clamp(static_cast<int>(std::floor(gy)), 0, g.ny - 2);
  double fx = gx - i0, fy = gy - j0;
  const bool ddx = fx > 0.0 && fx < 1.0, ddy = fy > 0.0 && fy < 1.0;
  fx = std::clamp(fx, 0.0, 1.0);
  fy = std::clamp(fy, 0.0, 1.0);

  const int jj[4] = {j0, j0, j0 + 1, j0 + 1};
  const int ii[4] = {i0, i0 + 1, i0, i0 + 1};
  const double wv[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  // d w / d fx and d w / d fy, scaled by 1/dx when the fraction is active
  const double sx = ddx ? 1.0 / g.dx : 0.0;
  const double sy = ddy ? 1.0 / g.dx : 0.0;
  const double dwfx[4] = {-(1 - fy), (1 - fy), -fy, fy};
  const double dwfy[4] = {-(1 - fx), -fx, (1 - fx), fx};

  for (int k = 0; k < 4; ++k) {
    if (!flags.fluid(jj[k], ii[k])) continue;
    pr.cell[pr.n] = jj[k] * g.nx + ii[k];
    pr.w[pr.n] = wv[k];
    pr.dwx[pr.n] = dwfx[k] * sx;
    pr.dwy[pr.n] = dwfy[k] * sy;
    pr.wsum += wv[k];
    ++pr.n;
  }
  return pr;
}

double probe_value(const Probe& pr, const Tensor& p) {
  if (!pr.usable()) return 0.0;
  double acc = 0.0;
  for (int k = 0; k < pr.n; ++k) acc += pr.w[k] * p[pr.cell[k]];
  return acc / pr.wsum;
}

//! d(probe_value)/d(position) by the quotient rule.
Vec2 probe_pos_grad(const Probe& pr, const Tensor& p, double value) {
  Vec2 g{0.0, 0.0};
  if (!pr.usable()) return g;
  double nx = 0.0, ny = 0.0, dxsum = 0.0, dysum = 0.0;
  for (int k = 0; k < pr.n; ++k) {
    nx += pr.dwx[k] * p[pr.cell[k]];
    ny += pr.dwy[k] * p[pr.cell[k]];
    dxsum += pr.dwx[k];
    dysum += pr.dwy[k];
  }
  g.x = (nx - value * dxsum) / pr.wsum;
  g.y = (ny - value * dysum) / pr.wsum;
  return g;
}

Vec2 perp(Vec2 v) { return {-v.y, v.x}; }

}  // namespace

ForceTorque force_torque_forward(const Tensor& p, Vec2 center, double alpha,
                                 const std::vector<ContourSample>& samples, const FlagGrid& flags,
                                 const GridSpec& grid) {
  ForceTorque out;
  int dry = 0;
  for (const ContourSample& s : samples) {
    const Vec2 w = center + rotate(s.q, alpha);
    const Probe pr = probe_at(w, flags, grid);
    if (!pr.usable()) {
      ++dry;
      continue;
    }
    const double pv = probe_value(pr, p);
    const Vec2 nw = rotate(s.nb, alpha);
    out.force -= nw * (pv * s.ds);
    out.torque -= pv * s.chi * s.ds;
  }
  if (dry > 0) diag::warnf("body: %d contour nodes had no fluid cell in their stencil", dry);
  return out;
}

void force_torque_backward(const Tensor& p, Vec2 center, double alpha, const std::vector<ContourSample>& samples,
                           const FlagGrid& flags, const GridSpec& grid, Vec2 gforce, double gtorque, Tensor& gp,
                           Vec2& gcenter, double& galpha) {
  for (const ContourSample& s : samples) {
    const Vec2 w = center + rotate(s.q, alpha);
    const Probe pr = probe_at(w, flags, grid);
    if (!pr.usable()) continue;
    const double pv = probe_value(pr, p);
    const Vec2 nw = rotate(s.nb, alpha);

    // F -= pv * nw * ds ; T -= pv * chi * ds
    const double gpv = -gforce.dot(nw) * s.ds - gtorque * s.chi * s.ds;

    for (int k = 0; k < pr.n; ++k) gp[pr.cell[k]] += gpv * pr.w[k] / pr.wsum;

    const Vec2 gpos = probe_pos_grad(pr, p, pv) * gpv;
    gcenter += gpos;
    // world position w = center + R q, so dw/dalpha = perp(R q)
    galpha += gpos.dot(perp(rotate(s.q, alpha)));
    // normal rotation: dF/dalpha contribution of this node
    galpha += gforce.dot(perp(nw)) * (-pv * s.ds);
  }
}

// ---------------------------------------------------------------------------
// Motion integration

MotionOut integrate_motion(const MotionIn& in, double mass, double inertia, double dt) {
  MotionOut out;
  out.v = in.v + in.force * (dt / mass);
  out.x = in.x + out.v * dt;
  out.omega = in.omega + in.torque * (dt / inertia);
  out.alpha = wrap_angle(in.alpha + out.omega * dt);
  return out;
}

// ---------------------------------------------------------------------------
// Taped operators

namespace {

using ad::CustomAdjoint;

Vec2 vec_of(const Tensor& t) { return {t[0], t[1]}; }

class ForceTorqueAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "body.force_torque"; }
  int num_outputs() const override { return 2; }

  std::vector<Tensor> forward(const void* cfgv, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const auto& c = *static_cast<const BodyConfig*>(cfgv);
    ForceTorque ft = force_torque_forward(*in[0], vec_of(*in[1]), (*in[2])[0], *c.samples, c.flags, c.grid);
    std::vector<Tensor> outs;
    outs.push_back(Tensor::vec2(ft.force.x, ft.force.y));
    outs.push_back(Tensor::scalar(ft.torque));
    return outs;
  }

  void backward(const void* cfgv, const void*, const std::vector<const Tensor*>& in,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    const auto& c = *static_cast<const BodyConfig*>(cfgv);
    const Vec2 gf = gout[0] ? vec_of(*gout[0]) : Vec2{0.0, 0.0};
    const double gt = gout[1] ? (*gout[1])[0] : 0.0;
    Vec2 gcenter{0.0, 0.0};
    double galpha = 0.0;
    force_torque_backward(*in[0], vec_of(*in[1]), (*in[2])[0], *c.samples, c.flags, c.grid, gf, gt, gin[0], gcenter,
                          galpha);
    gin[1][0] += gcenter.x;
    gin[1][1] += gcenter.y;
    gin[2][0] += galpha;
  }
};

class IntegrateAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "body.integrate"; }
  int num_outputs() const override { return 4; }

  std::vector<Tensor> forward(const void* cfgv, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const auto& c = *static_cast<const BodyConfig*>(cfgv);
    MotionIn m;
    m.x = vec_of(*in[0]);
    m.v = vec_of(*in[1]);
    m.force = vec_of(*in[2]);
    m.alpha = (*in[3])[0];
    m.omega = (*in[4])[0];
    m.torque = (*in[5])[0];
    MotionOut o = integrate_motion(m, c.shape->mass(), c.shape->inertia(), c.dt);
    std::vector<Tensor> outs;
    outs.push_back(Tensor::vec2(o.x.x, o.x.y));
    outs.push_back(Tensor::vec2(o.v.x, o.v.y));
    outs.push_back(Tensor::scalar(o.alpha));
    outs.push_back(Tensor::scalar(o.omega));
    return outs;
  }

  void backward(const void* cfgv, const void*, const std::vector<const Tensor*>&,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    const auto& c = *static_cast<const BodyConfig*>(cfgv);
    const double dt = c.dt;
    const double m = c.shape->mass(), inertia = c.shape->inertia();
    for (int d = 0; d < 2; ++d) {
      const double gx = gout[0] ? (*gout[0])[d] : 0.0;
      const double gv = gout[1] ? (*gout[1])[d] : 0.0;
      const double gvp = gv + dt * gx;  // cotangent on v'
      gin[0][d] += gx;
      gin[1][d] += gvp;
      gin[2][d] += gvp * dt / m;
    }
    const double ga = gout[2] ? (*gout[2])[0] : 0.0;
    const double gw = gout[3] ? (*gout[3])[0] : 0.0;
    const double gwp = gw + dt * ga;  // cotangent on w'
    gin[3][0] += ga;
    gin[4][0] += gwp;
    gin[5][0] += gwp * dt / inertia;
  }
};

const ForceTorqueAdjoint kForceTorque;
const IntegrateAdjoint kIntegrate;

void require(const BodyRef& cfg) {
  if (!cfg || !cfg->shape || !cfg->samples) throw std::invalid_argument("body: incomplete body config");
}

}  // namespace

ForceTorqueVals force_torque(const BodyRef& cfg, const Value& p, const Value& center, const Value& alpha) {
  require(cfg);
  auto outs = ad::apply_custom(kForceTorque, cfg, {p, center, alpha});
  return {std::move(outs[0]), std::move(outs[1])};
}

MotionVals integrate(const BodyRef& cfg, const Value& x, const Value& v, const Value& force, const Value& alpha,
                     const Value& omega, const Value& torque) {
  require(cfg);
  auto outs = ad::apply_custom(kIntegrate, cfg, {x, v, force, alpha, omega, torque});
  return {std::move(outs[0]), std::move(outs[1]), std::move(outs[2]), std::move(outs[3])};
}

void register_body_ops(ad::AdjointRegistry& reg) {
  reg.add(&kForceTorque);
  reg.add(&kIntegrate);
}

void ensure_body_ops_registered() {
  static std::once_flag flag;
  std::call_once(flag, [] { register_body_ops(ad::AdjointRegistry::global()); });
}

}  // namespace fluidctl::body
