// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "fluidctl/ad/tape.hpp"
#include "fluidctl/core/vec2.hpp"
#include "fluidctl/fluid/grid.hpp"
#include "fluidctl/fluid/ops.hpp"

namespace fluidctl::body {

using ad::Tensor;
using ad::Value;
using fluid::Cell;
using fluid::FlagGrid;
using fluid::GridSpec;

//! Quadrature node on the body contour, expressed in the body frame.
//! chi = cross(q, nb) is the torque weight; it is rotation invariant, so
//! the angle only enters through the world position of the node.
struct ContourSample {
  Vec2 q;      // location relative to the center of mass
  Vec2 nb;     // outward unit normal
  double ds;   // arc length share
  double chi;  // cross(q, nb)
};

//! Rigid body geometry with an analytic signed distance function.
class BodyShape {
 public:
  static BodyShape cylinder(double radius, double mass);
  static BodyShape box(double width, double height, double mass, double inertia);

  double mass() const { return mass_; }
  double inertia() const { return inertia_; }
  bool is_cylinder() const { return cylinder_; }
  double radius() const { return radius_; }
  double width() const { return width_; }
  double height() const { return height_; }

  //! Signed distance from a world point, negative inside.
  double sdf(Vec2 p, Vec2 center, double alpha) const;

  //! Midpoint quadrature of the contour with spacing <= max_spacing.
  std::vector<ContourSample> contour(double max_spacing) const;

 private:
  bool cylinder_ = true;
  double radius_ = 0.0;
  double width_ = 0.0, height_ = 0.0;
  double mass_ = 0.0, inertia_ = 0.0;
};

//! Marks cells whose center lies inside the body as Obstacle. Throws when
//! the body overlaps a non-fluid cell, which means it reached the domain
//! boundary or another prescribed region.
void rasterize_body(const BodyShape& shape, Vec2 center, double alpha, const GridSpec& grid, FlagGrid& flags);

// ---------------------------------------------------------------------------
// Surface force and torque
//
// F = -sum p_k n_k ds_k and T = -sum p_k chi_k ds_k over the contour nodes.
// Pressure is sampled with a bilinear stencil restricted to fluid cells and
// renormalized; a node with no fluid cell in its stencil contributes zero.

struct ForceTorque {
  Vec2 force;
  double torque = 0.0;
};

ForceTorque force_torque_forward(const Tensor& p, Vec2 center, double alpha,
                                 const std::vector<ContourSample>& samples, const FlagGrid& flags,
                                 const GridSpec& grid);

//! Accumulates into gp / gcenter / galpha given cotangents on (F, T).
void force_torque_backward(const Tensor& p, Vec2 center, double alpha, const std::vector<ContourSample>& samples,
                           const FlagGrid& flags, const GridSpec& grid, Vec2 gforce, double gtorque, Tensor& gp,
                           Vec2& gcenter, double& galpha);

// ---------------------------------------------------------------------------
// Motion integration (semi-implicit Euler)
//
//   v' = v + dt F / m        x' = x + dt v'
//   w' = w + dt T / I        a' = wrap(a + dt w')
//
// The angle wrap is a shifted identity, so its derivative is one.

struct MotionIn {
  Vec2 x, v;
  Vec2 force;
  double alpha = 0.0, omega = 0.0, torque = 0.0;
};

struct MotionOut {
  Vec2 x, v;
  double alpha = 0.0, omega = 0.0;
};

MotionOut integrate_motion(const MotionIn& in, double mass, double inertia, double dt);

// ---------------------------------------------------------------------------
// Taped operators

//! Shared constant context for the body operators of one step.
struct BodyConfig {
  std::shared_ptr<const BodyShape> shape;
  std::shared_ptr<const std::vector<ContourSample>> samples;
  FlagGrid flags;  // per-step snapshot, same one the fluid operators use
  GridSpec grid;
  double dt = 0.0;
};

using BodyRef = std::shared_ptr<const BodyConfig>;

struct ForceTorqueVals {
  Value force;   // 2-vector
  Value torque;  // scalar
};

//! p is the pressure field, center a 2-vector, alpha a scalar.
ForceTorqueVals force_torque(const BodyRef& cfg, const Value& p, const Value& center, const Value& alpha);

struct MotionVals {
  Value x, v;          // 2-vectors
  Value alpha, omega;  // scalars
};

//! Inputs are [x, v, force, alpha, omega, torque]; a two degree of freedom
//! body simply passes constant zeros for the angular channel.
MotionVals integrate(const BodyRef& cfg, const Value& x, const Value& v, const Value& force, const Value& alpha,
                     const Value& omega, const Value& torque);

void register_body_ops(ad::AdjointRegistry& reg);
void ensure_body_ops_registered();

}  // namespace fluidctl::body
