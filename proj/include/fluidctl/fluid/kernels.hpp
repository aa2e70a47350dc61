// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fluidctl/ad/tensor.hpp"
#include "fluidctl/core/vec2.hpp"
#include "fluidctl/fluid/grid.hpp"

namespace fluidctl::fluid {

using ad::Tensor;

// Forward kernels paired with hand-written adjoints. Adjoints accumulate into
// their gradient outputs and recompute any intermediate state from the saved
// primal inputs, so no per-call context needs to be kept.

// ---------------------------------------------------------------------------
// Boundary conditions

//! Rigid body motion seen by the boundary condition pass.
struct BodyBc {
  bool present = false;
  Vec2 vel;
  double omega = 0.0;
  Vec2 center;
};

//! Imposes face velocities: outflow faces copy their interior neighbor,
//! wall faces are zeroed, inflow faces carry (inflow_speed, 0) and faces
//! adjacent to obstacle cells move with the rigid body.
void bc_forward(const FlagGrid& f, const GridSpec& g, const FluidParams& p, const BodyBc& body, const Tensor& ux,
                const Tensor& uy, Tensor& out_ux, Tensor& out_uy);

struct BcGrads {
  Vec2 vel;
  double omega = 0.0;
  Vec2 center;
};

void bc_backward(const FlagGrid& f, const GridSpec& g, const BodyBc& body, const Tensor& gout_ux,
                 const Tensor& gout_uy, Tensor& gux, Tensor& guy, BcGrads& gbody);

// ---------------------------------------------------------------------------
// Advection (semi-Lagrangian predictor, error-compensation corrector,
// stencil-bounded limiter)

Tensor advect_forward(FieldKind kind, const Tensor& field, const Tensor& ux, const Tensor& uy, const GridSpec& g,
                      double dt);

void advect_backward(FieldKind kind, const Tensor& field, const Tensor& ux, const Tensor& uy, const GridSpec& g,
                     double dt, const Tensor& gout, Tensor& gfield, Tensor& gux, Tensor& guy);

// ---------------------------------------------------------------------------
// Diffusion (explicit 5-point Laplacian; faces not strictly inside the fluid
// keep their boundary values)

Tensor diffuse_forward(FieldKind kind, const Tensor& f, const FlagGrid& flags, const GridSpec& g, double coef);

void diffuse_backward(FieldKind kind, const FlagGrid& flags, const GridSpec& g, double coef, const Tensor& gout,
                      Tensor& gf);

// ---------------------------------------------------------------------------
// Buoyancy (marker-weighted vertical acceleration)

Tensor buoyancy_forward(const Tensor& uy, const Tensor& marker, const FlagGrid& flags, double strength);

void buoyancy_backward(const FlagGrid& flags, double strength, const Tensor& gout, Tensor& guy, Tensor& gmarker);

// ---------------------------------------------------------------------------
// Divergence and pressure

Tensor divergence_forward(const Tensor& ux, const Tensor& uy, const FlagGrid& flags, const GridSpec& g);

void divergence_backward(const FlagGrid& flags, const GridSpec& g, const Tensor& gout, Tensor& gux, Tensor& guy);

struct PoissonStats {
  int iters = 0;
  double rel_residual = 0.0;
  bool converged = true;
};

//! Applies the variable-coefficient 5-point operator A = (k p - sum nb)/dx^2
//! on fluid cells. Neumann closure at wall/inflow/obstacle neighbors,
//! Dirichlet p = 0 at outflow neighbors.
Tensor apply_poisson_stencil(const Tensor& p, const FlagGrid& flags, const GridSpec& g);

//! Conjugate-gradient solve of A p = rhs with p = 0 on non-fluid cells.
//! Pure-Neumann systems are gauge-fixed by zero-mean projection of both the
//! right-hand side and the solution. Convergence is measured as
//! max|r| <= tol * max|rhs|.
Tensor poisson_solve(const Tensor& rhs, const FlagGrid& flags, const GridSpec& g, double tol, int max_iter,
                     PoissonStats* stats);

//! Solves Lap(p) = div (discrete 5-point Laplacian with the closures above).
Tensor pressure_solve(const Tensor& div, const FlagGrid& flags, const GridSpec& g, double tol, int max_iter,
                      PoissonStats* stats);

struct ProjectOut {
  Tensor ux, uy, p;
};

//! Chorin projection: solves for pressure and subtracts its gradient so the
//! velocity field is discretely divergence free on fluid cells.
ProjectOut project_forward(const Tensor& ux, const Tensor& uy, const FlagGrid& flags, const GridSpec& g,
                           const FluidParams& p, PoissonStats* stats);

//! Adjoint of the projection; reuses the same symmetric solve.
void project_backward(const FlagGrid& flags, const GridSpec& g, const FluidParams& p, const Tensor& gout_ux,
                      const Tensor& gout_uy, const Tensor* gout_p, Tensor& gux, Tensor& guy);

// ---------------------------------------------------------------------------
// Marker maintenance

//! Clamps the marker to [0, 1] and writes 1 into the listed source cells.
Tensor marker_source_forward(const Tensor& m, const std::vector<int>& source_cells);

void marker_source_backward(const Tensor& m, const std::vector<int>& source_cells, const Tensor& gout, Tensor& gm);

}  // namespace fluidctl::fluid
