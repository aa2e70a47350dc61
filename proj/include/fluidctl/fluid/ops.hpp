// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "fluidctl/ad/tape.hpp"
#include "fluidctl/fluid/grid.hpp"
#include "fluidctl/fluid/kernels.hpp"

namespace fluidctl::fluid {

using ad::Value;

//! Immutable context shared by the fluid operators of one simulation step.
//! The flag grid is a per-step snapshot that already contains the rasterized
//! body, so the operators themselves stay pure functions of their tensors.
struct StepConfig {
  FlagGrid flags;
  GridSpec grid;
  FluidParams params;
  std::vector<int> source_cells;       // linear cell indices pinned to 1 by marker_source
  PoissonStats* stats_sink = nullptr;  // receives forward projection stats when set
};

using StepRef = std::shared_ptr<const StepConfig>;

// Taped entry points. Inputs may be detached constants; the result follows
// the usual tape rules and is bit-identical either way.

struct BcOut {
  Value ux, uy;
};

//! body_vel is a 2-vector, body_omega a scalar, body_center a 2-vector.
//! With no obstacle cells in the flags they are inert pass-through inputs.
BcOut apply_bcs(const StepRef& cfg, const Value& ux, const Value& uy, const Value& body_vel, const Value& body_omega,
                const Value& body_center);

Value advect(const StepRef& cfg, FieldKind kind, const Value& field, const Value& ux, const Value& uy);

Value diffuse(const StepRef& cfg, FieldKind kind, const Value& f);

Value buoyancy(const StepRef& cfg, const Value& uy, const Value& marker);

struct ProjectVals {
  Value ux, uy, p;
};

ProjectVals project(const StepRef& cfg, const Value& ux, const Value& uy);

Value marker_source(const StepRef& cfg, const Value& m);

//! Registers the fluid adjoints with a registry. The global variant may be
//! called any number of times.
void register_fluid_ops(ad::AdjointRegistry& reg);
void ensure_fluid_ops_registered();

}  // namespace fluidctl::fluid
