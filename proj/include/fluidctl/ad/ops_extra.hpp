// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fluidctl/ad/tape.hpp"

namespace fluidctl::ad {

//! Elementwise wrap to (-pi, pi]. The map is a shifted identity, so the
//! adjoint passes cotangents through unchanged.
Value wrap_angle_op(const Value& x);

//! Elementwise clamp to [-limit, limit] with a pass-through adjoint, so a
//! saturated controller still receives a descent direction.
Value clamp_abs_op(const Value& x, double limit);

//! Repeats a rank-1 vector (n) as every column of an (n, m) matrix; the
//! adjoint sums cotangents across columns. Used to add biases to batches.
Value broadcast_cols(const Value& v, int m);

void register_extra_ops(AdjointRegistry& reg);
void ensure_extra_ops_registered();

}  // namespace fluidctl::ad
