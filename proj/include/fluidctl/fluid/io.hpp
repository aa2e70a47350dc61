// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "fluidctl/ad/tensor.hpp"

namespace fluidctl::fluid {

//! Snapshot format for a single 2-D field.
//!
//! Layout: magic "FLD1", then u32 ny, u32 nx, u32 dtype (1 = f64), then
//! ny * nx doubles in row-major order. Integers and doubles are little
//! endian. Errors surface as std::runtime_error.
void write_field(const std::string& path, const ad::Tensor& t);
ad::Tensor read_field(const std::string& path);

}  // namespace fluidctl::fluid
