// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace fluidctl::cli {

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;  // one-line measurement or failure reason
};

//! Desk-scale release gates: network parameter count and layer dims,
//! projection divergence reduction, window-loss gradients against finite
//! differences, and the classical controllers against direct formula
//! evaluation. Each suite is independent; all of them run even when an
//! earlier one fails.
std::vector<VerifyResult> run_verify_suites();

}  // namespace fluidctl::cli
