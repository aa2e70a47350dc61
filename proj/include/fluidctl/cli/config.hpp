// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluidctl/losses/losses.hpp"

namespace fluidctl::cli {

//! Merged settings of one command invocation. Defaults live here, a config
//! file overrides them, and command-line flags override the file. The same
//! struct serves every subcommand; each one reads the slice it needs.
struct RunConfig {
  // [env]
  std::string env;          // environment name; empty until set
  int nx = 0, ny = 0;       // grid override, 0 keeps the environment default
  int episode_length = 0;   // 0 keeps the environment default

  // [train]
  int iters = -1;           // negative selects the per-dof default
  int horizon = 16;
  double lr0 = 0.01;
  int lr_half_every = -1;   // negative selects the per-dof default
  std::string ablation = "OVE";
  int validate_every = 100;
  int warmup_episodes = 10;
  int validation_targets = 3;
  double validation_time = 40.0;

  // [loss]  (all-zero weights select the per-dof defaults)
  losses::LossWeights weights;

  // [supervised]
  int sims = 100;
  int steps = 500;
  int sup_iters = 150000;
  double sup_lr0 = 0.01;
  int sup_lr_half_every = 15000;
  int batch = 128;
  std::string dataset;      // prebuilt dataset path; empty = generate

  // [eval]
  std::vector<std::string> controllers;  // subset of {diff, sup, pid, ls}
  std::string checkpoint;
  std::string schedule = "default";      // default | hold | nshape
  int jobs = 1;

  // [run]
  std::uint64_t seed = 0;
  std::string out = "out";

  bool seed_explicit = false;  // set by file or flag; gates the env fallback
};

//! Applies "[section] / key = value" lines from path onto cfg. Lines that
//! are empty or start with '#' are skipped. Unknown sections or keys and
//! malformed values throw std::invalid_argument naming the line.
void load_config_file(const std::string& path, RunConfig* cfg);

//! Same parser fed from a string, for tests and the resolved-config echo.
void load_config_text(const std::string& text, const std::string& origin, RunConfig* cfg);

//! Full round-trippable rendering: parsing the result reproduces cfg.
std::string serialize_config(const RunConfig& cfg);

//! Seed resolution order: explicit flag or file value, else the
//! FLUIDCTL_SEED environment variable, else zero.
void apply_seed_fallback(RunConfig* cfg);

}  // namespace fluidctl::cli
