// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/cli/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fluidctl::cli {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw std::invalid_argument("config: " + where + ": " + what);
}

int parse_int(const std::string& v, const std::string& where) {
  char* end = nullptr;
  long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') bad(where, "expected an integer, got \"" + v + "\"");
  return static_cast<int>(x);
}

double parse_double(const std::string& v, const std::string& where) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') bad(where, "expected a number, got \"" + v + "\"");
  return x;
}

std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') bad(where, "expected a nonnegative integer, got \"" + v + "\"");
  return static_cast<std::uint64_t>(x);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void set_key(RunConfig* c, const std::string& sec, const std::string& key, const std::string& val,
             const std::string& where) {
  if (sec == "env") {
    if (key == "id") c->env = val;
    else if (key == "nx") c->nx = parse_int(val, where);
    else if (key == "ny") c->ny = parse_int(val, where);
    else if (key == "episode_length") c->episode_length = parse_int(val, where);
    else bad(where, "unknown key \"" + key + "\" in [env]");
  } else if (sec == "train") {
    if (key == "iters") c->iters = parse_int(val, where);
    else if (key == "horizon") c->horizon = parse_int(val, where);
    else if (key == "lr0") c->lr0 = parse_double(val, where);
    else if (key == "lr_half_every") c->lr_half_every = parse_int(val, where);
    else if (key == "ablation") c->ablation = val;
    else if (key == "validate_every") c->validate_every = parse_int(val, where);
    else if (key == "warmup_episodes") c->warmup_episodes = parse_int(val, where);
    else if (key == "validation_targets") c->validation_targets = parse_int(val, where);
    else if (key == "validation_time") c->validation_time = parse_double(val, where);
    else bad(where, "unknown key \"" + key + "\" in [train]");
  } else if (sec == "loss") {
    losses::LossWeights& w = c->weights;
    if (key == "beta_xy") w.beta_xy = parse_double(val, where);
    else if (key == "beta_alpha") w.beta_alpha = parse_double(val, where);
    else if (key == "beta_xdot") w.beta_xdot = parse_double(val, where);
    else if (key == "beta_alphadot") w.beta_alphadot = parse_double(val, where);
    else if (key == "beta_prox") w.beta_prox = parse_double(val, where);
    else if (key == "beta_f") w.beta_f = parse_double(val, where);
    else if (key == "beta_t") w.beta_t = parse_double(val, where);
    else if (key == "beta_df") w.beta_df = parse_double(val, where);
    else if (key == "beta_dt") w.beta_dt = parse_double(val, where);
    else bad(where, "unknown key \"" + key + "\" in [loss]");
  } else if (sec == "supervised") {
    if (key == "sims") c->sims = parse_int(val, where);
    else if (key == "steps") c->steps = parse_int(val, where);
    else if (key == "iters") c->sup_iters = parse_int(val, where);
    else if (key == "lr0") c->sup_lr0 = parse_double(val, where);
    else if (key == "lr_half_every") c->sup_lr_half_every = parse_int(val, where);
    else if (key == "batch") c->batch = parse_int(val, where);
    else if (key == "dataset") c->dataset = val;
    else bad(where, "unknown key \"" + key + "\" in [supervised]");
  } else if (sec == "eval") {
    if (key == "controllers") c->controllers = split_list(val);
    else if (key == "checkpoint") c->checkpoint = val;
    else if (key == "schedule") c->schedule = val;
    else if (key == "jobs") c->jobs = parse_int(val, where);
    else bad(where, "unknown key \"" + key + "\" in [eval]");
  } else if (sec == "run") {
    if (key == "seed") {
      c->seed = parse_u64(val, where);
      c->seed_explicit = true;
    } else if (key == "out") {
      c->out = val;
    } else {
      bad(where, "unknown key \"" + key + "\" in [run]");
    }
  } else {
    bad(where, "unknown section [" + sec + "]");
  }
}

}  // namespace

void load_config_text(const std::string& text, const std::string& origin, RunConfig* cfg) {
  std::stringstream in(text);
  std::string line, sec;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') bad(where, "unterminated section header");
      sec = trim(line.substr(1, line.size() - 2));
      if (sec.empty()) bad(where, "empty section name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) bad(where, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) bad(where, "empty key");
    if (sec.empty()) bad(where, "key before any [section]");
    set_key(cfg, sec, key, val, where);
  }
}

void load_config_file(const std::string& path, RunConfig* cfg) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  load_config_text(ss.str(), path, cfg);
}

std::string serialize_config(const RunConfig& cfg) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string s;
  s += "[env]\n";
  s += "id = " + cfg.env + "\n";
  s += "nx = " + std::to_string(cfg.nx) + "\n";
  s += "ny = " + std::to_string(cfg.ny) + "\n";
  s += "episode_length = " + std::to_string(cfg.episode_length) + "\n";
  s += "\n[train]\n";
  s += "iters = " + std::to_string(cfg.iters) + "\n";
  s += "horizon = " + std::to_string(cfg.horizon) + "\n";
  s += "lr0 = " + num(cfg.lr0) + "\n";
  s += "lr_half_every = " + std::to_string(cfg.lr_half_every) + "\n";
  s += "ablation = " + cfg.ablation + "\n";
  s += "validate_every = " + std::to_string(cfg.validate_every) + "\n";
  s += "warmup_episodes = " + std::to_string(cfg.warmup_episodes) + "\n";
  s += "validation_targets = " + std::to_string(cfg.validation_targets) + "\n";
  s += "validation_time = " + num(cfg.validation_time) + "\n";
  s += "\n[loss]\n";
  s += "beta_xy = " + num(cfg.weights.beta_xy) + "\n";
  s += "beta_alpha = " + num(cfg.weights.beta_alpha) + "\n";
  s += "beta_xdot = " + num(cfg.weights.beta_xdot) + "\n";
  s += "beta_alphadot = " + num(cfg.weights.beta_alphadot) + "\n";
  s += "beta_prox = " + num(cfg.weights.beta_prox) + "\n";
  s += "beta_f = " + num(cfg.weights.beta_f) + "\n";
  s += "beta_t = " + num(cfg.weights.beta_t) + "\n";
  s += "beta_df = " + num(cfg.weights.beta_df) + "\n";
  s += "beta_dt = " + num(cfg.weights.beta_dt) + "\n";
  s += "\n[supervised]\n";
  s += "sims = " + std::to_string(cfg.sims) + "\n";
  s += "steps = " + std::to_string(cfg.steps) + "\n";
  s += "iters = " + std::to_string(cfg.sup_iters) + "\n";
  s += "lr0 = " + num(cfg.sup_lr0) + "\n";
  s += "lr_half_every = " + std::to_string(cfg.sup_lr_half_every) + "\n";
  s += "batch = " + std::to_string(cfg.batch) + "\n";
  s += "dataset = " + cfg.dataset + "\n";
  s += "\n[eval]\n";
  std::string ctl;
  for (const std::string& c : cfg.controllers) {
    if (!ctl.empty()) ctl += ",";
    ctl += c;
  }
  s += "controllers = " + ctl + "\n";
  s += "checkpoint = " + cfg.checkpoint + "\n";
  s += "schedule = " + cfg.schedule + "\n";
  s += "jobs = " + std::to_string(cfg.jobs) + "\n";
  s += "\n[run]\n";
  s += "seed = " + std::to_string(cfg.seed) + "\n";
  s += "out = " + cfg.out + "\n";
  return s;
}

void apply_seed_fallback(RunConfig* cfg) {
  if (cfg->seed_explicit) return;
  const char* env = std::getenv("FLUIDCTL_SEED");
  if (!env) return;
  cfg->seed = parse_u64(env, "FLUIDCTL_SEED");
  cfg->seed_explicit = true;
}

}  // namespace fluidctl::cli
