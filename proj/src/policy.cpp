// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "fluidctl/ad/ops_extra.hpp"

namespace fluidctl::policy {

void PolicyConfig::validate() const {
  if (dof != 2 && dof != 3) throw std::invalid_argument("policy: dof must be 2 or 3");
  if (n_p < 0) throw std::invalid_argument("policy: n_p must be nonnegative");
  if (hidden < 1) throw std::invalid_argument("policy: hidden width must be positive");
  if (input_dim < (n_p + 1) * frame_dim())
    throw std::invalid_argument("policy: input_dim too small for n_p + 1 frames");
  if (bounded && (f_max <= 0 || t_max <= 0))
    throw std::invalid_argument("policy: bounded outputs need positive effort scales");
}

PolicyConfig PolicyConfig::for_dof(int dof) {
  PolicyConfig c;
  c.dof = dof;
  if (dof == 2) {
    c.n_p = 1;
    c.input_dim = 16;
    c.hidden = 38;
  } else {
    c.n_p = 2;
    c.input_dim = 32;
    c.hidden = 32;
  }
  c.validate();
  return c;
}

void PolicyParams::validate() const {
  cfg.validate();
  if (weights.size() != 3 || biases.size() != 3) throw std::invalid_argument("policy: expected three layers");
  const int dims[4] = {cfg.input_dim, cfg.hidden, cfg.hidden, cfg.output_dim()};
  for (int k = 0; k < 3; ++k) {
    if (weights[k].rank() != 2 || weights[k].rows() != dims[k + 1] || weights[k].cols() != dims[k])
      throw std::invalid_argument("policy: layer " + std::to_string(k) + " weight shape mismatch");
    if (biases[k].size() != dims[k + 1])
      throw std::invalid_argument("policy: layer " + std::to_string(k) + " bias shape mismatch");
  }
  if (norm_mean.size() != cfg.input_dim || norm_std.size() != cfg.input_dim)
    throw std::invalid_argument("policy: normalization statistics must cover the input");
  for (int i = 0; i < norm_std.size(); ++i)
    if (!(norm_std[i] > 0)) throw std::invalid_argument("policy: normalization std must be positive");
}

PolicyParams init_policy(const PolicyConfig& cfg, uint64_t seed) {
  cfg.validate();
  PolicyParams p;
  p.cfg = cfg;
  std::mt19937_64 rng(seed);
  const int dims[4] = {cfg.input_dim, cfg.hidden, cfg.hidden, cfg.output_dim()};
  for (int k = 0; k < 3; ++k) {
    const int in = dims[k], out = dims[k + 1];
    const double s = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-s, s);
    Tensor w({out, in});
    for (int i = 0; i < w.size(); ++i) w[i] = u(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Tensor({out}));
  }
  p.norm_mean = Tensor({cfg.input_dim});
  p.norm_std = Tensor::full({cfg.input_dim}, 1.0);
  return p;
}

int count_parameters(const PolicyParams& p) {
  int n = 0;
  for (const Tensor& w : p.weights) n += w.size();
  for (const Tensor& b : p.biases) n += b.size();
  return n;
}

// ---------------------------------------------------------------------------
// Evaluation

TapedPolicy bind(ad::Tape* tape, const PolicyParams& p) {
  p.validate();
  TapedPolicy tp;
  tp.cfg = p.cfg;
  for (int k = 0; k < 3; ++k) {
    if (tape) {
      tp.weights.push_back(tape->leaf(p.weights[k]));
      tp.biases.push_back(tape->leaf(p.biases[k]));
    } else {
      tp.weights.push_back(Value::constant(p.weights[k]));
      tp.biases.push_back(Value::constant(p.biases[k]));
    }
  }
  tp.norm_mean = Value::constant(p.norm_mean);
  Tensor inv(p.norm_std.shape());
  for (int i = 0; i < inv.size(); ++i) inv[i] = 1.0 / p.norm_std[i];
  tp.norm_inv_std = Value::constant(std::move(inv));
  if (p.cfg.bounded) {
    Tensor s({p.cfg.output_dim()});
    s[0] = p.cfg.f_max;
    s[1] = p.cfg.f_max;
    if (p.cfg.dof == 3) s[2] = p.cfg.t_max;
    tp.scale = Value::constant(std::move(s));
  }
  return tp;
}

Value policy_forward(const TapedPolicy& tp, const Value& z) {
  if (z.tensor().size() != tp.cfg.input_dim)
    throw std::invalid_argument("policy: input length " + std::to_string(z.tensor().size()) + " does not match " +
                                std::to_string(tp.cfg.input_dim));
  Value h = ad::mul(ad::sub(z, tp.norm_mean), tp.norm_inv_std);
  h = ad::relu(ad::add(ad::matvec(tp.weights[0], h), tp.biases[0]));
  h = ad::relu(ad::add(ad::matvec(tp.weights[1], h), tp.biases[1]));
  Value out = ad::add(ad::matvec(tp.weights[2], h), tp.biases[2]);
  if (tp.cfg.bounded) out = ad::mul(ad::tanh(out), tp.scale);
  return out;
}

Value make_frame(const PolicyConfig& cfg, const env::SimState& s, const env::Objective& obj) {
  const Value neg_alpha = ad::mul(s.body.alpha, Value::constant(-1.0));
  const Value e_world = ad::sub(Value::constant(Tensor::vec2(obj.x_obj.x, obj.x_obj.y)), s.body.x);
  const Value e_xy = ad::rotate2d(e_world, neg_alpha);
  const Value v_body = ad::rotate2d(s.body.v, neg_alpha);
  const Value f_body = ad::rotate2d(s.last_force, neg_alpha);
  if (cfg.dof == 2) return ad::concat({e_xy, v_body, f_body});
  const Value e_alpha = ad::wrap_angle_op(ad::sub(Value::constant(obj.alpha_obj), s.body.alpha));
  return ad::concat({e_xy, v_body, f_body, e_alpha, s.body.omega, s.last_torque});
}

Value assemble_z(const PolicyConfig& cfg, const std::vector<Value>& frames_newest_first) {
  const int fd = cfg.frame_dim();
  std::vector<Value> parts;
  for (int k = 0; k <= cfg.n_p; ++k) {
    if (k < static_cast<int>(frames_newest_first.size())) {
      const Value& f = frames_newest_first[static_cast<size_t>(k)];
      if (f.tensor().size() != fd) throw std::invalid_argument("policy: frame length mismatch");
      parts.push_back(f);
    } else {
      parts.push_back(Value::constant(Tensor({fd})));
    }
  }
  const int pad = cfg.input_dim - (cfg.n_p + 1) * fd;
  if (pad > 0) parts.push_back(Value::constant(Tensor({pad})));
  return ad::concat(parts);
}

Efforts to_world_efforts(const PolicyConfig& cfg, const Value& out, const Value& alpha) {
  Efforts e;
  e.force = ad::rotate2d(ad::slice(out, 0, 2), alpha);
  e.torque = cfg.dof == 3 ? ad::slice(out, 2, 1) : Value::constant(0.0);
  return e;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'P', 'O', 'L', '1'};

[[noreturn]] void fail(const std::string& path, const char* why) {
  throw std::runtime_error("policy io: " + path + ": " + why);
}

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

void write_doubles(std::ofstream& f, const Tensor& t) {
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(sizeof(double)) * t.size());
}

void read_doubles(std::ifstream& f, Tensor& t) {
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(double)) * t.size());
}

}  // namespace

void save_policy(const std::string& path, const PolicyParams& p) {
  p.validate();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(path, "cannot open for writing");
  f.write(kMagic, 4);
  write_u32(f, 3);
  for (int k = 0; k < 3; ++k) {
    write_u32(f, static_cast<uint32_t>(p.weights[k].cols()));
    write_u32(f, static_cast<uint32_t>(p.weights[k].rows()));
  }
  for (int k = 0; k < 3; ++k) {
    write_doubles(f, p.weights[k]);
    write_doubles(f, p.biases[k]);
  }
  write_doubles(f, p.norm_mean);
  write_doubles(f, p.norm_std);
  const double scales[2] = {p.cfg.bounded ? p.cfg.f_max : 0.0, p.cfg.bounded ? p.cfg.t_max : 0.0};
  f.write(reinterpret_cast<const char*>(scales), sizeof scales);
  if (!f) fail(path, "write failed");
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  char magic[4];
  f.read(magic, 4);
  const uint32_t layers = read_u32(f);
  if (!f) fail(path, "truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(path, "bad magic");
  if (layers != 3) fail(path, "expected three layers");

  uint32_t in[3], out[3];
  for (int k = 0; k < 3; ++k) {
    in[k] = read_u32(f);
    out[k] = read_u32(f);
  }
  if (!f) fail(path, "truncated layer table");
  for (int k = 0; k < 3; ++k) {
    if (in[k] == 0 || out[k] == 0 || in[k] > 65536 || out[k] > 65536) fail(path, "implausible layer dims");
  }
  if (in[1] != out[0] || in[2] != out[1] || out[0] != out[1]) fail(path, "inconsistent layer chain");
  if (out[2] != 2 && out[2] != 3) fail(path, "unsupported output width");

  PolicyParams p;
  p.cfg.dof = out[2] == 2 ? 2 : 3;
  p.cfg.input_dim = static_cast<int>(in[0]);
  p.cfg.hidden = static_cast<int>(out[0]);
  p.cfg.n_p = std::max(0, p.cfg.input_dim / p.cfg.frame_dim() - 1);
  for (int k = 0; k < 3; ++k) {
    Tensor w({static_cast<int>(out[k]), static_cast<int>(in[k])});
    Tensor b({static_cast<int>(out[k])});
    read_doubles(f, w);
    read_doubles(f, b);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  p.norm_mean = Tensor({p.cfg.input_dim});
  p.norm_std = Tensor({p.cfg.input_dim});
  read_doubles(f, p.norm_mean);
  read_doubles(f, p.norm_std);
  double scales[2];
  f.read(reinterpret_cast<char*>(scales), sizeof scales);
  if (!f) fail(path, "truncated data");
  p.cfg.bounded = scales[0] > 0.0;
  if (p.cfg.bounded) {
    p.cfg.f_max = scales[0];
    p.cfg.t_max = scales[1];
  }
  p.validate();
  return p;
}

}  // namespace fluidctl::policy
