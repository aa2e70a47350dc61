// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/ad/ops_extra.hpp"

#include <algorithm>
#include <mutex>

#include "fluidctl/core/vec2.hpp"

namespace fluidctl::ad {

namespace {

class WrapAngleAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "ad.wrap_angle"; }
  int num_outputs() const override { return 1; }

  std::vector<Tensor> forward(const void*, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    Tensor out = *in[0];
    for (int i = 0; i < out.size(); ++i) out[i] = wrap_angle(out[i]);
    std::vector<Tensor> outs;
    outs.push_back(std::move(out));
    return outs;
  }

  void backward(const void*, const void*, const std::vector<const Tensor*>&, const std::vector<const Tensor*>& gout,
                std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    for (int i = 0; i < gin[0].size(); ++i) gin[0][i] += (*gout[0])[i];
  }
};

struct ClampConfig {
  double limit = 0.0;
};

class ClampAbsAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "ad.clamp_abs"; }
  int num_outputs() const override { return 1; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const double lim = static_cast<const ClampConfig*>(cfg)->limit;
    Tensor out = *in[0];
    for (int i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], -lim, lim);
    std::vector<Tensor> outs;
    outs.push_back(std::move(out));
    return outs;
  }

  void backward(const void*, const void*, const std::vector<const Tensor*>&, const std::vector<const Tensor*>& gout,
                std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    for (int i = 0; i < gin[0].size(); ++i) gin[0][i] += (*gout[0])[i];
  }
};

struct BroadcastConfig {
  int cols = 0;
};

class BroadcastColsAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "ad.broadcast_cols"; }
  int num_outputs() const override { return 1; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const Tensor& v = *in[0];
    if (v.rank() != 1) throw std::invalid_argument("broadcast_cols: expected a rank-1 input, got " + v.shape_str());
    const int m = static_cast<const BroadcastConfig*>(cfg)->cols;
    Tensor out({v.size(), m});
    for (int i = 0; i < v.size(); ++i)
      for (int j = 0; j < m; ++j) out.at(i, j) = v[i];
    std::vector<Tensor> outs;
    outs.push_back(std::move(out));
    return outs;
  }

  void backward(const void*, const void*, const std::vector<const Tensor*>&, const std::vector<const Tensor*>& gout,
                std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    const Tensor& g = *gout[0];
    for (int i = 0; i < gin[0].size(); ++i)
      for (int j = 0; j < g.cols(); ++j) gin[0][i] += g.at(i, j);
  }
};

const WrapAngleAdjoint kWrap;
const ClampAbsAdjoint kClamp;
const BroadcastColsAdjoint kBroadcast;

}  // namespace

Value wrap_angle_op(const Value& x) { return std::move(apply_custom(kWrap, nullptr, {x})[0]); }

Value clamp_abs_op(const Value& x, double limit) {
  auto cfg = std::make_shared<ClampConfig>(ClampConfig{limit});
  return std::move(apply_custom(kClamp, std::move(cfg), {x})[0]);
}

Value broadcast_cols(const Value& v, int m) {
  auto cfg = std::make_shared<BroadcastConfig>(BroadcastConfig{m});
  return std::move(apply_custom(kBroadcast, std::move(cfg), {v})[0]);
}

void register_extra_ops(AdjointRegistry& reg) {
  reg.add(&kWrap);
  reg.add(&kClamp);
  reg.add(&kBroadcast);
}

void ensure_extra_ops_registered() {
  static std::once_flag flag;
  std::call_once(flag, [] { register_extra_ops(AdjointRegistry::global()); });
}

}  // namespace fluidctl::ad
