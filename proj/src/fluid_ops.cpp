// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/fluid/ops.hpp"

#include <mutex>
#include <stdexcept>

namespace fluidctl::fluid {

namespace {

using ad::CustomAdjoint;
using ad::Tensor;

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

//! Null cotangent entries mean zero; the dense kernels want real tensors.
Tensor dense_gout(const Tensor* g, const Tensor& like) { return g ? *g : zeros_like(like); }

// All fluid adjoints are stateless: the backward pass recomputes whatever
// intermediate context it needs from the node inputs, which is deterministic
// because the kernels are.

struct BcConfig {
  StepRef step;
};

class BcAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.apply_bcs"; }
  int num_outputs() const override { return 2; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const StepConfig& c = *static_cast<const BcConfig*>(cfg)->step;
    const BodyBc body = body_of(in);
    Tensor oux, ouy;
    bc_forward(c.flags, c.grid, c.params, body, *in[0], *in[1], oux, ouy);
    std::vector<Tensor> outs;
    outs.push_back(std::move(oux));
    outs.push_back(std::move(ouy));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>& in,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    const StepConfig& c = *static_cast<const BcConfig*>(cfg)->step;
    const BodyBc body = body_of(in);
    const Tensor gux = dense_gout(gout[0], *in[0]);
    const Tensor guy = dense_gout(gout[1], *in[1]);
    BcGrads gb;
    bc_backward(c.flags, c.grid, body, gux, guy, gin[0], gin[1], gb);
    gin[2][0] += gb.vel.x;
    gin[2][1] += gb.vel.y;
    gin[3][0] += gb.omega;
    gin[4][0] += gb.center.x;
    gin[4][1] += gb.center.y;
  }

 private:
  static BodyBc body_of(const std::vector<const Tensor*>& in) {
    BodyBc b;
    b.present = true;
    b.vel = {(*in[2])[0], (*in[2])[1]};
    b.omega = (*in[3])[0];
    b.center = {(*in[4])[0], (*in[4])[1]};
    return b;
  }
};

struct AdvectConfig {
  StepRef step;
  FieldKind kind = FieldKind::Center;
};

class AdvectAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.advect"; }
  int num_outputs() const override { return 1; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const auto& a = *static_cast<const AdvectConfig*>(cfg);
    const StepConfig& c = *a.step;
    std::vector<Tensor> outs;
    outs.push_back(advect_forward(a.kind, *in[0], *in[1], *in[2], c.grid, c.params.dt));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>& in,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    const auto& a = *static_cast<const AdvectConfig*>(cfg);
    const StepConfig& c = *a.step;
    advect_backward(a.kind, *in[0], *in[1], *in[2], c.grid, c.params.dt, *gout[0], gin[0], gin[1], gin[2]);
  }
};

struct DiffuseConfig {
  StepRef step;
  FieldKind kind = FieldKind::Center;
};

class DiffuseAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.diffuse"; }
  int num_outputs() const override { return 1; }

  static double coef(const StepConfig& c) { return c.params.nu() * c.params.dt / (c.grid.dx * c.grid.dx); }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const auto& d = *static_cast<const DiffuseConfig*>(cfg);
    const StepConfig& c = *d.step;
    std::vector<Tensor> outs;
    outs.push_back(diffuse_forward(d.kind, *in[0], c.flags, c.grid, coef(c)));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>&,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    const auto& d = *static_cast<const DiffuseConfig*>(cfg);
    const StepConfig& c = *d.step;
    diffuse_backward(d.kind, c.flags, c.grid, coef(c), *gout[0], gin[0]);
  }
};

struct BuoyancyConfig {
  StepRef step;
};

class BuoyancyAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.buoyancy"; }
  int num_outputs() const override { return 1; }

  static double strength(const StepConfig& c) { return c.params.buoyancy_coeff * c.params.dt; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const StepConfig& c = *static_cast<const BuoyancyConfig*>(cfg)->step;
    std::vector<Tensor> outs;
    outs.push_back(buoyancy_forward(*in[0], *in[1], c.flags, strength(c)));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>&,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    const StepConfig& c = *static_cast<const BuoyancyConfig*>(cfg)->step;
    buoyancy_backward(c.flags, strength(c), *gout[0], gin[0], gin[1]);
  }
};

struct ProjectConfig {
  StepRef step;
};

class ProjectAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.project"; }
  int num_outputs() const override { return 3; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const StepConfig& c = *static_cast<const ProjectConfig*>(cfg)->step;
    ProjectOut out = project_forward(*in[0], *in[1], c.flags, c.grid, c.params, c.stats_sink);
    std::vector<Tensor> outs;
    outs.push_back(std::move(out.ux));
    outs.push_back(std::move(out.uy));
    outs.push_back(std::move(out.p));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>& in,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    const StepConfig& c = *static_cast<const ProjectConfig*>(cfg)->step;
    const Tensor gux = dense_gout(gout[0], *in[0]);
    const Tensor guy = dense_gout(gout[1], *in[1]);
    project_backward(c.flags, c.grid, c.params, gux, guy, gout[2], gin[0], gin[1]);
  }
};

struct MarkerSourceConfig {
  StepRef step;
};

class MarkerSourceAdjoint final : public CustomAdjoint {
 public:
  std::string_view name() const override { return "fluid.marker_source"; }
  int num_outputs() const override { return 1; }

  std::vector<Tensor> forward(const void* cfg, const std::vector<const Tensor*>& in,
                              std::shared_ptr<void>*) const override {
    const StepConfig& c = *static_cast<const MarkerSourceConfig*>(cfg)->step;
    std::vector<Tensor> outs;
    outs.push_back(marker_source_forward(*in[0], c.source_cells));
    return outs;
  }

  void backward(const void* cfg, const void*, const std::vector<const Tensor*>& in,
                const std::vector<const Tensor*>& gout, std::vector<Tensor>& gin) const override {
    if (!gout[0]) return;
    const StepConfig& c = *static_cast<const MarkerSourceConfig*>(cfg)->step;
    marker_source_backward(*in[0], c.source_cells, *gout[0], gin[0]);
  }
};

const BcAdjoint kBc;
const AdvectAdjoint kAdvect;
const DiffuseAdjoint kDiffuse;
const BuoyancyAdjoint kBuoyancy;
const ProjectAdjoint kProject;
const MarkerSourceAdjoint kMarkerSource;

void require(const StepRef& cfg) {
  if (!cfg) throw std::invalid_argument("fluid: null step config");
}

}  // namespace

BcOut apply_bcs(const StepRef& cfg, const Value& ux, const Value& uy, const Value& body_vel, const Value& body_omega,
                const Value& body_center) {
  require(cfg);
  auto c = std::make_shared<BcConfig>(BcConfig{cfg});
  auto outs = ad::apply_custom(kBc, std::move(c), {ux, uy, body_vel, body_omega, body_center});
  return {std::move(outs[0]), std::move(outs[1])};
}

Value advect(const StepRef& cfg, FieldKind kind, const Value& field, const Value& ux, const Value& uy) {
  require(cfg);
  auto c = std::make_shared<AdvectConfig>(AdvectConfig{cfg, kind});
  return std::move(ad::apply_custom(kAdvect, std::move(c), {field, ux, uy})[0]);
}

Value diffuse(const StepRef& cfg, FieldKind kind, const Value& f) {
  require(cfg);
  auto c = std::make_shared<DiffuseConfig>(DiffuseConfig{cfg, kind});
  return std::move(ad::apply_custom(kDiffuse, std::move(c), {f})[0]);
}

Value buoyancy(const StepRef& cfg, const Value& uy, const Value& marker) {
  require(cfg);
  auto c = std::make_shared<BuoyancyConfig>(BuoyancyConfig{cfg});
  return std::move(ad::apply_custom(kBuoyancy, std::move(c), {uy, marker})[0]);
}

ProjectVals project(const StepRef& cfg, const Value& ux, const Value& uy) {
  require(cfg);
  auto c = std::make_shared<ProjectConfig>(ProjectConfig{cfg});
  auto outs = ad::apply_custom(kProject, std::move(c), {ux, uy});
  return {std::move(outs[0]), std::move(outs[1]), std::move(outs[2])};
}

Value marker_source(const StepRef& cfg, const Value& m) {
  require(cfg);
  auto c = std::make_shared<MarkerSourceConfig>(MarkerSourceConfig{cfg});
  return std::move(ad::apply_custom(kMarkerSource, std::move(c), {m})[0]);
}

void register_fluid_ops(ad::AdjointRegistry& reg) {
  reg.add(&kBc);
  reg.add(&kAdvect);
  reg.add(&kDiffuse);
  reg.add(&kBuoyancy);
  reg.add(&kProject);
  reg.add(&kMarkerSource);
}

void ensure_fluid_ops_registered() {
  static std::once_flag flag;
  std::call_once(flag, [] { register_fluid_ops(ad::AdjointRegistry::global()); });
}

}  // namespace fluidctl::fluid
