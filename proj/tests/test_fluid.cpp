// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "doctest.h"
#include "fluidctl/ad/gradcheck.hpp"
#include "fluidctl/ad/tape.hpp"
#include "fluidctl/fluid/io.hpp"
#include "fluidctl/fluid/kernels.hpp"
#include "fluidctl/fluid/ops.hpp"

using namespace fluidctl;
using namespace fluidctl::fluid;
using ad::Tape;
using ad::Tensor;
using ad::Value;

namespace {

Tensor random_field(int rows, int cols, uint32_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t({rows, cols});
  for (int i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

//! Low-frequency field; keeps MacCormack limiter branches stable under FD.
Tensor smooth_field(int rows, int cols, double ax, double ay, double scale, double phase) {
  Tensor t({rows, cols});
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) t.at(j, i) = scale * std::sin(ax * i + phase) * std::cos(ay * j + 0.5 * phase);
  return t;
}

StepRef make_cfg(const FlagGrid& flags, const GridSpec& grid, FluidParams params,
                 std::vector<int> source_cells = {}) {
  auto cfg = std::make_shared<StepConfig>();
  cfg->flags = flags;
  cfg->grid = grid;
  cfg->params = params;
  cfg->source_cells = std::move(source_cells);
  return cfg;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("flag grid factories") {
  FlagGrid box = FlagGrid::closed_box(8, 8);
  CHECK(box.count(Cell::Fluid) == 36);
  CHECK(box.count(Cell::Wall) == 28);
  CHECK(box.at(0, 0) == Cell::Wall);
  CHECK(box.at(4, 4) == Cell::Fluid);

  FlagGrid ch = FlagGrid::channel(8, 8);
  CHECK(ch.count(Cell::Inflow) == 6);
  CHECK(ch.count(Cell::Outflow) == 6);
  CHECK(ch.at(3, 0) == Cell::Inflow);
  CHECK(ch.at(3, 7) == Cell::Outflow);
  CHECK(ch.at(0, 0) == Cell::Wall);
  CHECK(ch.at(0, 7) == Cell::Wall);
}

TEST_CASE("divergence of a linear ramp is one") {
  GridSpec g{16, 16, 0.5};
  FlagGrid flags = FlagGrid::closed_box(16, 16);
  Tensor ux({g.ny, g.nx + 1});
  Tensor uy({g.ny + 1, g.nx});
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) ux.at(j, i) = i * g.dx;  // d(ux)/dx = 1
  Tensor div = divergence_forward(ux, uy, flags, g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (flags.fluid(j, i))
        CHECK(div.at(j, i) == doctest::Approx(1.0).epsilon(1e-12));
      else
        CHECK(div.at(j, i) == 0.0);
    }
}

TEST_CASE("diffusion spreads a spike with the five point stencil") {
  GridSpec g{16, 16, 1.0};
  FlagGrid flags = FlagGrid::closed_box(16, 16);
  const double c = 0.1;
  Tensor f({g.ny, g.nx + 1});
  f.at(8, 8) = 1.0;
  Tensor out = diffuse_forward(FieldKind::FaceX, f, flags, g, c);
  CHECK(out.at(8, 8) == doctest::Approx(1.0 - 4 * c).epsilon(1e-14));
  CHECK(out.at(8, 7) == doctest::Approx(c).epsilon(1e-14));
  CHECK(out.at(8, 9) == doctest::Approx(c).epsilon(1e-14));
  CHECK(out.at(7, 8) == doctest::Approx(c).epsilon(1e-14));
  CHECK(out.at(9, 8) == doctest::Approx(c).epsilon(1e-14));
  CHECK(out.at(5, 5) == 0.0);

  SUBCASE("held faces keep their value") {
    Tensor h({g.ny, g.nx + 1});
    h.at(8, 1) = 2.0;  // face between wall cell (8,0) and fluid cell (8,1)
    Tensor oh = diffuse_forward(FieldKind::FaceX, h, flags, g, c);
    CHECK(oh.at(8, 1) == 2.0);
    // the free neighbor still sees the held value
    CHECK(oh.at(8, 2) == doctest::Approx(c * 2.0).epsilon(1e-14));
  }
}

TEST_CASE("buoyancy lifts marker weighted faces") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  Tensor uy({g.ny + 1, g.nx});
  Tensor marker({g.ny, g.nx});
  marker.fill(1.0);
  const double coeff = 0.5, dt = 0.1;
  Tensor out = buoyancy_forward(uy, marker, flags, coeff * dt);
  // interior face between two fluid cells
  CHECK(out.at(4, 4) == doctest::Approx(0.05).epsilon(1e-14));
  // face touching the wall ring stays zero
  CHECK(out.at(1, 4) == 0.0);
  CHECK(out.at(4, 0) == 0.0);
}

TEST_CASE("marker source clamps and pins sources") {
  Tensor m({2, 3}, {-0.5, 0.3, 1.7, 0.0, 1.0, 0.5});
  Tensor out = marker_source_forward(m, {3});
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.3);
  CHECK(out[2] == 1.0);
  CHECK(out[3] == 1.0);  // source cell
  CHECK(out[4] == 1.0);
  CHECK(out[5] == 0.5);
}

// ---------------------------------------------------------------------------
// Advection

TEST_CASE("grid aligned advection shifts exactly") {
  GridSpec g{32, 32, 1.0};
  Tensor ux({g.ny, g.nx + 1});
  Tensor uy({g.ny + 1, g.nx});
  ux.fill(1.0);
  Tensor field({g.ny, g.nx});
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double x = g.cx(i) - 16.0, y = g.cy(j) - 16.0;
      field.at(j, i) = std::exp(-(x * x + y * y) / 18.0);
    }
  Tensor out = advect_forward(FieldKind::Center, field, ux, uy, g, 1.0);
  // dt * u = dx: every sample lands exactly on the neighbor to the left.
  // The last column is excluded: its forward trace clamps at the array edge.
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i < g.nx - 1; ++i) CHECK(out.at(j, i) == doctest::Approx(field.at(j, i - 1)).epsilon(1e-14));
}

TEST_CASE("fractional advection tracks the translated gaussian") {
  GridSpec g{48, 48, 1.0};
  Tensor ux({g.ny, g.nx + 1});
  Tensor uy({g.ny + 1, g.nx});
  ux.fill(1.0);
  const double dt = 0.37;
  auto gauss = [&](double cx0) {
    Tensor t({g.ny, g.nx});
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const double x = g.cx(i) - cx0, y = g.cy(j) - 24.0;
        t.at(j, i) = std::exp(-(x * x + y * y) / 20.0);
      }
    return t;
  };
  Tensor field = gauss(20.0);
  Tensor exact = gauss(20.0 + dt);
  Tensor out = advect_forward(FieldKind::Center, field, ux, uy, g, dt);
  double err2 = 0.0, ref2 = 0.0;
  for (int i = 0; i < out.size(); ++i) {
    err2 += (out[i] - exact[i]) * (out[i] - exact[i]);
    ref2 += exact[i] * exact[i];
  }
  CHECK(std::sqrt(err2 / ref2) < 0.01);
}

TEST_CASE("maccormack limiter clips new extrema") {
  GridSpec g{8, 8, 1.0};
  Tensor ux({g.ny, g.nx + 1});
  Tensor uy({g.ny + 1, g.nx});
  ux.fill(0.4);
  Tensor field({g.ny, g.nx});
  field.at(4, 4) = 1.0;  // sharp spike forces corrector overshoot somewhere
  Tensor out = advect_forward(FieldKind::Center, field, ux, uy, g, 1.0);
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < out.size(); ++i) {
    lo = std::min(lo, out[i]);
    hi = std::max(hi, out[i]);
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
}

// ---------------------------------------------------------------------------
// Boundary conditions

TEST_CASE("bc prescribes wall, inflow, outflow and body faces") {
  GridSpec g{12, 12, 1.0};
  FluidParams p;
  p.inflow_speed = 1.0;

  SUBCASE("closed box zeroes wall adjacent faces") {
    FlagGrid flags = FlagGrid::closed_box(12, 12);
    Tensor ux = random_field(g.ny, g.nx + 1, 11);
    Tensor uy = random_field(g.ny + 1, g.nx, 12);
    Tensor oux, ouy;
    BodyBc body;
    bc_forward(flags, g, p, body, ux, uy, oux, ouy);
    CHECK(oux.at(5, 1) == 0.0);   // face of wall cell (5,0)
    CHECK(oux.at(5, 0) == 0.0);
    CHECK(ouy.at(1, 5) == 0.0);
    CHECK(oux.at(5, 5) == ux.at(5, 5));  // interior face untouched
  }

  SUBCASE("obstacle faces carry rigid body velocity") {
    FlagGrid flags = FlagGrid::closed_box(12, 12);
    flags.set(6, 6, Cell::Obstacle);
    Tensor ux({g.ny, g.nx + 1});
    Tensor uy({g.ny + 1, g.nx});
    BodyBc body;
    body.present = true;
    body.vel = {0.0, 0.0};
    body.omega = 0.1;
    body.center = {0.0, -3.5};  // face (6,6) sits at y = 6.5, lever arm 10
    Tensor oux, ouy;
    bc_forward(flags, g, p, body, ux, uy, oux, ouy);
    CHECK(oux.at(6, 6) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(oux.at(6, 7) == doctest::Approx(-1.0).epsilon(1e-12));
    // y faces pick up + omega * (x - cx)
    CHECK(ouy.at(6, 6) == doctest::Approx(0.1 * 6.5).epsilon(1e-12));
  }

  SUBCASE("channel copies outflow faces and drives inflow") {
    FlagGrid flags = FlagGrid::channel(12, 12);
    Tensor ux = random_field(g.ny, g.nx + 1, 13);
    Tensor uy = random_field(g.ny + 1, g.nx, 14);
    Tensor oux, ouy;
    BodyBc body;
    bc_forward(flags, g, p, body, ux, uy, oux, ouy);
    CHECK(oux.at(5, 0) == 1.0);
    CHECK(oux.at(5, 1) == 1.0);
    CHECK(ouy.at(5, 0) == 0.0);
    CHECK(oux.at(5, 12) == ux.at(5, 11));  // zero gradient out the right edge
    CHECK(ouy.at(5, 11) == uy.at(5, 10));
  }
}

// ---------------------------------------------------------------------------
// Pressure solve

namespace {

//! Dense Gaussian elimination on the compact fluid system, for small grids.
std::vector<double> dense_poisson(const FlagGrid& flags, const GridSpec& g, const std::vector<double>& rhs_cells,
                                  const std::vector<int>& cells) {
  const int n = static_cast<int>(cells.size());
  // column k of the matrix = stencil applied to the k-th unit field
  std::vector<double> a(static_cast<size_t>(n) * n);
  for (int k = 0; k < n; ++k) {
    Tensor unit({g.ny, g.nx});
    unit[cells[k]] = 1.0;
    Tensor col = apply_poisson_stencil(unit, flags, g);
    for (int r = 0; r < n; ++r) a[static_cast<size_t>(r) * n + k] = col[cells[r]];
  }
  std::vector<double> b = rhs_cells;
  // partial pivoting
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[static_cast<size_t>(r) * n + col]) > std::fabs(a[static_cast<size_t>(piv) * n + col])) piv = r;
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[static_cast<size_t>(col) * n + c], a[static_cast<size_t>(piv) * n + c]);
      std::swap(b[col], b[piv]);
    }
    const double d = a[static_cast<size_t>(col) * n + col];
    REQUIRE(std::fabs(d) > 1e-14);
    for (int r = col + 1; r < n; ++r) {
      const double f = a[static_cast<size_t>(r) * n + col] / d;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[static_cast<size_t>(r) * n + c] -= f * a[static_cast<size_t>(col) * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[static_cast<size_t>(r) * n + c] * x[c];
    x[r] = acc / a[static_cast<size_t>(r) * n + r];
  }
  return x;
}

std::vector<int> fluid_cells(const FlagGrid& flags) {
  std::vector<int> cells;
  for (int j = 0; j < flags.ny; ++j)
    for (int i = 0; i < flags.nx; ++i)
      if (flags.fluid(j, i)) cells.push_back(j * flags.nx + i);
  return cells;
}

}  // namespace

TEST_CASE("poisson stencil is symmetric") {
  GridSpec g{10, 10, 0.7};
  for (bool channel : {false, true}) {
    FlagGrid flags = channel ? FlagGrid::channel(10, 10) : FlagGrid::closed_box(10, 10);
    Tensor x = random_field(g.ny, g.nx, 21);
    Tensor y = random_field(g.ny, g.nx, 22);
    // zero the non fluid entries so the bilinear form only sees the system
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        if (!flags.fluid(j, i)) {
          x.at(j, i) = 0.0;
          y.at(j, i) = 0.0;
        }
    Tensor ax = apply_poisson_stencil(x, flags, g);
    Tensor ay = apply_poisson_stencil(y, flags, g);
    double xay = 0.0, yax = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      xay += x[i] * ay[i];
      yax += y[i] * ax[i];
    }
    CHECK(xay == doctest::Approx(yax).epsilon(1e-12));
  }
}

TEST_CASE("cg matches a dense direct solve on the channel") {
  GridSpec g{16, 16, 1.0};
  FlagGrid flags = FlagGrid::channel(16, 16);
  std::vector<int> cells = fluid_cells(flags);
  Tensor rhs = random_field(g.ny, g.nx, 31);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (!flags.fluid(j, i)) rhs.at(j, i) = 0.0;

  PoissonStats st;
  Tensor p = poisson_solve(rhs, flags, g, 1e-12, 2000, &st);
  CHECK(st.converged);

  std::vector<double> rhs_cells(cells.size());
  for (size_t k = 0; k < cells.size(); ++k) rhs_cells[k] = rhs[cells[k]];
  std::vector<double> xd = dense_poisson(flags, g, rhs_cells, cells);
  double md = 0.0;
  for (size_t k = 0; k < cells.size(); ++k) md = std::max(md, std::fabs(p[cells[k]] - xd[k]));
  CHECK(md < 1e-8);
}

TEST_CASE("pure neumann solve fixes the gauge and satisfies the system") {
  GridSpec g{16, 16, 1.0};
  FlagGrid flags = FlagGrid::closed_box(16, 16);
  std::vector<int> cells = fluid_cells(flags);
  Tensor rhs = random_field(g.ny, g.nx, 41);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (!flags.fluid(j, i)) rhs.at(j, i) = 0.0;

  PoissonStats st;
  Tensor p = poisson_solve(rhs, flags, g, 1e-12, 4000, &st);
  CHECK(st.converged);

  // zero mean gauge over the fluid cells
  double mean = 0.0;
  for (int c : cells) mean += p[c];
  mean /= static_cast<double>(cells.size());
  CHECK(std::fabs(mean) < 1e-12);

  // A p equals the rhs with its incompatible mean removed
  double rmean = 0.0;
  for (int c : cells) rmean += rhs[c];
  rmean /= static_cast<double>(cells.size());
  Tensor ap = apply_poisson_stencil(p, flags, g);
  double md = 0.0;
  for (int c : cells) md = std::max(md, std::fabs(ap[c] - (rhs[c] - rmean)));
  CHECK(md < 1e-9);
}

TEST_CASE("projection kills divergence to solver tolerance") {
  GridSpec g{32, 32, 100.0 / 32.0};
  FlagGrid flags = FlagGrid::closed_box(32, 32);
  FluidParams params;
  params.poisson_tol = 1e-6;

  Tensor ux = random_field(g.ny, g.nx + 1, 51);
  Tensor uy = random_field(g.ny + 1, g.nx, 52);
  Tensor bux, buy;
  BodyBc body;
  bc_forward(flags, g, params, body, ux, uy, bux, buy);

  Tensor pre = divergence_forward(bux, buy, flags, g);
  PoissonStats st;
  ProjectOut out = project_forward(bux, buy, flags, g, params, &st);
  Tensor post = divergence_forward(out.ux, out.uy, flags, g);

  CHECK(st.converged);
  CHECK(max_abs(post) < 10.0 * params.poisson_tol * max_abs(pre));

  SUBCASE("boundary faces are untouched by the correction") {
    CHECK(out.ux.at(5, 0) == bux.at(5, 0));
    CHECK(out.ux.at(5, 1) == bux.at(5, 1));
  }
}

TEST_CASE("projection in the channel uses the outflow dirichlet condition") {
  GridSpec g{24, 24, 1.0};
  FlagGrid flags = FlagGrid::channel(24, 24);
  FluidParams params;
  params.poisson_tol = 1e-8;

  Tensor ux = random_field(g.ny, g.nx + 1, 61, -0.5, 0.5);
  Tensor uy = random_field(g.ny + 1, g.nx, 62, -0.5, 0.5);
  for (int j = 0; j < g.ny; ++j) ux.at(j, 0) = 1.0;  // crude inflow
  Tensor bux, buy;
  BodyBc body;
  bc_forward(flags, g, params, body, ux, uy, bux, buy);

  Tensor pre = divergence_forward(bux, buy, flags, g);
  PoissonStats st;
  ProjectOut out = project_forward(bux, buy, flags, g, params, &st);
  Tensor post = divergence_forward(out.ux, out.uy, flags, g);
  CHECK(st.converged);
  CHECK(max_abs(post) < 10.0 * params.poisson_tol * max_abs(pre));
  // the face into the outflow column was corrected, so flux can leave
  bool moved = false;
  for (int j = 1; j < g.ny - 1; ++j)
    if (out.ux.at(j, 23) != bux.at(j, 23)) moved = true;
  CHECK(moved);
}

// ---------------------------------------------------------------------------
// Taped operators: record vs plain and adjoint checks

TEST_CASE("taped pipeline reproduces plain kernels bitwise") {
  GridSpec g{16, 16, 100.0 / 16.0};
  FlagGrid flags = FlagGrid::closed_box(16, 16);
  flags.set(8, 8, Cell::Obstacle);
  FluidParams params;
  auto cfg = make_cfg(flags, g, params, {17, 18});

  Tensor ux0 = random_field(g.ny, g.nx + 1, 71, -0.3, 0.3);
  Tensor uy0 = random_field(g.ny + 1, g.nx, 72, -0.3, 0.3);
  Tensor m0 = random_field(g.ny, g.nx, 73, 0.0, 1.0);
  Tensor vel = Tensor::vec2(0.2, -0.1);
  Tensor omega = Tensor::scalar(0.05);
  Tensor center = Tensor::vec2(53.0, 53.0);

  auto run = [&](bool taped) {
    Tape tape;
    auto lift = [&](const Tensor& t) { return taped ? tape.leaf(t) : Value::constant(t); };
    Value ux = lift(ux0), uy = lift(uy0), m = lift(m0);
    auto bc = apply_bcs(cfg, ux, uy, lift(vel), lift(omega), lift(center));
    Value ax = advect(cfg, FieldKind::FaceX, bc.ux, bc.ux, bc.uy);
    Value ay = advect(cfg, FieldKind::FaceY, bc.uy, bc.ux, bc.uy);
    Value am = advect(cfg, FieldKind::Center, m, bc.ux, bc.uy);
    Value sm = marker_source(cfg, am);
    Value dx = diffuse(cfg, FieldKind::FaceX, ax);
    Value dy = diffuse(cfg, FieldKind::FaceY, ay);
    Value by = buoyancy(cfg, dy, sm);
    auto pr = project(cfg, dx, by);
    std::vector<Tensor> outs = {pr.ux.tensor(), pr.uy.tensor(), pr.p.tensor(), sm.tensor()};
    return outs;
  };

  auto a = run(false);
  auto b = run(true);
  for (size_t k = 0; k < a.size(); ++k) CHECK(max_abs_diff(a[k], b[k]) == 0.0);
}

TEST_CASE("fluid op registry") {
  ensure_fluid_ops_registered();
  ensure_fluid_ops_registered();  // idempotent
  CHECK(ad::AdjointRegistry::global().contains("fluid.project"));
  CHECK(ad::AdjointRegistry::global().contains("fluid.apply_bcs"));
  CHECK(ad::AdjointRegistry::global().contains("fluid.advect"));
}

TEST_CASE("bc adjoint matches finite differences") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  flags.set(3, 3, Cell::Obstacle);
  flags.set(3, 4, Cell::Obstacle);
  flags.set(4, 3, Cell::Obstacle);
  flags.set(4, 4, Cell::Obstacle);
  FluidParams params;
  auto cfg = make_cfg(flags, g, params);

  std::vector<Tensor> pts = {random_field(g.ny, g.nx + 1, 81), random_field(g.ny + 1, g.nx, 82),
                             Tensor::vec2(0.3, -0.2), Tensor::scalar(0.4), Tensor::vec2(3.6, 4.1)};
  auto fn = [&](Tape&, const std::vector<Value>& v) {
    auto bc = apply_bcs(cfg, v[0], v[1], v[2], v[3], v[4]);
    return ad::add(ad::sum(ad::square(bc.ux)), ad::sum(ad::square(bc.uy)));
  };
  auto res = ad::grad_check(fn, pts);
  CAPTURE(res.max_rel_err);
  CHECK(res.ok(1e-5));
}

TEST_CASE("advect adjoint matches finite differences") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  FluidParams params;
  params.dt = 0.3;
  auto cfg = make_cfg(flags, g, params);

  for (FieldKind kind : {FieldKind::Center, FieldKind::FaceX}) {
    std::vector<Tensor> pts = {smooth_field(field_rows(kind, g), field_cols(kind, g), 0.6, 0.5, 0.8, 0.3),
                               smooth_field(g.ny, g.nx + 1, 0.4, 0.7, 0.6, 1.1),
                               smooth_field(g.ny + 1, g.nx, 0.5, 0.3, 0.6, 2.3)};
    auto fn = [&](Tape&, const std::vector<Value>& v) {
      return ad::sum(ad::square(advect(cfg, kind, v[0], v[1], v[2])));
    };
    auto res = ad::grad_check(fn, pts);
    CAPTURE(res.max_rel_err);
    CHECK(res.ok(1e-5));
  }
}

TEST_CASE("diffuse adjoint matches finite differences") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  FluidParams params;
  auto cfg = make_cfg(flags, g, params);
  auto fn = [&](Tape&, const std::vector<Value>& v) {
    return ad::sum(ad::square(diffuse(cfg, FieldKind::FaceY, v[0])));
  };
  auto res = ad::grad_check(fn, {random_field(g.ny + 1, g.nx, 91)});
  CHECK(res.ok(1e-5));
}

TEST_CASE("buoyancy adjoint matches finite differences") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  FluidParams params;
  auto cfg = make_cfg(flags, g, params);
  auto fn = [&](Tape&, const std::vector<Value>& v) {
    return ad::sum(ad::square(buoyancy(cfg, v[0], v[1])));
  };
  auto res = ad::grad_check(fn, {random_field(g.ny + 1, g.nx, 92), random_field(g.ny, g.nx, 93, 0.1, 0.9)});
  CHECK(res.ok(1e-5));
}

TEST_CASE("marker source adjoint matches finite differences") {
  GridSpec g{6, 6, 1.0};
  FlagGrid flags = FlagGrid::closed_box(6, 6);
  FluidParams params;
  auto cfg = make_cfg(flags, g, params, {7, 8});
  Tensor m = random_field(g.ny, g.nx, 94, 0.1, 0.9);
  m[14] = 1.6;   // clamped high, zero gradient
  m[15] = -0.4;  // clamped low
  auto fn = [&](Tape&, const std::vector<Value>& v) {
    return ad::sum(ad::square(marker_source(cfg, v[0])));
  };
  auto res = ad::grad_check(fn, {m});
  CHECK(res.ok(1e-5));
}

TEST_CASE("project adjoint matches finite differences") {
  GridSpec g{8, 8, 1.0};
  FluidParams params;
  params.poisson_tol = 1e-12;  // keeps solver truncation far below the probe

  SUBCASE("closed box") {
    FlagGrid flags = FlagGrid::closed_box(8, 8);
    auto cfg = make_cfg(flags, g, params);
    auto fn = [&](Tape&, const std::vector<Value>& v) {
      auto pr = project(cfg, v[0], v[1]);
      Value l = ad::add(ad::sum(ad::square(pr.ux)), ad::sum(ad::square(pr.uy)));
      return ad::add(l, ad::sum(ad::square(pr.p)));
    };
    auto res = ad::grad_check(fn, {random_field(g.ny, g.nx + 1, 95), random_field(g.ny + 1, g.nx, 96)});
    CAPTURE(res.max_rel_err);
    CHECK(res.ok(1e-3));
  }

  SUBCASE("channel") {
    FlagGrid flags = FlagGrid::channel(8, 8);
    auto cfg = make_cfg(flags, g, params);
    auto fn = [&](Tape&, const std::vector<Value>& v) {
      auto pr = project(cfg, v[0], v[1]);
      Value l = ad::add(ad::sum(ad::square(pr.ux)), ad::sum(ad::square(pr.uy)));
      return ad::add(l, ad::sum(ad::square(pr.p)));
    };
    auto res = ad::grad_check(fn, {random_field(g.ny, g.nx + 1, 97), random_field(g.ny + 1, g.nx, 98)});
    CAPTURE(res.max_rel_err);
    CHECK(res.ok(1e-3));
  }
}

TEST_CASE("gradients flow through a fluid substep chain") {
  GridSpec g{8, 8, 1.0};
  FlagGrid flags = FlagGrid::closed_box(8, 8);
  flags.set(4, 4, Cell::Obstacle);
  FluidParams params;
  params.poisson_tol = 1e-12;
  auto cfg = make_cfg(flags, g, params);

  std::vector<Tensor> pts = {smooth_field(g.ny, g.nx + 1, 0.5, 0.4, 0.3, 0.2),
                             smooth_field(g.ny + 1, g.nx, 0.6, 0.3, 0.3, 1.0), Tensor::vec2(0.25, -0.15),
                             Tensor::scalar(0.3), Tensor::vec2(4.5, 4.5)};
  auto fn = [&](Tape&, const std::vector<Value>& v) {
    auto bc = apply_bcs(cfg, v[0], v[1], v[2], v[3], v[4]);
    Value ax = advect(cfg, FieldKind::FaceX, bc.ux, bc.ux, bc.uy);
    Value ay = advect(cfg, FieldKind::FaceY, bc.uy, bc.ux, bc.uy);
    auto pr = project(cfg, ax, ay);
    return ad::add(ad::sum(ad::square(pr.ux)), ad::sum(ad::square(pr.uy)));
  };
  auto res = ad::grad_check(fn, pts, 1e-5, 3);
  CAPTURE(res.max_rel_err);
  CHECK(res.ok(1e-3));
}

// ---------------------------------------------------------------------------
// Field io

TEST_CASE("field io roundtrip is bitwise") {
  Tensor t = random_field(5, 7, 101, -10.0, 10.0);
  t.at(0, 0) = 0.1 + 0.2;  // not representable exactly, catches text truncation
  const std::string path = "/tmp/fluidctl_test_field.fld";
  write_field(path, t);
  Tensor r = read_field(path);
  REQUIRE(r.rows() == 5);
  REQUIRE(r.cols() == 7);
  CHECK(max_abs_diff(t, r) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("field io rejects malformed files") {
  const std::string path = "/tmp/fluidctl_test_bad.fld";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("not a field file", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_field(path), std::runtime_error);
  CHECK_THROWS_AS(read_field("/tmp/fluidctl_does_not_exist.fld"), std::runtime_error);
  std::remove(path.c_str());
}
