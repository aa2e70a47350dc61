// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#include "fluidctl/fluid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fluidctl/core/diag.hpp"

namespace fluidctl::fluid {

namespace {

void check_shape(const Tensor& t, int rows, int cols, const char* what) {
  if (t.rank() != 2 || t.rows() != rows || t.cols() != cols)
    throw std::invalid_argument(std::string("fluid: ") + what + ": expected (" + std::to_string(rows) + "," +
                                std::to_string(cols) + "), got " + t.shape_str());
}

void check_flags(const FlagGrid& f, const GridSpec& g) {
  if (f.nx != g.nx || f.ny != g.ny) throw std::invalid_argument("fluid: flag grid does not match grid spec");
}

// --- bilinear sampling --------------------------------------------------

struct Lerp {
  int i0 = 0, j0 = 0;     // lower-left array indices of the stencil
  double fx = 0, fy = 0;  // fractions in [0, 1]
  bool ddx = false, ddy = false;  // fraction still moves with the position
};

Lerp locate(double px, double py, double ox, double oy, double dx, int rows, int cols) {
  Lerp s;
  const double gx = (px - ox) / dx;
  const double gy = (py - oy) / dx;
  double i0f = std::floor(gx);
  double j0f = std::floor(gy);
  s.i0 = std::clamp(static_cast<int>(i0f), 0, cols - 2);
  s.j0 = std::clamp(static_cast<int>(j0f), 0, rows - 2);
  s.fx = gx - s.i0;
  s.fy = gy - s.j0;
  s.ddx = s.fx > 0.0 && s.fx < 1.0;
  s.ddy = s.fy > 0.0 && s.fy < 1.0;
  s.fx = std::clamp(s.fx, 0.0, 1.0);
  s.fy = std::clamp(s.fy, 0.0, 1.0);
  return s;
}

double fetch(const Tensor& a, const Lerp& s) {
  const double v00 = a.at(s.j0, s.i0);
  const double v01 = a.at(s.j0, s.i0 + 1);
  const double v10 = a.at(s.j0 + 1, s.i0);
  const double v11 = a.at(s.j0 + 1, s.i0 + 1);
  return (1 - s.fy) * ((1 - s.fx) * v00 + s.fx * v01) + s.fy * ((1 - s.fx) * v10 + s.fx * v11);
}

//! d(fetch)/d(px, py); zero along axes where the stencil was clamped.
void fetch_pos_grad(const Tensor& a, const Lerp& s, double dx, double* gx, double* gy) {
  const double v00 = a.at(s.j0, s.i0);
  const double v01 = a.at(s.j0, s.i0 + 1);
  const double v10 = a.at(s.j0 + 1, s.i0);
  const double v11 = a.at(s.j0 + 1, s.i0 + 1);
  *gx = s.ddx ? ((1 - s.fy) * (v01 - v00) + s.fy * (v11 - v10)) / dx : 0.0;
  *gy = s.ddy ? ((1 - s.fx) * (v10 - v00) + s.fx * (v11 - v01)) / dx : 0.0;
}

void scatter(Tensor& ga, const Lerp& s, double g) {
  ga.at(s.j0, s.i0) += (1 - s.fy) * (1 - s.fx) * g;
  ga.at(s.j0, s.i0 + 1) += (1 - s.fy) * s.fx * g;
  ga.at(s.j0 + 1, s.i0) += s.fy * (1 - s.fx) * g;
  ga.at(s.j0 + 1, s.i0 + 1) += s.fy * s.fx * g;
}

struct FieldGeom {
  double ox, oy;
  int rows, cols;
};

FieldGeom geom(FieldKind k, const GridSpec& g) {
  return {field_origin_x(k, g), field_origin_y(k, g), field_rows(k, g), field_cols(k, g)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Boundary conditions

namespace {

enum class FaceRule : uint8_t { Free, WallZero, Inflow, OutflowCopy, Obstacle };

// Classification of an x-face (j, i) between cells (j, i-1) and (j, i).
FaceRule classify_x(const FlagGrid& f, int j, int i) {
  const bool hasL = i - 1 >= 0, hasR = i < f.nx;
  const Cell cl = hasL ? f.at(j, i - 1) : Cell::Fluid;
  const Cell cr = hasR ? f.at(j, i) : Cell::Fluid;
  if ((hasL && cl == Cell::Obstacle) || (hasR && cr == Cell::Obstacle)) return FaceRule::Obstacle;
  if ((hasL && cl == Cell::Inflow) || (hasR && cr == Cell::Inflow)) return FaceRule::Inflow;
  if ((hasL && cl == Cell::Wall) || (hasR && cr == Cell::Wall)) return FaceRule::WallZero;
  if (!hasR && hasL && cl == Cell::Outflow) return FaceRule::OutflowCopy;
  return FaceRule::Free;
}

FaceRule classify_y(const FlagGrid& f, int j, int i) {
  const bool hasB = j - 1 >= 0, hasT = j < f.ny;
  const Cell cb = hasB ? f.at(j - 1, i) : Cell::Fluid;
  const Cell ct = hasT ? f.at(j, i) : Cell::Fluid;
  if ((hasB && cb == Cell::Obstacle) || (hasT && ct == Cell::Obstacle)) return FaceRule::Obstacle;
  if ((hasB && cb == Cell::Inflow) || (hasT && ct == Cell::Inflow)) return FaceRule::Inflow;
  if ((hasB && cb == Cell::Wall) || (hasT && ct == Cell::Wall)) return FaceRule::WallZero;
  // y-faces strictly inside the outflow column keep a zero x-gradient copy.
  if (hasB && hasT && cb == Cell::Outflow && ct == Cell::Outflow) return FaceRule::OutflowCopy;
  return FaceRule::Free;
}

}  // namespace

void bc_forward(const FlagGrid& f, const GridSpec& g, const FluidParams& p, const BodyBc& body, const Tensor& ux,
                const Tensor& uy, Tensor& out_ux, Tensor& out_uy) {
  check_flags(f, g);
  check_shape(ux, g.ny, g.nx + 1, "bc ux");
  check_shape(uy, g.ny + 1, g.nx, "bc uy");
  out_ux = ux;
  out_uy = uy;

  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      switch (classify_x(f, j, i)) {
        case FaceRule::Free: break;
        case FaceRule::WallZero: out_ux.at(j, i) = 0.0; break;
        case FaceRule::Inflow: out_ux.at(j, i) = p.inflow_speed; break;
        case FaceRule::OutflowCopy: out_ux.at(j, i) = ux.at(j, i - 1); break;
        case FaceRule::Obstacle: {
          const double fy = (j + 0.5) * g.dx;
          out_ux.at(j, i) = body.vel.x - body.omega * (fy - body.center.y);
          break;
        }
      }
    }

  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      switch (classify_y(f, j, i)) {
        case FaceRule::Free: break;
        case FaceRule::WallZero: out_uy.at(j, i) = 0.0; break;
        case FaceRule::Inflow: out_uy.at(j, i) = 0.0; break;
        case FaceRule::OutflowCopy: out_uy.at(j, i) = uy.at(j, i - 1); break;
        case FaceRule::Obstacle: {
          const double fx = (i + 0.5) * g.dx;
          out_uy.at(j, i) = body.vel.y + body.omega * (fx - body.center.x);
          break;
        }
      }
    }
}

void bc_backward(const FlagGrid& f, const GridSpec& g, const BodyBc& body, const Tensor& gout_ux,
                 const Tensor& gout_uy, Tensor& gux, Tensor& guy, BcGrads& gbody) {
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      const double gv = gout_ux.at(j, i);
      switch (classify_x(f, j, i)) {
        case FaceRule::Free: gux.at(j, i) += gv; break;
        case FaceRule::WallZero:
        case FaceRule::Inflow: break;
        case FaceRule::OutflowCopy: gux.at(j, i - 1) += gv; break;
        case FaceRule::Obstacle: {
          const double fy = (j + 0.5) * g.dx;
          gbody.vel.x += gv;
          gbody.omega += -gv * (fy - body.center.y);
          gbody.center.y += gv * body.omega;
          break;
        }
      }
    }
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double gv = gout_uy.at(j, i);
      switch (classify_y(f, j, i)) {
        case FaceRule::Free: guy.at(j, i) += gv; break;
        case FaceRule::WallZero:
        case FaceRule::Inflow: break;
        case FaceRule::OutflowCopy: guy.at(j, i - 1) += gv; break;
        case FaceRule::Obstacle: {
          const double fx = (i + 0.5) * g.dx;
          gbody.vel.y += gv;
          gbody.omega += gv * (fx - body.center.x);
          gbody.center.x += -gv * body.omega;
          break;
        }
      }
    }
}

// ---------------------------------------------------------------------------
// Advection

namespace {

struct AdvectTrace {
  std::vector<double> vx, vy;   // advecting velocity at each sample point
  std::vector<Lerp> back, fwdt;  // backtrace / forward-trace stencils on the field array
  Tensor pred;                  // semi-Lagrangian predictor
  // limiter outcome per sample: 0 pass, 1 clamped to stencil min, 2 to max
  std::vector<uint8_t> branch;
  std::vector<int> extremum;  // linear index of the clamped stencil entry
  Tensor out;
};

void run_advect(FieldKind kind, const Tensor& field, const Tensor& ux, const Tensor& uy, const GridSpec& g, double dt,
                AdvectTrace& tr) {
  const FieldGeom fg = geom(kind, g);
  const FieldGeom gx = geom(FieldKind::FaceX, g);
  const FieldGeom gy = geom(FieldKind::FaceY, g);
  const int n = fg.rows * fg.cols;

  tr.vx.resize(n);
  tr.vy.resize(n);
  tr.back.resize(n);
  tr.fwdt.resize(n);
  tr.pred = Tensor({fg.rows, fg.cols});
  tr.branch.assign(n, 0);
  tr.extremum.assign(n, 0);

  // Predictor: backtrace with the locally interpolated velocity.
  for (int j = 0; j < fg.rows; ++j)
    for (int i = 0; i < fg.cols; ++i) {
      const int s = j * fg.cols + i;
      const double px = fg.ox + i * g.dx;
      const double py = fg.oy + j * g.dx;
      tr.vx[s] = fetch(ux, locate(px, py, gx.ox, gx.oy, g.dx, gx.rows, gx.cols));
      tr.vy[s] = fetch(uy, locate(px, py, gy.ox, gy.oy, g.dx, gy.rows, gy.cols));
      tr.back[s] = locate(px - dt * tr.vx[s], py - dt * tr.vy[s], fg.ox, fg.oy, g.dx, fg.rows, fg.cols);
      tr.pred.at(j, i) = fetch(field, tr.back[s]);
    }

  // Corrector: advect the predictor backwards and compensate half the error,
  // then clamp to the values the predictor interpolated between.
  tr.out = Tensor({fg.rows, fg.cols});
  for (int j = 0; j < fg.rows; ++j)
    for (int i = 0; i < fg.cols; ++i) {
      const int s = j * fg.cols + i;
      const double px = fg.ox + i * g.dx;
      const double py = fg.oy + j * g.dx;
      tr.fwdt[s] = locate(px + dt * tr.vx[s], py + dt * tr.vy[s], fg.ox, fg.oy, g.dx, fg.rows, fg.cols);
      const double bwd = fetch(tr.pred, tr.fwdt[s]);
      const double corr = tr.pred.at(j, i) + 0.5 * (field.at(j, i) - bwd);

      const Lerp& b = tr.back[s];
      const int idx[4] = {b.j0 * fg.cols + b.i0, b.j0 * fg.cols + b.i0 + 1, (b.j0 + 1) * fg.cols + b.i0,
                          (b.j0 + 1) * fg.cols + b.i0 + 1};
      int lo_at = idx[0], hi_at = idx[0];
      double lo = field[idx[0]], hi = field[idx[0]];
      for (int k = 1; k < 4; ++k) {
        const double v = field[idx[k]];
        if (v < lo) {
          lo = v;
          lo_at = idx[k];
        }
        if (v > hi) {
          hi = v;
          hi_at = idx[k];
        }
      }
      if (corr < lo) {
        tr.out.at(j, i) = lo;
        tr.branch[s] = 1;
        tr.extremum[s] = lo_at;
      } else if (corr > hi) {
        tr.out.at(j, i) = hi;
        tr.branch[s] = 2;
        tr.extremum[s] = hi_at;
      } else {
        tr.out.at(j, i) = corr;
      }
    }
}

}  // namespace

Tensor advect_forward(FieldKind kind, const Tensor& field, const Tensor& ux, const Tensor& uy, const GridSpec& g,
                      double dt) {
  check_shape(field, field_rows(kind, g), field_cols(kind, g), "advect field");
  check_shape(ux, g.ny, g.nx + 1, "advect ux");
  check_shape(uy, g.ny + 1, g.nx, "advect uy");
  AdvectTrace tr;
  run_advect(kind, field, ux, uy, g, dt, tr);
  return std::move(tr.out);
}

void advect_backward(FieldKind kind, const Tensor& field, const Tensor& ux, const Tensor& uy, const GridSpec& g,
                     double dt, const Tensor& gout, Tensor& gfield, Tensor& gux, Tensor& guy) {
  AdvectTrace tr;
  run_advect(kind, field, ux, uy, g, dt, tr);

  const FieldGeom fg = geom(kind, g);
  const FieldGeom ggx = geom(FieldKind::FaceX, g);
  const FieldGeom ggy = geom(FieldKind::FaceY, g);
  const int n = fg.rows * fg.cols;

  Tensor gpred({fg.rows, fg.cols});
  std::vector<double> gvx(n, 0.0), gvy(n, 0.0);

  // Reverse of the corrector stage. Cotangents on the predictor array are
  // gathered fully before the predictor stage is reversed.
  for (int j = 0; j < fg.rows; ++j)
    for (int i = 0; i < fg.cols; ++i) {
      const int s = j * fg.cols + i;
      const double gv = gout.at(j, i);
      if (gv == 0.0) continue;
      if (tr.branch[s] != 0) {
        gfield[tr.extremum[s]] += gv;
        continue;
      }
      gpred.at(j, i) += gv;
      gfield.at(j, i) += 0.5 * gv;
      const double gbwd = -0.5 * gv;
      scatter(gpred, tr.fwdt[s], gbwd);
      double gpx, gpy;
      fetch_pos_grad(tr.pred, tr.fwdt[s], g.dx, &gpx, &gpy);
      gvx[s] += dt * gbwd * gpx;
      gvy[s] += dt * gbwd * gpy;
    }

  // Reverse of the predictor stage.
  for (int j = 0; j < fg.rows; ++j)
    for (int i = 0; i < fg.cols; ++i) {
      const int s = j * fg.cols + i;
      const double gp = gpred.at(j, i);
      if (gp == 0.0) continue;
      scatter(gfield, tr.back[s], gp);
      double gpx, gpy;
      fetch_pos_grad(field, tr.back[s], g.dx, &gpx, &gpy);
      gvx[s] -= dt * gp * gpx;
      gvy[s] -= dt * gp * gpy;
    }

  // Reverse of the velocity interpolation at the fixed sample points.
  for (int j = 0; j < fg.rows; ++j)
    for (int i = 0; i < fg.cols; ++i) {
      const int s = j * fg.cols + i;
      if (gvx[s] == 0.0 && gvy[s] == 0.0) continue;
      const double px = fg.ox + i * g.dx;
      const double py = fg.oy + j * g.dx;
      if (gvx[s] != 0.0) scatter(gux, locate(px, py, ggx.ox, ggx.oy, g.dx, ggx.rows, ggx.cols), gvx[s]);
      if (gvy[s] != 0.0) scatter(guy, locate(px, py, ggy.ox, ggy.oy, g.dx, ggy.rows, ggy.cols), gvy[s]);
    }
}

// ---------------------------------------------------------------------------
// Diffusion

namespace {

// A face diffuses only when both adjacent cells are fluid; every other face
// carries a boundary value that must stay put.
bool face_free(FieldKind kind, const FlagGrid& f, int j, int i) {
  if (kind == FieldKind::FaceX) {
    if (i - 1 < 0 || i >= f.nx) return false;
    return f.fluid(j, i - 1) && f.fluid(j, i);
  }
  if (j - 1 < 0 || j >= f.ny) return false;
  return f.fluid(j - 1, i) && f.fluid(j, i);
}

}  // namespace

Tensor diffuse_forward(FieldKind kind, const Tensor& fld, const FlagGrid& flags, const GridSpec& g, double coef) {
  check_flags(flags, g);
  check_shape(fld, field_rows(kind, g), field_cols(kind, g), "diffuse field");
  if (coef > 0.25) diag::warnf("diffuse: explicit step unstable (nu dt / dx^2 = %.3g > 0.25)", coef);

  const int rows = fld.rows(), cols = fld.cols();
  Tensor out = fld;
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) {
      if (!face_free(kind, flags, j, i)) continue;
      double acc = 0.0;
      if (i - 1 >= 0) acc += fld.at(j, i - 1) - fld.at(j, i);
      if (i + 1 < cols) acc += fld.at(j, i + 1) - fld.at(j, i);
      if (j - 1 >= 0) acc += fld.at(j - 1, i) - fld.at(j, i);
      if (j + 1 < rows) acc += fld.at(j + 1, i) - fld.at(j, i);
      out.at(j, i) += coef * acc;
    }
  return out;
}

void diffuse_backward(FieldKind kind, const FlagGrid& flags, const GridSpec& g, double coef, const Tensor& gout,
                      Tensor& gf) {
  check_flags(flags, g);
  const int rows = gout.rows(), cols = gout.cols();
  for (int j = 0; j < rows; ++j)
    for (int i = 0; i < cols; ++i) {
      const double gv = gout.at(j, i);
      if (gv == 0.0) continue;
      if (!face_free(kind, flags, j, i)) {
        gf.at(j, i) += gv;
        continue;
      }
      int k = 0;
      if (i - 1 >= 0) {
        gf.at(j, i - 1) += coef * gv;
        ++k;
      }
      if (i + 1 < cols) {
        gf.at(j, i + 1) += coef * gv;
        ++k;
      }
      if (j - 1 >= 0) {
        gf.at(j - 1, i) += coef * gv;
        ++k;
      }
      if (j + 1 < rows) {
        gf.at(j + 1, i) += coef * gv;
        ++k;
      }
      gf.at(j, i) += (1.0 - coef * k) * gv;
    }
}

// ---------------------------------------------------------------------------
// Buoyancy

Tensor buoyancy_forward(const Tensor& uy, const Tensor& marker, const FlagGrid& flags, double strength) {
  Tensor out = uy;
  for (int j = 1; j < flags.ny; ++j)
    for (int i = 0; i < flags.nx; ++i) {
      if (!flags.fluid(j - 1, i) || !flags.fluid(j, i)) continue;
      out.at(j, i) += strength * 0.5 * (marker.at(j - 1, i) + marker.at(j, i));
    }
  return out;
}

void buoyancy_backward(const FlagGrid& flags, double strength, const Tensor& gout, Tensor& guy, Tensor& gmarker) {
  for (int i = 0; i < gout.size(); ++i) guy[i] += gout[i];
  for (int j = 1; j < flags.ny; ++j)
    for (int i = 0; i < flags.nx; ++i) {
      if (!flags.fluid(j - 1, i) || !flags.fluid(j, i)) continue;
      const double gv = strength * 0.5 * gout.at(j, i);
      gmarker.at(j - 1, i) += gv;
      gmarker.at(j, i) += gv;
    }
}

// ---------------------------------------------------------------------------
// Divergence

Tensor divergence_forward(const Tensor& ux, const Tensor& uy, const FlagGrid& flags, const GridSpec& g) {
  check_flags(flags, g);
  check_shape(ux, g.ny, g.nx + 1, "divergence ux");
  check_shape(uy, g.ny + 1, g.nx, "divergence uy");
  Tensor out({g.ny, g.nx});
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!flags.fluid(j, i)) continue;
      out.at(j, i) = (ux.at(j, i + 1) - ux.at(j, i) + uy.at(j + 1, i) - uy.at(j, i)) / g.dx;
    }
  return out;
}

void divergence_backward(const FlagGrid& flags, const GridSpec& g, const Tensor& gout, Tensor& gux, Tensor& guy) {
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!flags.fluid(j, i)) continue;
      const double gv = gout.at(j, i) / g.dx;
      gux.at(j, i + 1) += gv;
      gux.at(j, i) -= gv;
      guy.at(j + 1, i) += gv;
      guy.at(j, i) -= gv;
    }
}

// ---------------------------------------------------------------------------
// Pressure

namespace {

//! Compact symmetric positive (semi-)definite system over the fluid cells.
struct PoissonSystem {
  std::vector<int> cell;        // compact index -> linear cell index
  std::vector<int> compact;     // linear cell index -> compact index or -1
  std::vector<double> diag;     // neighbor count entering the stencil
  std::vector<int> nb;          // 4 entries per cell, compact index or -1
  bool has_dirichlet = false;
  double inv_dx2 = 1.0;

  explicit PoissonSystem(const FlagGrid& f, const GridSpec& g) {
    inv_dx2 = 1.0 / (g.dx * g.dx);
    compact.assign(static_cast<size_t>(f.nx) * f.ny, -1);
    for (int j = 0; j < f.ny; ++j)
      for (int i = 0; i < f.nx; ++i)
        if (f.fluid(j, i)) {
          compact[static_cast<size_t>(j) * f.nx + i] = static_cast<int>(cell.size());
          cell.push_back(j * f.nx + i);
        }
    const int n = static_cast<int>(cell.size());
    diag.assign(n, 0.0);
    nb.assign(static_cast<size_t>(n) * 4, -1);
    const int dj[4] = {0, 0, -1, 1};
    const int di[4] = {-1, 1, 0, 0};
    for (int c = 0; c < n; ++c) {
      const int j = cell[c] / f.nx, i = cell[c] % f.nx;
      for (int d = 0; d < 4; ++d) {
        const int jj = j + dj[d], ii = i + di[d];
        if (!f.inside(jj, ii)) continue;  // cannot happen with a boundary ring
        const Cell t = f.at(jj, ii);
        if (t == Cell::Fluid) {
          diag[c] += 1.0;
          nb[static_cast<size_t>(c) * 4 + d] = compact[static_cast<size_t>(jj) * f.nx + ii];
        } else if (t == Cell::Outflow) {
          diag[c] += 1.0;  // Dirichlet p = 0 beyond this face
          has_dirichlet = true;
        }
        // wall / inflow / obstacle: Neumann, face velocity is prescribed
      }
      // An isolated cell would make the row vanish; pin its pressure instead.
      if (diag[c] == 0.0) diag[c] = 1.0;
    }
  }

  int size() const { return static_cast<int>(cell.size()); }

  void apply(const std::vector<double>& x, std::vector<double>& out) const {
    const int n = size();
    for (int c = 0; c < n; ++c) {
      double acc = diag[c] * x[c];
      for (int d = 0; d < 4; ++d) {
        const int m = nb[static_cast<size_t>(c) * 4 + d];
        if (m >= 0) acc -= x[m];
      }
      out[c] = acc * inv_dx2;
    }
  }

  void remove_mean(std::vector<double>& x) const {
    if (x.empty()) return;
    double s = 0.0;
    for (double v : x) s += v;
    s /= static_cast<double>(x.size());
    for (double& v : x) v -= s;
  }
};

double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::fabs(e));
  return m;
}

std::vector<double> cg_solve(const PoissonSystem& sys, std::vector<double> b, double tol, int max_iter,
                             PoissonStats* stats) {
  const int n = sys.size();
  std::vector<double> x(n, 0.0);
  if (!sys.has_dirichlet) sys.remove_mean(b);

  const double bnorm = inf_norm(b);
  PoissonStats st;
  if (bnorm == 0.0) {
    if (stats) *stats = st;
    return x;
  }

  std::vector<double> r = b, p = b, ap(n);
  double rs = 0.0;
  for (int c = 0; c < n; ++c) rs += r[c] * r[c];

  int it = 0;
  double rinf = inf_norm(r);
  while (rinf > tol * bnorm && it < max_iter) {
    sys.apply(p, ap);
    double pap = 0.0;
    for (int c = 0; c < n; ++c) pap += p[c] * ap[c];
    if (pap <= 0.0) break;  // numerical breakdown on the semi-definite system
    const double alpha = rs / pap;
    for (int c = 0; c < n; ++c) {
      x[c] += alpha * p[c];
      r[c] -= alpha * ap[c];
    }
    double rs2 = 0.0;
    for (int c = 0; c < n; ++c) rs2 += r[c] * r[c];
    const double beta = rs2 / rs;
    rs = rs2;
    for (int c = 0; c < n; ++c) p[c] = r[c] + beta * p[c];
    rinf = inf_norm(r);
    ++it;
  }

  if (!sys.has_dirichlet) sys.remove_mean(x);
  st.iters = it;
  st.rel_residual = rinf / bnorm;
  st.converged = rinf <= tol * bnorm;
  if (!st.converged)
    diag::warnf("pressure: CG stopped at %d iterations, relative residual %.3g", it, st.rel_residual);
  if (stats) *stats = st;
  return x;
}

}  // namespace

Tensor apply_poisson_stencil(const Tensor& p, const FlagGrid& flags, const GridSpec& g) {
  PoissonSystem sys(flags, g);
  std::vector<double> x(sys.size()), out(sys.size());
  for (int c = 0; c < sys.size(); ++c) x[c] = p[sys.cell[c]];
  sys.apply(x, out);
  Tensor res({g.ny, g.nx});
  for (int c = 0; c < sys.size(); ++c) res[sys.cell[c]] = out[c];
  return res;
}

Tensor poisson_solve(const Tensor& rhs, const FlagGrid& flags, const GridSpec& g, double tol, int max_iter,
                     PoissonStats* stats) {
  check_flags(flags, g);
  check_shape(rhs, g.ny, g.nx, "poisson rhs");
  PoissonSystem sys(flags, g);
  std::vector<double> b(sys.size());
  for (int c = 0; c < sys.size(); ++c) b[c] = rhs[sys.cell[c]];
  std::vector<double> x = cg_solve(sys, std::move(b), tol, max_iter, stats);
  Tensor p({g.ny, g.nx});
  for (int c = 0; c < sys.size(); ++c) p[sys.cell[c]] = x[c];
  return p;
}

Tensor pressure_solve(const Tensor& div, const FlagGrid& flags, const GridSpec& g, double tol, int max_iter,
                      PoissonStats* stats) {
  // Lap(p) = div with A = -Lap positive (semi-)definite.
  Tensor rhs({g.ny, g.nx});
  for (int i = 0; i < rhs.size(); ++i) rhs[i] = -div[i];
  return poisson_solve(rhs, flags, g, tol, max_iter, stats);
}

namespace {

bool face_corrected_x(const FlagGrid& f, int j, int i) {
  if (i - 1 < 0 || i >= f.nx) return false;
  const Cell l = f.at(j, i - 1), r = f.at(j, i);
  const bool ok = (l == Cell::Fluid || l == Cell::Outflow) && (r == Cell::Fluid || r == Cell::Outflow);
  return ok && (l == Cell::Fluid || r == Cell::Fluid);
}

bool face_corrected_y(const FlagGrid& f, int j, int i) {
  if (j - 1 < 0 || j >= f.ny) return false;
  const Cell b = f.at(j - 1, i), t = f.at(j, i);
  const bool ok = (b == Cell::Fluid || b == Cell::Outflow) && (t == Cell::Fluid || t == Cell::Outflow);
  return ok && (b == Cell::Fluid || t == Cell::Fluid);
}

}  // namespace

ProjectOut project_forward(const Tensor& ux, const Tensor& uy, const FlagGrid& flags, const GridSpec& g,
                           const FluidParams& p, PoissonStats* stats) {
  Tensor div = divergence_forward(ux, uy, flags, g);
  const double s = p.rho / p.dt;
  Tensor rhs({g.ny, g.nx});
  for (int i = 0; i < rhs.size(); ++i) rhs[i] = -s * div[i];
  Tensor pr = poisson_solve(rhs, flags, g, p.poisson_tol, p.poisson_max_iter, stats);

  ProjectOut out{ux, uy, pr};
  const double c = p.dt / (p.rho * g.dx);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      if (!face_corrected_x(flags, j, i)) continue;
      out.ux.at(j, i) -= c * (pr.at(j, i) - pr.at(j, i - 1));
    }
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!face_corrected_y(flags, j, i)) continue;
      out.uy.at(j, i) -= c * (pr.at(j, i) - pr.at(j - 1, i));
    }
  return out;
}

void project_backward(const FlagGrid& flags, const GridSpec& g, const FluidParams& p, const Tensor& gout_ux,
                      const Tensor& gout_uy, const Tensor* gout_p, Tensor& gux, Tensor& guy) {
  // Velocity passes straight through.
  for (int i = 0; i < gout_ux.size(); ++i) gux[i] += gout_ux[i];
  for (int i = 0; i < gout_uy.size(); ++i) guy[i] += gout_uy[i];

  // Cotangent on the pressure: from the face correction and, when the
  // pressure output itself is used downstream, from that use.
  Tensor gp({g.ny, g.nx});
  if (gout_p)
    for (int i = 0; i < gp.size(); ++i) gp[i] = (*gout_p)[i];
  const double c = p.dt / (p.rho * g.dx);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i <= g.nx; ++i) {
      if (!face_corrected_x(flags, j, i)) continue;
      const double gv = c * gout_ux.at(j, i);
      gp.at(j, i) -= gv;
      gp.at(j, i - 1) += gv;
    }
  for (int j = 0; j <= g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!face_corrected_y(flags, j, i)) continue;
      const double gv = c * gout_uy.at(j, i);
      gp.at(j, i) -= gv;
      gp.at(j - 1, i) += gv;
    }

  // The solve is symmetric, so the adjoint runs the same CG. Gauge
  // projections mirror in reverse order around it.
  Tensor q = poisson_solve(gp, flags, g, p.poisson_tol, p.poisson_max_iter, nullptr);

  const double s = p.rho / p.dt;
  Tensor gdiv({g.ny, g.nx});
  for (int i = 0; i < gdiv.size(); ++i) gdiv[i] = -s * q[i];
  divergence_backward(flags, g, gdiv, gux, guy);
}

// ---------------------------------------------------------------------------
// Marker maintenance

Tensor marker_source_forward(const Tensor& m, const std::vector<int>& source_cells) {
  Tensor out(m.shape());
  for (int i = 0; i < m.size(); ++i) out[i] = std::clamp(m[i], 0.0, 1.0);
  for (int c : source_cells) out[c] = 1.0;
  return out;
}

void marker_source_backward(const Tensor& m, const std::vector<int>& source_cells, const Tensor& gout, Tensor& gm) {
  std::vector<char> is_source(m.size(), 0);
  for (int c : source_cells) is_source[c] = 1;
  for (int i = 0; i < m.size(); ++i) {
    if (is_source[i]) continue;
    if (m[i] >= 0.0 && m[i] <= 1.0) gm[i] += gout[i];
  }
}

}  // namespace fluidctl::fluid
