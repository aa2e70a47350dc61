// Copyright (c) 2026 the fluidctl authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "fluidctl/ad/tensor.hpp"

namespace fluidctl::fluid {

//! Uniform staggered grid. Cell (row j, col i) has its center at
//! ((i+0.5)dx, (j+0.5)dx). x-faces live at (i dx, (j+0.5)dx) in an
//! (ny, nx+1) array, y-faces at ((i+0.5)dx, j dx) in an (ny+1, nx) array.
struct GridSpec {
  int nx = 0;
  int ny = 0;
  double dx = 1.0;

  double width() const { return nx * dx; }
  double height() const { return ny * dx; }
  double cx(int i) const { return (i + 0.5) * dx; }
  double cy(int j) const { return (j + 0.5) * dx; }
};

enum class Cell : uint8_t { Fluid = 0, Wall = 1, Inflow = 2, Outflow = 3, Obstacle = 4 };

//! Per-cell classification. The boundary ring is always non-fluid.
struct FlagGrid {
  int nx = 0;
  int ny = 0;
  std::vector<Cell> cells;

  FlagGrid() = default;
  FlagGrid(int nx_, int ny_) : nx(nx_), ny(ny_), cells(static_cast<size_t>(nx_) * ny_, Cell::Fluid) {}

  Cell at(int j, int i) const { return cells[static_cast<size_t>(j) * nx + i]; }
  void set(int j, int i, Cell c) { cells[static_cast<size_t>(j) * nx + i] = c; }
  bool fluid(int j, int i) const { return at(j, i) == Cell::Fluid; }
  bool inside(int j, int i) const { return i >= 0 && i < nx && j >= 0 && j < ny; }

  int count(Cell c) const {
    int n = 0;
    for (Cell e : cells) n += (e == c);
    return n;
  }

  //! Closed domain: one ring of wall cells, fluid inside.
  static FlagGrid closed_box(int nx, int ny) {
    FlagGrid f(nx, ny);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (j == 0 || j == ny - 1 || i == 0 || i == nx - 1) f.set(j, i, Cell::Wall);
    return f;
  }

  //! Channel: inflow along the left column, outflow along the right column,
  //! walls on top and bottom (corners stay wall).
  static FlagGrid channel(int nx, int ny) {
    FlagGrid f = closed_box(nx, ny);
    for (int j = 1; j < ny - 1; ++j) {
      f.set(j, 0, Cell::Inflow);
      f.set(j, nx - 1, Cell::Outflow);
    }
    return f;
  }
};

//! Physical and numerical parameters of the fluid solve.
struct FluidParams {
  double rho = 0.1;
  double re = 1000.0;
  double u_ref = 1.0;
  double l_ref = 10.0;
  double dt = 0.1;
  double buoyancy_coeff = 0.5;
  double inflow_speed = 1.0;
  double poisson_tol = 1e-6;
  int poisson_max_iter = 2000;

  //! Kinematic viscosity implied by the Reynolds number.
  double nu() const { return u_ref * l_ref / re; }

  void validate() const {
    if (rho <= 0 || re <= 0 || u_ref <= 0 || l_ref <= 0 || dt <= 0)
      throw std::invalid_argument("fluid: rho, re, u_ref, l_ref and dt must be positive");
    if (poisson_tol <= 0 || poisson_max_iter < 1)
      throw std::invalid_argument("fluid: invalid pressure solver settings");
  }
};

enum class FieldKind { Center, FaceX, FaceY };

inline int field_rows(FieldKind k, const GridSpec& g) { return k == FieldKind::FaceY ? g.ny + 1 : g.ny; }
inline int field_cols(FieldKind k, const GridSpec& g) { return k == FieldKind::FaceX ? g.nx + 1 : g.nx; }
inline double field_origin_x(FieldKind k, const GridSpec& g) { return k == FieldKind::FaceX ? 0.0 : 0.5 * g.dx; }
inline double field_origin_y(FieldKind k, const GridSpec& g) { return k == FieldKind::FaceY ? 0.0 : 0.5 * g.dx; }

inline ad::Tensor make_field(FieldKind k, const GridSpec& g) {
  return ad::Tensor({field_rows(k, g), field_cols(k, g)});
}

inline double max_abs(const ad::Tensor& t) {
  double m = 0.0;
  for (int i = 0; i < t.size(); ++i) {
    const double a = t[i] < 0 ? -t[i] : t[i];
    if (a > m) m = a;
  }
  return m;
}

}  // namespace fluidctl::fluid
