#pragma once

#include <span>
#include <vector>

namespace hsi {

// Uniform 1D sensor grid on [0, domain_length], endpoints included:
// sensor j sits at j*domain_length/(n-1).
struct Grid {
  explicit Grid(int n_points, double domain_length = 1.0);

  int n() const { return static_cast<int>(sensors.size()); }
  double spacing() const { return length / (n() - 1); }

  bool operator==(const Grid& o) const {
    return length == o.length && sensors.size() == o.sensors.size();
  }
  bool operator!=(const Grid& o) const { return !(*this == o); }

  double length;
  std::vector<double> sensors;
};

// A function known by its sensor values. Values must be finite.
struct GridFunction {
  GridFunction(Grid g, std::vector<double> v);

  static GridFunction zeros(const Grid& g);

  Grid grid;
  std::vector<double> values;
};

// Element of the two-channel product space; both channels share one grid.
struct PairedFunction {
  PairedFunction(GridFunction c0, GridFunction c1);

  const Grid& grid() const { return channel0.grid; }

  GridFunction channel0, channel1;
};

// L2 inner product under mean-weight quadrature: (1/n) sum_j f_j g_j.
double inner_product(const GridFunction& f, const GridFunction& g);
double norm(const GridFunction& f);

// norm(pred - truth) / norm(truth); truth must be nonzero.
double relative_l2_error(const GridFunction& pred, const GridFunction& truth);

// a*x + y
GridFunction axpy(double a, const GridFunction& x, const GridFunction& y);

// Product-space versions: <(f0,f1),(g0,g1)> = <f0,g0> + <f1,g1>.
double inner_product(const PairedFunction& f, const PairedFunction& g);
double norm(const PairedFunction& f);
double relative_l2_error(const PairedFunction& pred, const PairedFunction& truth);
PairedFunction axpy(double a, const PairedFunction& x, const PairedFunction& y);

// span helpers used by the drift/solver layer (flat [channel][sensor] data)
double dot_mean(std::span<const double> a, std::span<const double> b);

}  // namespace hsi
