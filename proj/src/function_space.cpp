#include "hsi/function_space.hpp"

#include <cmath>
#include <stdexcept>

namespace hsi {

Grid::Grid(int n_points, double domain_length) : length(domain_length) {
  if (n_points < 2) throw std::invalid_argument("Grid: n_points must be >= 2");
  if (!(domain_length > 0.0) || !std::isfinite(domain_length))
    throw std::invalid_argument("Grid: domain_length must be positive and finite");
  sensors.resize(n_points);
  for (int j = 0; j < n_points; ++j)
    sensors[j] = domain_length * static_cast<double>(j) / (n_points - 1);
}

GridFunction::GridFunction(Grid g, std::vector<double> v)
    : grid(std::move(g)), values(std::move(v)) {
  if (static_cast<int>(values.size()) != grid.n())
    throw std::invalid_argument("GridFunction: value count does not match grid");
  for (double x : values)
    if (!std::isfinite(x))
      throw std::invalid_argument("GridFunction: values must be finite");
}

GridFunction GridFunction::zeros(const Grid& g) {
  return GridFunction(g, std::vector<double>(g.n(), 0.0));
}

PairedFunction::PairedFunction(GridFunction c0, GridFunction c1)
    : channel0(std::move(c0)), channel1(std::move(c1)) {
  if (channel0.grid != channel1.grid)
    throw std::invalid_argument("PairedFunction: channels must share a grid");
}

double dot_mean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot_mean: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s / static_cast<double>(a.size());
}

double inner_product(const GridFunction& f, const GridFunction& g) {
  if (f.grid != g.grid)
    throw std::invalid_argument("inner_product: grid mismatch");
  return dot_mean(f.values, g.values);
}

double norm(const GridFunction& f) { return std::sqrt(inner_product(f, f)); }

double relative_l2_error(const GridFunction& pred, const GridFunction& truth) {
  double nt = norm(truth);
  if (nt == 0.0)
    throw std::invalid_argument("relative_l2_error: truth has zero norm");
  GridFunction diff = axpy(-1.0, truth, pred);
  return norm(diff) / nt;
}

GridFunction axpy(double a, const GridFunction& x, const GridFunction& y) {
  if (x.grid != y.grid) throw std::invalid_argument("axpy: grid mismatch");
  std::vector<double> out(x.values.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a * x.values[i] + y.values[i];
  return GridFunction(x.grid, std::move(out));
}

double inner_product(const PairedFunction& f, const PairedFunction& g) {
  return inner_product(f.channel0, g.channel0) + inner_product(f.channel1, g.channel1);
}

double norm(const PairedFunction& f) { return std::sqrt(inner_product(f, f)); }

double relative_l2_error(const PairedFunction& pred, const PairedFunction& truth) {
  double nt = norm(truth);
  if (nt == 0.0)
    throw std::invalid_argument("relative_l2_error: truth has zero norm");
  PairedFunction diff = axpy(-1.0, truth, pred);
  return norm(diff) / nt;
}

PairedFunction axpy(double a, const PairedFunction& x, const PairedFunction& y) {
  return PairedFunction(axpy(a, x.channel0, y.channel0),
                        axpy(a, x.channel1, y.channel1));
}

}  // namespace hsi
