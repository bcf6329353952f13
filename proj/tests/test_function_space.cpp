#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "hsi/function_space.hpp"

using namespace hsi;

namespace {

GridFunction coords(const Grid& g) {
  return GridFunction(g, std::vector<double>(g.sensors));
}

double lsq_slope(const std::vector<double>& logx, const std::vector<double>& logy) {
  const double n = static_cast<double>(logx.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < logx.size(); ++i) {
    sx += logx[i];
    sy += logy[i];
    sxx += logx[i] * logx[i];
    sxy += logx[i] * logy[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("grid places sensor j at j/(n-1) with endpoints included") {
  Grid g(5, 1.0);
  CHECK(g.n() == 5);
  CHECK(g.sensors.front() == 0.0);
  CHECK(g.sensors.back() == 1.0);
  CHECK(g.sensors[1] == 0.25);
  CHECK(g.spacing() == 0.25);
  Grid g2(3, 2.0);
  CHECK(g2.sensors[1] == 1.0);
  CHECK_THROWS_AS(Grid(1), std::invalid_argument);
  CHECK_THROWS_AS(Grid(8, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(Grid(8, -1.0), std::invalid_argument);
}

TEST_CASE("grid functions require finite values matching the grid") {
  Grid g(4, 1.0);
  CHECK_THROWS_AS(GridFunction(g, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(GridFunction(g, {1.0, 2.0, std::nan(""), 0.0}), std::invalid_argument);
  GridFunction z = GridFunction::zeros(g);
  for (double v : z.values) CHECK(v == 0.0);
}

TEST_CASE("inner product is the plain mean of pointwise products") {
  // For f = g = s on n = 11 points the mean of squares is exactly
  // (1/11) * sum (j/10)^2 = 385/1100 = 0.35.
  Grid g(11, 1.0);
  GridFunction s = coords(g);
  CHECK(inner_product(s, s) == doctest::Approx(0.35).epsilon(1e-15));
  GridFunction ones(g, std::vector<double>(11, 1.0));
  CHECK(inner_product(ones, ones) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(norm(ones) == doctest::Approx(1.0).epsilon(1e-15));

  Grid other(12, 1.0);
  GridFunction f2 = GridFunction::zeros(other);
  CHECK_THROWS_AS(inner_product(s, f2), std::invalid_argument);
}

TEST_CASE("mean-weight quadrature converges at second order when the endpoint term vanishes") {
  // p(s) = s^2 (s^2 - 1.8) has (p(0)+p(1))/2 = -0.4 = integral of p, so the
  // generic first-order endpoint error cancels and the trapezoid-type O(n^-2)
  // remainder is exposed.
  std::vector<double> logn, loge;
  for (int n : {17, 33, 65, 129}) {
    Grid g(n, 1.0);
    std::vector<double> f(n), h(n);
    for (int j = 0; j < n; ++j) {
      const double s = g.sensors[j];
      f[j] = s * s;
      h[j] = s * s - 1.8;
    }
    const double ip = inner_product(GridFunction(g, f), GridFunction(g, h));
    logn.push_back(std::log(static_cast<double>(n)));
    loge.push_back(std::log(std::abs(ip - (-0.4))));
  }
  const double slope = -lsq_slope(logn, loge);
  CHECK(slope > 1.8);
  CHECK(slope < 2.2);
}

TEST_CASE("relative error and axpy behave like their definitions") {
  Grid g(6, 1.0);
  GridFunction t(g, {1.0, -2.0, 0.5, 3.0, -1.0, 2.0});
  CHECK(relative_l2_error(t, t) == 0.0);

  GridFunction p = axpy(0.0, t, t);  // p = t
  p.values[0] += 0.6;
  // || (0.6,0,...) || / || t || with mean weights: sqrt(0.36/6) / sqrt(19.25/6)
  CHECK(relative_l2_error(p, t) ==
        doctest::Approx(std::sqrt(0.36 / 19.25)).epsilon(1e-13));

  GridFunction z = GridFunction::zeros(g);
  CHECK_THROWS_AS(relative_l2_error(t, z), std::invalid_argument);

  GridFunction y = axpy(2.0, t, t);  // 3t
  for (int j = 0; j < 6; ++j) CHECK(y.values[j] == 3.0 * t.values[j]);
  Grid other(7, 1.0);
  CHECK_THROWS_AS(axpy(1.0, t, GridFunction::zeros(other)), std::invalid_argument);
}

TEST_CASE("product-space inner product sums the channel inner products") {
  Grid g(5, 1.0);
  GridFunction a(g, {1, 2, 3, 4, 5});
  GridFunction b(g, {-1, 0, 1, 0, -1});
  PairedFunction f(a, b), h(b, a);
  CHECK(inner_product(f, h) ==
        doctest::Approx(inner_product(a, b) + inner_product(b, a)).epsilon(1e-15));
  CHECK(norm(f) == doctest::Approx(std::sqrt(inner_product(a, a) + inner_product(b, b)))
                       .epsilon(1e-15));
  CHECK(relative_l2_error(f, f) == 0.0);

  PairedFunction s = axpy(-1.0, f, f);
  CHECK(norm(s) == 0.0);

  Grid other(6, 1.0);
  CHECK_THROWS_AS(PairedFunction(a, GridFunction::zeros(other)), std::invalid_argument);
}

TEST_CASE("flat-span mean dot product matches the grid-function inner product") {
  Grid g(7, 1.0);
  GridFunction s = coords(g);
  CHECK(dot_mean(s.values, s.values) == inner_product(s, s));
  std::vector<double> a{1, 2}, b{1, 2, 3};
  CHECK_THROWS_AS(dot_mean(a, b), std::invalid_argument);
}
