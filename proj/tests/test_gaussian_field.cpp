#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "hsi/errors.hpp"
#include "hsi/gaussian_field.hpp"

using namespace hsi;

TEST_CASE("squared-exponential kernel value and Gram matrix shape") {
  RbfKernel k(0.2);
  // k(x,y) = exp(-(x-y)^2 / (2 * 0.2)); at distance 0.2 the exponent is -0.1.
  CHECK(k(0.0, 0.2) == doctest::Approx(std::exp(-0.1)).epsilon(1e-15));
  CHECK(k(0.3, 0.3) == 1.0);
  CHECK_THROWS_AS(RbfKernel(0.0), std::invalid_argument);
  CHECK_THROWS_AS(RbfKernel(-1.0), std::invalid_argument);

  Grid g(16, 1.0);
  Eigen::MatrixXd gram = kernel_gram(g, k);
  CHECK(gram.rows() == 16);
  CHECK((gram - gram.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(gram.diagonal().minCoeff() == 1.0);
  CHECK(gram(0, 15) == doctest::Approx(std::exp(-1.0 / 0.4)).epsilon(1e-15));
}

TEST_CASE("discrete trace equals one exactly for a unit-diagonal kernel") {
  for (int n : {8, 64, 129}) {
    GaussianField f(Grid(n, 1.0), RbfKernel(0.1));
    CHECK(f.trace() == 1.0);
  }
}

TEST_CASE("factorization uses at most a tiny jitter on smooth kernels") {
  GaussianField f(Grid(64, 1.0), RbfKernel(0.1));
  CHECK(f.jitter() <= 1e-10);
  // L L^T reproduces the Gram matrix up to the jitter tolerance
  Eigen::MatrixXd recon = f.cholesky_factor() * f.cholesky_factor().transpose();
  CHECK((recon - f.gram()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("covariance application is the mean-weighted Gram product") {
  Grid g(9, 1.0);
  GaussianField f(g, RbfKernel(0.2));
  GridFunction x(g, {1, -1, 2, 0, 3, -2, 1, 0, -1});
  GridFunction y = f.apply_covariance(x);
  for (int i = 0; i < 9; ++i) {
    double want = 0.0;
    for (int j = 0; j < 9; ++j) want += f.gram()(i, j) * x.values[j];
    want /= 9.0;
    CHECK(y.values[i] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("samples have the advertised covariance") {
  Grid g(16, 1.0);
  GaussianField f(g, RbfKernel(0.2));
  RandomStream rng(123);
  const int N = 6000;
  const int n = g.n();
  Eigen::MatrixXd draws(N, n);
  for (int s = 0; s < N; ++s) {
    GridFunction z = f.sample(rng);
    for (int j = 0; j < n; ++j) draws(s, j) = z.values[j];
  }
  Eigen::VectorXd mean = draws.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 4.0 / std::sqrt(static_cast<double>(N)));
  Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / (N - 1.0);
  // entrywise MC error ~ sqrt(2/N) = 0.018; 0.1 leaves a wide margin
  CHECK((cov - f.gram()).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("quadratic forms match: Var<g,z> = <g, Cg>") {
  Grid g(12, 1.0);
  GaussianField f(g, RbfKernel(0.15));
  GridFunction probe(g, {1, 0, -1, 2, 0, 1, -2, 0, 1, 0, -1, 1});
  const double want = inner_product(probe, f.apply_covariance(probe));
  RandomStream rng(77);
  const int N = 20000;
  double s1 = 0.0, s2 = 0.0;
  for (int s = 0; s < N; ++s) {
    const double v = inner_product(probe, f.sample(rng));
    s1 += v;
    s2 += v * v;
  }
  const double var = (s2 - s1 * s1 / N) / (N - 1.0);
  // variance estimate SE ~ var * sqrt(2/N) ~ 1% relative
  CHECK(std::abs(var - want) < 4.0 * want * std::sqrt(2.0 / N));
}

TEST_CASE("sample_into fills one channel identically to sample") {
  Grid g(10, 1.0);
  GaussianField f(g, RbfKernel(0.1));
  RandomStream a(55), b(55);
  GridFunction za = f.sample(a);
  std::vector<double> zb(10, 0.0);
  f.sample_into(b, zb);
  for (int j = 0; j < 10; ++j) CHECK(za.values[j] == zb[j]);
}

TEST_CASE("explicit covariance constructor bypasses the kernel") {
  Grid g(6, 1.0);
  GaussianField f(g, Eigen::MatrixXd::Identity(6, 6));
  CHECK(!f.kernel().has_value());
  CHECK(f.gram() == Eigen::MatrixXd::Identity(6, 6));
  CHECK(f.trace() == 1.0);
  RandomStream rng(9);
  const int N = 20000;
  double s2 = 0.0;
  for (int s = 0; s < N; ++s) {
    GridFunction z = f.sample(rng);
    s2 += z.values[3] * z.values[3];
  }
  CHECK(s2 / N == doctest::Approx(1.0).epsilon(0.06));
  CHECK_THROWS_AS(GaussianField(g, Eigen::MatrixXd::Identity(5, 5)),
                  std::invalid_argument);
}

TEST_CASE("severely indefinite matrices exhaust the jitter ladder") {
  Eigen::MatrixXd bad = -Eigen::MatrixXd::Identity(4, 4);
  CHECK_THROWS_AS(spd_factor(bad), numerical_error);
}
