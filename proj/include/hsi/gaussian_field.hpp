#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>

#include "hsi/function_space.hpp"
#include "hsi/random.hpp"

namespace hsi {

// Squared-exponential kernel k(x,y) = exp(-(x-y)^2 / (2*length_scale)).
// Note the length scale enters linearly in the denominator.
struct RbfKernel {
  explicit RbfKernel(double length_scale);
  double operator()(double x, double y) const;
  double length_scale;
};

// Jitter ladder shared by every SPD factorization in the library. Returns the
// jitter that produced an accepted Cholesky factor (max-abs reconstruction
// error < 1e-8); throws hsi::numerical_error if the ladder is exhausted.
Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, double* jitter_used = nullptr);

// Gram matrix K_ij = k(s_i, s_j) without any factorization.
Eigen::MatrixXd kernel_gram(const Grid& grid, const RbfKernel& kernel);

// Mean-zero Gaussian random field on a grid, with covariance kernel k. The
// sampled vector z has Cov(z_i, z_j) = k(s_i, s_j) (the Gram matrix); as an
// operator on functions, C f(s_i) = (1/n) sum_j k(s_i,s_j) f(s_j), consistent
// with the mean-weight inner product: Var<g,z> = <g, Cg>.
class GaussianField {
 public:
  GaussianField(Grid grid, RbfKernel kernel);
  // Field with an explicitly supplied covariance matrix (n x n, positive
  // semidefinite up to the jitter ladder); kernel() is empty for these.
  GaussianField(Grid grid, Eigen::MatrixXd covariance);

  const Grid& grid() const { return grid_; }
  const std::optional<RbfKernel>& kernel() const { return kernel_; }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::MatrixXd& cholesky_factor() const { return chol_; }
  double jitter() const { return jitter_; }

  GridFunction sample(RandomStream& rng) const;
  void sample_into(RandomStream& rng, std::span<double> out) const;  // one channel

  GridFunction apply_covariance(const GridFunction& f) const;

  // (1/n) sum_i k(s_i,s_i); equals E||z||^2 under the mean-weight norm
  double trace() const;

 private:
  Grid grid_;
  std::optional<RbfKernel> kernel_;
  Eigen::MatrixXd gram_;
  Eigen::MatrixXd chol_;  // lower triangular, L L^T = gram + jitter I
  double jitter_;
};

}  // namespace hsi
