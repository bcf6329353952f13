#include "hsi/gaussian_field.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hsi/errors.hpp"

namespace hsi {

RbfKernel::RbfKernel(double ls) : length_scale(ls) {
  if (!(ls > 0.0) || !std::isfinite(ls))
    throw std::invalid_argument("RbfKernel: length_scale must be positive and finite");
}

double RbfKernel::operator()(double x, double y) const {
  double d = x - y;
  return std::exp(-d * d / (2.0 * length_scale));
}

Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, double* jitter_used) {
  static const double ladder[] = {0.0, 1e-12, 1e-10, 1e-8, 1e-6};
  const int n = static_cast<int>(m.rows());
  for (double j : ladder) {
    Eigen::MatrixXd shifted = m;
    shifted.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd l = llt.matrixL();
    double recon = (l * l.transpose() - shifted).cwiseAbs().maxCoeff();
    if (recon < 1e-8) {
      if (jitter_used) *jitter_used = j;
      return llt;
    }
  }
  std::ostringstream msg;
  msg << "spd_factor: jitter ladder {0,1e-12,1e-10,1e-8,1e-6} exhausted for "
      << n << "x" << n << " matrix (min diag " << m.diagonal().minCoeff() << ")";
  throw numerical_error(msg.str());
}

Eigen::MatrixXd kernel_gram(const Grid& grid, const RbfKernel& kernel) {
  const int n = grid.n();
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = kernel(grid.sensors[i], grid.sensors[j]);
  return k;
}

GaussianField::GaussianField(Grid grid, RbfKernel kernel)
    : grid_(std::move(grid)), kernel_(kernel), gram_(kernel_gram(grid_, *kernel_)) {
  auto llt = spd_factor(gram_, &jitter_);
  chol_ = llt.matrixL();
}

GaussianField::GaussianField(Grid grid, Eigen::MatrixXd covariance)
    : grid_(std::move(grid)), gram_(std::move(covariance)) {
  const auto n = static_cast<Eigen::Index>(grid_.n());
  if (gram_.rows() != n || gram_.cols() != n)
    throw std::invalid_argument("GaussianField: covariance must be n x n for the grid");
  auto llt = spd_factor(gram_, &jitter_);
  chol_ = llt.matrixL();
}

void GaussianField::sample_into(RandomStream& rng, std::span<double> out) const {
  const int n = grid_.n();
  if (static_cast<int>(out.size()) != n)
    throw std::invalid_argument("GaussianField::sample_into: output size mismatch");
  Eigen::VectorXd xi(n);
  for (int i = 0; i < n; ++i) xi[i] = rng.normal();
  Eigen::Map<Eigen::VectorXd>(out.data(), n) = chol_ * xi;
}

GridFunction GaussianField::sample(RandomStream& rng) const {
  std::vector<double> v(grid_.n());
  sample_into(rng, v);
  return GridFunction(grid_, std::move(v));
}

GridFunction GaussianField::apply_covariance(const GridFunction& f) const {
  if (f.grid != grid_)
    throw std::invalid_argument("GaussianField::apply_covariance: grid mismatch");
  const int n = grid_.n();
  Eigen::Map<const Eigen::VectorXd> x(f.values.data(), n);
  Eigen::VectorXd y = gram_ * x / static_cast<double>(n);
  return GridFunction(grid_, std::vector<double>(y.data(), y.data() + n));
}

double GaussianField::trace() const {
  return gram_.diagonal().sum() / static_cast<double>(grid_.n());
}

}  // namespace hsi
