#include "hsi/bridge.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include "hsi/errors.hpp"

namespace hsi {

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("interpolant time outside [0,1]");
}

Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& rhs,
                          const char* what) {
  double jitter = 0.0;
  auto llt = spd_factor(a, &jitter);
  (void)what;
  return llt.solve(rhs);
}

}  // namespace

InterpolantSample sample_interpolant(const ScheduleSet& s, double t, GridFunction x0,
                                     GridFunction x1, GridFunction z) {
  check_time(t);
  if (x0.grid != x1.grid || x0.grid != z.grid)
    throw std::invalid_argument("interpolant: endpoint and noise grids differ");
  const double a = s.alpha(t), b = s.beta(t), g = s.gamma(t);
  const double ad = s.alpha_dot(t), bd = s.beta_dot(t);
  const std::size_t n = x0.values.size();
  std::vector<double> xt(n), vt(n);
  for (std::size_t i = 0; i < n; ++i) {
    xt[i] = a * x0.values[i] + b * x1.values[i] + g * z.values[i];
    vt[i] = ad * x0.values[i] + bd * x1.values[i];
  }
  Grid grid = x0.grid;
  return InterpolantSample{t,
                           std::move(x0),
                           std::move(x1),
                           std::move(z),
                           GridFunction(grid, std::move(xt)),
                           GridFunction(grid, std::move(vt))};
}

PairedInterpolantSample sample_interpolant(const ScheduleSet& s, double t, PairedFunction x0,
                                           PairedFunction x1, PairedFunction z) {
  InterpolantSample c0 = sample_interpolant(s, t, x0.channel0, x1.channel0, z.channel0);
  InterpolantSample c1 = sample_interpolant(s, t, x0.channel1, x1.channel1, z.channel1);
  return PairedInterpolantSample{
      t,
      PairedFunction(std::move(c0.x0), std::move(c1.x0)),
      PairedFunction(std::move(c0.x1), std::move(c1.x1)),
      PairedFunction(std::move(c0.z), std::move(c1.z)),
      PairedFunction(std::move(c0.xt), std::move(c1.xt)),
      PairedFunction(std::move(c0.velocity_target), std::move(c1.velocity_target))};
}

PairedFunction embed_first(const GridFunction& f) {
  return PairedFunction(f, GridFunction::zeros(f.grid));
}

PairedFunction embed_second(const GridFunction& f) {
  return PairedFunction(GridFunction::zeros(f.grid), f);
}

GridFunction assemble_drift(const GridFunction& phi, const GridFunction& eta,
                            const ScheduleSet& s, const DiffusionParam& d, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw std::domain_error(
        "drift assembly requires t in (0,1); use the re-expressed form at endpoints");
  if (phi.grid != eta.grid) throw std::invalid_argument("drift assembly: grid mismatch");
  const double coeff = s.gamma_dot(t) - d.epsilon / s.gamma(t);
  return axpy(coeff, eta, phi);
}

PairedFunction assemble_drift(const PairedFunction& phi, const PairedFunction& eta,
                              const ScheduleSet& s, const DiffusionParam& d, double t) {
  return PairedFunction(assemble_drift(phi.channel0, eta.channel0, s, d, t),
                        assemble_drift(phi.channel1, eta.channel1, s, d, t));
}

GaussianCoupling::GaussianCoupling(Grid grid, Eigen::MatrixXd s00, Eigen::MatrixXd s01,
                                   Eigen::MatrixXd s11, GaussianField noise)
    : grid_(std::move(grid)),
      s00_(std::move(s00)),
      s01_(std::move(s01)),
      s11_(std::move(s11)),
      noise_(std::move(noise)) {
  const auto n = static_cast<Eigen::Index>(grid_.n());
  if (s00_.rows() != n || s00_.cols() != n || s01_.rows() != n || s01_.cols() != n ||
      s11_.rows() != n || s11_.cols() != n)
    throw std::invalid_argument("coupling: covariance blocks must be n x n");
  if (noise_.grid() != grid_) throw std::invalid_argument("coupling: noise grid differs");

  Eigen::MatrixXd joint(2 * n, 2 * n);
  joint.topLeftCorner(n, n) = s00_;
  joint.topRightCorner(n, n) = s01_;
  joint.bottomLeftCorner(n, n) = s01_.transpose();
  joint.bottomRightCorner(n, n) = s11_;
  const double scale = std::max(joint.cwiseAbs().maxCoeff(), 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(joint, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success)
    throw numerical_error("coupling: eigenvalue check failed to converge");
  if (eig.eigenvalues().minCoeff() < -1e-8 * scale)
    throw std::invalid_argument("coupling: joint covariance is not positive semidefinite");

  s00_solve_s01_ = solve_spd(s00_, s01_, "coupling S00 solve");
  cond_cov_ = s11_ - s01_.transpose() * s00_solve_s01_;
  cond_cov_ = 0.5 * (cond_cov_ + cond_cov_.transpose()).eval();
  joint_chol_ = spd_factor(joint).matrixL();
}

GaussianCoupling GaussianCoupling::linear_map(const GaussianField& field0,
                                              const Eigen::MatrixXd& a, double noise_var,
                                              const RbfKernel& w_kernel, GaussianField noise) {
  const Grid& grid = field0.grid();
  const Eigen::MatrixXd& s00 = field0.gram();
  Eigen::MatrixXd s01 = s00 * a.transpose();
  Eigen::MatrixXd s11 = a * s01 + noise_var * kernel_gram(grid, w_kernel);
  s11 = 0.5 * (s11 + s11.transpose()).eval();
  return GaussianCoupling(grid, s00, std::move(s01), std::move(s11), std::move(noise));
}

GaussianCoupling GaussianCoupling::verification(const Grid& grid) {
  GaussianField field0(grid, RbfKernel(0.2));
  Eigen::MatrixXd a =
      1.5 / static_cast<double>(grid.n()) * kernel_gram(grid, RbfKernel(0.1));
  GaussianField noise(grid, RbfKernel(0.1));
  return linear_map(field0, a, 0.09, RbfKernel(0.2), std::move(noise));
}

GridFunction GaussianCoupling::conditional_mean(const GridFunction& x0) const {
  if (x0.grid != grid_) throw std::invalid_argument("conditional_mean: grid mismatch");
  const auto n = static_cast<Eigen::Index>(grid_.n());
  GridFunction out = GridFunction::zeros(grid_);
  Eigen::Map<Eigen::VectorXd>(out.values.data(), n) =
      s00_solve_s01_.transpose() * Eigen::Map<const Eigen::VectorXd>(x0.values.data(), n);
  return out;
}

std::pair<GridFunction, GridFunction> GaussianCoupling::sample_pair(RandomStream& rng) const {
  const auto n = static_cast<Eigen::Index>(grid_.n());
  Eigen::VectorXd xi(2 * n);
  for (Eigen::Index i = 0; i < 2 * n; ++i) xi[i] = rng.normal();
  Eigen::VectorXd y = joint_chol_ * xi;
  GridFunction x0 = GridFunction::zeros(grid_), x1 = GridFunction::zeros(grid_);
  Eigen::Map<Eigen::VectorXd>(x0.values.data(), n) = y.head(n);
  Eigen::Map<Eigen::VectorXd>(x1.values.data(), n) = y.tail(n);
  return {std::move(x0), std::move(x1)};
}

GaussianCoupling GaussianCoupling::swapped() const {
  return GaussianCoupling(grid_, s11_, s01_.transpose(), s00_, noise_);
}

Eigen::VectorXd posterior_mean_blocks(const Eigen::MatrixXd& s00, const Eigen::MatrixXd& s01,
                                      const Eigen::MatrixXd& s11, const Eigen::MatrixXd& k,
                                      double alpha, double beta, double gamma,
                                      const Eigen::VectorXd& x0, const Eigen::VectorXd& x,
                                      double* jitter_used) {
  if (jitter_used) *jitter_used = 0.0;
  Eigen::MatrixXd s00_inv_s01 = solve_spd(s00, s01, "posterior S00 solve");
  Eigen::VectorXd m = s00_inv_s01.transpose() * x0;
  if (beta == 0.0) return m;  // x carries no signal about x1 yet
  Eigen::MatrixXd sigma = s11 - s01.transpose() * s00_inv_s01;
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  Eigen::MatrixXd s = beta * beta * sigma + gamma * gamma * k;
  Eigen::VectorXd r = x - alpha * x0 - beta * m;
  auto llt = spd_factor(s, jitter_used);
  return m + beta * (sigma * llt.solve(r));
}

GridFunction oracle_posterior_mean(const GaussianCoupling& g, const ScheduleSet& s, double t,
                                   const GridFunction& x0, const GridFunction& x) {
  if (x0.grid != g.grid() || x.grid != g.grid())
    throw std::invalid_argument("posterior mean: grid mismatch");
  const auto n = static_cast<Eigen::Index>(g.grid().n());
  Eigen::Map<const Eigen::VectorXd> v0(x0.values.data(), n), vx(x.values.data(), n);
  const double a = s.alpha(t), b = s.beta(t), gam = s.gamma(t);
  Eigen::VectorXd m = g.s00_solve_s01().transpose() * v0;
  GridFunction out = GridFunction::zeros(g.grid());
  if (b == 0.0) {  // x carries no signal about x1 yet
    Eigen::Map<Eigen::VectorXd>(out.values.data(), n) = m;
    return out;
  }
  Eigen::MatrixXd S = b * b * g.conditional_cov() + gam * gam * g.noise().gram();
  Eigen::VectorXd r = vx - a * v0 - b * m;
  auto llt = spd_factor(S);
  Eigen::Map<Eigen::VectorXd>(out.values.data(), n) =
      m + b * (g.conditional_cov() * llt.solve(r));
  return out;
}

GridFunction oracle_velocity(const GaussianCoupling& g, const ScheduleSet& s, double t,
                             const GridFunction& x0, const GridFunction& x) {
  const GridFunction mhat = oracle_posterior_mean(g, s, t, x0, x);
  const double ad = s.alpha_dot(t), bd = s.beta_dot(t);
  GridFunction out = GridFunction::zeros(x0.grid);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = ad * x0.values[i] + bd * mhat.values[i];
  return out;
}

GridFunction oracle_denoiser(const GaussianCoupling& g, const ScheduleSet& s, double t,
                             const GridFunction& x0, const GridFunction& x) {
  if (!(t > 0.0 && t < 1.0))
    throw std::domain_error("oracle denoiser quotient requires t in (0,1)");
  const GridFunction mhat = oracle_posterior_mean(g, s, t, x0, x);
  const double a = s.alpha(t), b = s.beta(t), gam = s.gamma(t);
  GridFunction out = GridFunction::zeros(x0.grid);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = (x.values[i] - a * x0.values[i] - b * mhat.values[i]) / gam;
  return out;
}

struct GaussianBridgeOracle::Shared {
  GaussianCoupling coupling;
  ScheduleSet schedules;

  struct Factor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    bool usable = false;
  };
  std::map<double, Factor> factors;

  Shared(GaussianCoupling c, ScheduleSet s) : coupling(std::move(c)), schedules(s) {}

  // Posterior mean of x1 given (x0, x_t = x); `innovation` receives the
  // solved residual S^{-1}(x - alpha x0 - beta m), reused by the denoiser.
  void posterior(double t, const Eigen::Map<const Eigen::VectorXd>& x0,
                 const Eigen::Map<const Eigen::VectorXd>& x, Eigen::VectorXd& mhat,
                 Eigen::VectorXd& innovation) {
    const double a = schedules.alpha(t), b = schedules.beta(t), g = schedules.gamma(t);
    Eigen::VectorXd m = coupling.s00_solve_s01().transpose() * x0;
    if (b == 0.0 && g == 0.0) {
      mhat = std::move(m);
      innovation.setZero(x0.size());
      return;
    }
    Factor& f = factor_at(t, b, g);
    if (!f.usable)
      throw numerical_error("bridge innovation matrix not positive definite after jitter ladder");
    Eigen::VectorXd r = x - a * x0 - b * m;
    innovation = f.llt.solve(r);
    mhat = m + b * (coupling.conditional_cov() * innovation);
  }

  Factor& factor_at(double t, double b, double g) {
    auto it = factors.find(t);
    if (it != factors.end()) return it->second;
    // Bound the cache: solver runs touch O(steps) distinct times, but Monte
    // Carlo loops with fresh random times would otherwise grow it unboundedly.
    if (factors.size() >= 1024) factors.clear();
    Eigen::MatrixXd s = b * b * coupling.conditional_cov() + g * g * coupling.noise().gram();
    const double scale = std::max(s.cwiseAbs().maxCoeff(), 1.0);
    Factor f;
    for (double jitter : {0.0, 1e-12, 1e-10, 1e-8, 1e-6}) {
      Eigen::MatrixXd sj = s;
      sj.diagonal().array() += jitter * scale;
      f.llt.compute(sj);
      if (f.llt.info() == Eigen::Success) {
        f.usable = true;
        break;
      }
    }
    return factors.emplace(t, std::move(f)).first->second;
  }
};

namespace {

class OracleVelocityField : public FieldMap {
 public:
  explicit OracleVelocityField(std::shared_ptr<GaussianBridgeOracle::Shared> s)
      : shared_(std::move(s)) {}
  const Grid& grid() const override { return shared_->coupling.grid(); }
  int n_channels() const override { return 1; }
  void eval(double t, std::span<const double> x0, std::span<const double> x,
            std::span<double> out) const override {
    const auto n = static_cast<Eigen::Index>(grid().n());
    Eigen::Map<const Eigen::VectorXd> v0(x0.data(), n), vx(x.data(), n);
    Eigen::VectorXd mhat, innovation;
    shared_->posterior(t, v0, vx, mhat, innovation);
    Eigen::Map<Eigen::VectorXd>(out.data(), n) =
        shared_->schedules.alpha_dot(t) * v0 + shared_->schedules.beta_dot(t) * mhat;
  }

 private:
  std::shared_ptr<GaussianBridgeOracle::Shared> shared_;
};

class OracleDenoiserField : public FieldMap {
 public:
  explicit OracleDenoiserField(std::shared_ptr<GaussianBridgeOracle::Shared> s)
      : shared_(std::move(s)) {}
  const Grid& grid() const override { return shared_->coupling.grid(); }
  int n_channels() const override { return 1; }
  void eval(double t, std::span<const double> x0, std::span<const double> x,
            std::span<double> out) const override {
    const auto n = static_cast<Eigen::Index>(grid().n());
    const double g = shared_->schedules.gamma(t);
    Eigen::Map<Eigen::VectorXd> vout(out.data(), n);
    if (g == 0.0) {
      vout.setZero();
      return;
    }
    Eigen::Map<const Eigen::VectorXd> v0(x0.data(), n), vx(x.data(), n);
    Eigen::VectorXd mhat, innovation;
    shared_->posterior(t, v0, vx, mhat, innovation);
    // E[z | x0, x_t] = gamma K S^{-1} (x - alpha x0 - beta m): the division by
    // gamma in (x - alpha x0 - beta mhat)/gamma cancels exactly, so the field
    // extends continuously to zero as gamma -> 0.
    vout = g * (shared_->coupling.noise().gram() * innovation);
  }

 private:
  std::shared_ptr<GaussianBridgeOracle::Shared> shared_;
};

}  // namespace

GaussianBridgeOracle::GaussianBridgeOracle(GaussianCoupling coupling, ScheduleSet s)
    : shared_(std::make_shared<Shared>(std::move(coupling), s)),
      velocity_(std::make_unique<OracleVelocityField>(shared_)),
      denoiser_(std::make_unique<OracleDenoiserField>(shared_)) {}

const FieldMap& GaussianBridgeOracle::velocity() const { return *velocity_; }
const FieldMap& GaussianBridgeOracle::denoiser() const { return *denoiser_; }
const GaussianCoupling& GaussianBridgeOracle::shared_impl_coupling() const {
  return shared_->coupling;
}

GridFunction oracle_drift(const GaussianCoupling& g, const ScheduleSet& s,
                          const DiffusionParam& d, double t, const GridFunction& x0,
                          const GridFunction& x) {
  if (!(t > 0.0 && t < 1.0)) throw std::domain_error("oracle drift requires t in (0,1)");
  const double gam = s.gamma(t);
  const double ct = (s.gamma_dot(t) * gam - d.epsilon) / (gam * gam);
  GridFunction mhat = oracle_posterior_mean(g, s, t, x0, x);
  const double ca = s.alpha_dot(t) - s.alpha(t) * ct;
  const double cb = s.beta_dot(t) - s.beta(t) * ct;
  GridFunction out = GridFunction::zeros(x0.grid);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = ca * x0.values[i] + cb * mhat.values[i] + ct * x.values[i];
  return out;
}

void ZeroConditionField::eval(double t, std::span<const double>, std::span<const double> x,
                              std::span<double> out) const {
  std::vector<double> zeros(x.size(), 0.0);
  inner_.eval(t, zeros, x, out);
}

}  // namespace hsi
