#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <span>
#include <utility>

#include "hsi/function_space.hpp"
#include "hsi/gaussian_field.hpp"
#include "hsi/random.hpp"
#include "hsi/schedules.hpp"

namespace hsi {

// One draw of the stochastic bridge x_t = alpha x0 + beta x1 + gamma z at a
// fixed time, along with the bounded regression targets used for training:
// velocity_target = alpha_dot x0 + beta_dot x1, denoiser target = z itself.
template <typename V>
struct InterpolantDraw {
  double t;
  V x0, x1, z, xt, velocity_target;
};
using InterpolantSample = InterpolantDraw<GridFunction>;
using PairedInterpolantSample = InterpolantDraw<PairedFunction>;

InterpolantSample sample_interpolant(const ScheduleSet& s, double t,
                                     GridFunction x0, GridFunction x1, GridFunction z);
PairedInterpolantSample sample_interpolant(const ScheduleSet& s, double t,
                                           PairedFunction x0, PairedFunction x1,
                                           PairedFunction z);

// Product-space embeddings for heterogeneous pairs: input functions occupy
// channel 0, outputs channel 1, so x0' = (x0, 0) and x1' = (0, x1).
PairedFunction embed_first(const GridFunction& f);
PairedFunction embed_second(const GridFunction& f);

// Time-conditioned operator field (t, x0, x) -> value, the common shape of
// oracle conditional expectations and learned models. Values are flat
// [channel][sensor] arrays of n_channels()*grid().n() doubles.
class FieldMap {
 public:
  virtual ~FieldMap() = default;
  virtual const Grid& grid() const = 0;
  virtual int n_channels() const = 0;
  virtual void eval(double t, std::span<const double> x0, std::span<const double> x,
                    std::span<double> out) const = 0;
};

// f = phi + (gamma_dot - eps/gamma) * eta, t in (0,1)
GridFunction assemble_drift(const GridFunction& phi, const GridFunction& eta,
                            const ScheduleSet& s, const DiffusionParam& d, double t);
PairedFunction assemble_drift(const PairedFunction& phi, const PairedFunction& eta,
                              const ScheduleSet& s, const DiffusionParam& d, double t);

// Jointly Gaussian coupling of (x0, x1) given by covariance blocks over the
// grid, plus the bridge noise field. The joint covariance must be PSD
// (eigenvalues >= -1e-8 tolerated and clipped by the jitter ladder on use).
class GaussianCoupling {
 public:
  GaussianCoupling(Grid grid, Eigen::MatrixXd s00, Eigen::MatrixXd s01,
                   Eigen::MatrixXd s11, GaussianField noise);

  // x1 = A x0 + w with x0 ~ N(0, Gram(field0)), w ~ N(0, noise_var * Gram(w_kernel))
  static GaussianCoupling linear_map(const GaussianField& field0, const Eigen::MatrixXd& a,
                                     double noise_var, const RbfKernel& w_kernel,
                                     GaussianField noise);

  // Canned coupling used by the verification command and the transport tests:
  // Sigma00 = Gram(0.2), A = 1.5*Gram(0.1)/n, w-cov = 0.09*Gram(0.2), bridge
  // noise C = Gram(0.1). Its conditional covariance equals the w-covariance.
  static GaussianCoupling verification(const Grid& grid);

  const Grid& grid() const { return grid_; }
  const GaussianField& noise() const { return noise_; }
  const Eigen::MatrixXd& s00() const { return s00_; }
  const Eigen::MatrixXd& s01() const { return s01_; }
  const Eigen::MatrixXd& s11() const { return s11_; }

  GridFunction conditional_mean(const GridFunction& x0) const;  // S10 S00^-1 x0
  const Eigen::MatrixXd& conditional_cov() const { return cond_cov_; }
  const Eigen::MatrixXd& s00_solve_s01() const { return s00_solve_s01_; }

  std::pair<GridFunction, GridFunction> sample_pair(RandomStream& rng) const;

  GaussianCoupling swapped() const;  // roles of x0 and x1 exchanged

 private:
  Grid grid_;
  Eigen::MatrixXd s00_, s01_, s11_;
  GaussianField noise_;
  Eigen::MatrixXd s00_solve_s01_;  // S00^{-1} S01
  Eigen::MatrixXd cond_cov_;
  Eigen::MatrixXd joint_chol_;     // 2n x 2n factor for pair sampling
};

// E[x1 | x0, x_t = x] on Eigen vectors; exposed at matrix level so that the
// scalar (1x1) case is directly testable against hand formulas. S00/S01/S11
// are the coupling blocks, k the noise Gram matrix. Writes the jitter used
// for the innovation solve if requested.
Eigen::VectorXd posterior_mean_blocks(const Eigen::MatrixXd& s00, const Eigen::MatrixXd& s01,
                                      const Eigen::MatrixXd& s11, const Eigen::MatrixXd& k,
                                      double alpha, double beta, double gamma,
                                      const Eigen::VectorXd& x0, const Eigen::VectorXd& x,
                                      double* jitter_used = nullptr);

GridFunction oracle_posterior_mean(const GaussianCoupling& g, const ScheduleSet& s,
                                   double t, const GridFunction& x0, const GridFunction& x);

// Pointwise conditional expectations at interior times, computed from the
// same posterior mean as oracle_drift:
//   oracle_velocity = alpha_dot x0 + beta_dot E[x1|x0,x_t=x]
//   oracle_denoiser = E[z|x0,x_t=x] = (x - alpha x0 - beta E[x1|x0,x_t=x]) / gamma
// The denoiser here is the direct quotient, valid for t in (0,1); the
// GaussianBridgeOracle fields below use the algebraically cancelled form
// instead so that solvers can evaluate them at the endpoints.
GridFunction oracle_velocity(const GaussianCoupling& g, const ScheduleSet& s, double t,
                             const GridFunction& x0, const GridFunction& x);
GridFunction oracle_denoiser(const GaussianCoupling& g, const ScheduleSet& s, double t,
                             const GridFunction& x0, const GridFunction& x);

// Exact conditional-expectation fields of the coupling with per-time factor
// caching (the solver evaluates whole path batches at the same times):
//   velocity(t,x0,x) = alpha_dot x0 + beta_dot E[x1|x0,x_t=x]
//   denoiser(t,x0,x) = E[z|x0,x_t=x], computed in the cancelled form
//                      gamma K (beta^2 Sigma + gamma^2 K)^{-1} r, which
//                      extends continuously (to zero) at gamma = 0.
class GaussianBridgeOracle {
 public:
  GaussianBridgeOracle(GaussianCoupling coupling, ScheduleSet s);

  const GaussianCoupling& coupling() const { return shared_impl_coupling(); }
  const FieldMap& velocity() const;
  const FieldMap& denoiser() const;

  struct Shared;  // implementation detail, public so the field types can bind to it

 private:
  const GaussianCoupling& shared_impl_coupling() const;
  std::shared_ptr<Shared> shared_;
  std::unique_ptr<FieldMap> velocity_, denoiser_;
};

// Full drift f(t,x0,x) in the re-expressed form
//   (alpha_dot - alpha*ct) x0 + (beta_dot - beta*ct) E[x1|x0,x_t=x] + ct x,
// ct = gamma_dot/gamma - eps/gamma^2, t in (0,1).
GridFunction oracle_drift(const GaussianCoupling& g, const ScheduleSet& s,
                          const DiffusionParam& d, double t, const GridFunction& x0,
                          const GridFunction& x);

// Zeroes the conditioning argument before delegating, turning a conditional
// field into its unconditional (marginal-bridge) counterpart.
class ZeroConditionField : public FieldMap {
 public:
  explicit ZeroConditionField(const FieldMap& inner) : inner_(inner) {}
  const Grid& grid() const override { return inner_.grid(); }
  int n_channels() const override { return inner_.n_channels(); }
  void eval(double t, std::span<const double>, std::span<const double> x,
            std::span<double> out) const override;

 private:
  const FieldMap& inner_;
};

}  // namespace hsi
