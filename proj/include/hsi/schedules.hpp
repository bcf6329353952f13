#pragma once

#include <memory>
#include <string_view>
#include <vector>

namespace hsi {

// Interpolation coefficient schedules on t in [0,1]:
//   alpha(t) = 1 - t,  beta(t) = t,  gamma(t) = sqrt(b * t(1-t)),  b > 0.
// gamma vanishes at both endpoints with infinite slope, so gamma_dot is only
// defined on the open interval; the product gamma_dot*gamma extends
// continuously to [0,1] and is exposed separately.
class ScheduleSet {
 public:
  explicit ScheduleSet(double b = 0.01);

  double b() const { return b_; }

  double alpha(double t) const;
  double beta(double t) const;
  double gamma(double t) const;
  double alpha_dot(double t) const;
  double beta_dot(double t) const;
  double gamma_dot(double t) const;        // t in (0,1) only
  double gamma_dot_gamma(double t) const;  // b(1-2t)/2, continuous on [0,1]

  struct Coeffs {
    double alpha, beta, gamma, alpha_dot, beta_dot, gamma_dot;
  };
  Coeffs eval(double t) const;  // t in (0,1); includes gamma_dot

 private:
  void check_unit(double t) const;
  double b_;
};

struct DiffusionParam {
  explicit DiffusionParam(double eps);
  static DiffusionParam ode() { return DiffusionParam(0.0); }
  static DiffusionParam half_b(const ScheduleSet& s) { return DiffusionParam(0.5 * s.b()); }
  double epsilon;
};

// True when epsilon equals b/2 exactly (bitwise); this switches off the
// t=0 admissibility condition below.
bool epsilon_is_half_b(const ScheduleSet& s, const DiffusionParam& d);

// Drift coefficient c(t) = gamma_dot(t) - epsilon/gamma(t), t in (0,1).
double c_coeff(const ScheduleSet& s, const DiffusionParam& d, double t);

enum class TimeChangeFamily { identity, poly_right, poly_both, exp_right, exp_both };

TimeChangeFamily parse_time_change_family(std::string_view name);
std::string_view time_change_family_name(TimeChangeFamily f);

// Monotone reparameterization theta: [0,1] -> [0,1], theta(0)=0, theta(1)=1.
// Families (theta_dot up to the normalization making theta(1)=1):
//   identity    theta_dot = 1
//   poly_right  theta_dot ∝ 1-t          (theta = 2t - t^2)
//   poly_both   theta_dot ∝ t(1-t)       (theta = 3t^2 - 2t^3)
//   exp_right   theta_dot ∝ exp(-1/(1-t))
//   exp_both    theta_dot ∝ exp(-1/(t(1-t)))
// Exponential families are normalized by adaptive quadrature and tabulated at
// 2^14+1 endpoint-clustered nodes with monotone cubic interpolation.
class TimeChange {
 public:
  TimeChangeFamily family() const;
  double theta(double t) const;      // t in [0,1]
  double theta_dot(double t) const;  // t in [0,1]
  double inverse(double u) const;    // u in [0,1]

  // 1 - theta(t), using closed forms in 1-t for the polynomial families.
  // Near t = 1 the subtraction 1 - theta(t) is pure rounding noise once the
  // true complement drops below the rounding unit; endpoint diagnostics need
  // the complement computed without that cancellation.
  double theta_complement(double t) const;

  // theta^{-1} sampled at 4097 uniform points of u (diagnostics)
  const std::vector<double>& inverse_table() const;

 private:
  friend TimeChange make_time_change(TimeChangeFamily, const ScheduleSet&, const DiffusionParam&);
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

TimeChange make_time_change(TimeChangeFamily family, const ScheduleSet& s, const DiffusionParam& d);

// Admissibility of a time change for the coefficient pair (s, d), probed on
// the geometric sweep t = 1-2^-k (and t = 2^-k when epsilon != b/2), k=4..40.
// A condition passes when its quotient sequence settles (last two within 5%)
// and fails when it grows by more than 10x over the sweep.
struct ValidityCondition {
  bool evaluated = false;
  bool pass = true;
  double first_quotient = 0.0;
  double last_quotient = 0.0;
  double growth = 0.0;
};
struct ValidityReport {
  ValidityCondition near_one;   // theta_dot/(2(1-t)) as t -> 1
  ValidityCondition near_zero;  // theta_dot/(2t)    as t -> 0, skipped when eps == b/2
  bool valid() const {
    return (!near_one.evaluated || near_one.pass) &&
           (!near_zero.evaluated || near_zero.pass);
  }
};
ValidityReport validate_time_change(const TimeChange& tc, const ScheduleSet& s,
                                    const DiffusionParam& d);

// Time-changed drift coefficient c(theta(t)) * theta_dot(t). In the interior
// this is a direct evaluation (finite for any schedule); at t in {0,1} it is
// the continuous extension (closed form where available, one-sided geometric
// limit for the exponential families) and throws std::domain_error when the
// schedule fails validation.
double chat_coeff(const TimeChange& tc, const ScheduleSet& s, const DiffusionParam& d,
                  double t);

// Raw evaluation with arguments clamped to the representable interior
// [1e-12, 1-1e-12]; never throws for t in [0,1]. This is what lets
// inadmissible schedules run in ablations: their endpoint coefficients come
// out enormous but finite, and divergence is then detected on the state.
double chat_coeff_unchecked(const TimeChange& tc, const ScheduleSet& s,
                            const DiffusionParam& d, double t);

// sup over an endpoint-clustered diagnostic grid of |c(theta)*theta_dot|; the
// map t = u^p/(u^p+(1-u)^p) with p = 5/2 drives grid points toward the
// endpoints at rate N^(-5/2) so that inadmissible schedules reveal unbounded
// growth under grid refinement while admissible ones stabilize. The exponent
// is chosen so the closest grid point still has a representable distance from
// 1.0 in double precision at N = 10^6 (N^(-5/2) = 1e-15 > 2^-53); a steeper
// map would collapse the near-endpoint tail onto t = 1.0 exactly and hide the
// growth. Unlike chat_coeff_unchecked, the evaluation here is unclamped,
// assembling c from (theta, theta_complement) so the near-endpoint values are
// exact rather than rounding noise.
double chat_sup_diagnostic(const TimeChange& tc, const ScheduleSet& s,
                           const DiffusionParam& d, int n_grid);

}  // namespace hsi
