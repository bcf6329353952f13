#include "hsi/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hsi/errors.hpp"

namespace hsi {

namespace {
constexpr double kInteriorEps = 0x1.0p-53;  // clamp for fp-boundary theta values
}

ScheduleSet::ScheduleSet(double b) : b_(b) {
  if (!(b > 0.0) || !std::isfinite(b))
    throw std::invalid_argument("ScheduleSet: b must be positive and finite");
}

void ScheduleSet::check_unit(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("ScheduleSet: t must lie in [0,1]");
}

double ScheduleSet::alpha(double t) const { check_unit(t); return 1.0 - t; }
double ScheduleSet::beta(double t) const { check_unit(t); return t; }

double ScheduleSet::gamma(double t) const {
  check_unit(t);
  // symmetric product (t*(1-t)) so gamma(t) == gamma(1-t) bitwise
  return std::sqrt(b_ * (t * (1.0 - t)));
}

double ScheduleSet::alpha_dot(double t) const { check_unit(t); return -1.0; }
double ScheduleSet::beta_dot(double t) const { check_unit(t); return 1.0; }

double ScheduleSet::gamma_dot(double t) const {
  if (!(t > 0.0 && t < 1.0))
    throw std::domain_error("ScheduleSet::gamma_dot: singular at the endpoints");
  return b_ * (1.0 - 2.0 * t) / (2.0 * gamma(t));
}

double ScheduleSet::gamma_dot_gamma(double t) const {
  check_unit(t);
  return b_ * (1.0 - 2.0 * t) / 2.0;
}

ScheduleSet::Coeffs ScheduleSet::eval(double t) const {
  if (!(t > 0.0 && t < 1.0))
    throw std::domain_error("ScheduleSet::eval: gamma_dot undefined at endpoints");
  return {alpha(t), beta(t), gamma(t), alpha_dot(t), beta_dot(t), gamma_dot(t)};
}

DiffusionParam::DiffusionParam(double eps) : epsilon(eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps))
    throw std::invalid_argument("DiffusionParam: epsilon must be >= 0 and finite");
}

bool epsilon_is_half_b(const ScheduleSet& s, const DiffusionParam& d) {
  return d.epsilon == 0.5 * s.b();
}

double c_coeff(const ScheduleSet& s, const DiffusionParam& d, double t) {
  if (!(t > 0.0 && t < 1.0))
    throw std::domain_error("c_coeff: t must lie in (0,1)");
  return s.gamma_dot(t) - d.epsilon / s.gamma(t);
}

// ---- time-change families --------------------------------------------------

TimeChangeFamily parse_time_change_family(std::string_view name) {
  if (name == "identity") return TimeChangeFamily::identity;
  if (name == "poly_right") return TimeChangeFamily::poly_right;
  if (name == "poly_both") return TimeChangeFamily::poly_both;
  if (name == "exp_right") return TimeChangeFamily::exp_right;
  if (name == "exp_both") return TimeChangeFamily::exp_both;
  throw std::invalid_argument("unknown time-change family: " + std::string(name));
}

std::string_view time_change_family_name(TimeChangeFamily f) {
  switch (f) {
    case TimeChangeFamily::identity: return "identity";
    case TimeChangeFamily::poly_right: return "poly_right";
    case TimeChangeFamily::poly_both: return "poly_both";
    case TimeChangeFamily::exp_right: return "exp_right";
    case TimeChangeFamily::exp_both: return "exp_both";
  }
  throw std::logic_error("time_change_family_name: bad enum");
}

namespace {

double weight_exp_right(double t) {
  double omt = 1.0 - t;
  if (omt <= 0.0) return 0.0;
  return std::exp(-1.0 / omt);
}

double weight_exp_both(double t) {
  double tt = t * (1.0 - t);
  if (tt <= 0.0) return 0.0;
  return std::exp(-1.0 / tt);
}

template <typename F>
double simpson(F&& f, double a, double b) {
  return (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
}

template <typename F>
double adaptive_simpson_rec(F&& f, double a, double b, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double left = simpson(f, a, m);
  double right = simpson(f, m, b);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, right, 0.5 * tol, depth - 1);
}

template <typename F>
double adaptive_simpson(F&& f, double a, double b, double tol) {
  return adaptive_simpson_rec(f, a, b, simpson(f, a, b), tol, 40);
}

}  // namespace

struct TimeChange::Impl {
  TimeChangeFamily family;
  // exponential families only:
  double normalization = 1.0;        // integral of the unnormalized weight
  std::vector<double> nodes;         // endpoint-clustered abscissae
  std::vector<double> theta_nodes;   // theta at the nodes
  std::vector<double> slope_nodes;   // theta_dot at the nodes
  std::vector<double> inv_table;     // theta^{-1} at 4097 uniform u

  double weight(double t) const {
    return family == TimeChangeFamily::exp_right ? weight_exp_right(t)
                                                 : weight_exp_both(t);
  }

  double theta_tab(double t) const {
    const int n_seg = static_cast<int>(nodes.size()) - 1;
    // invert the clustering map t_i = (1-cos(pi i/N))/2 to locate the segment
    double x = std::acos(std::clamp(1.0 - 2.0 * t, -1.0, 1.0)) * n_seg /
               3.14159265358979323846;
    int i = std::clamp(static_cast<int>(x), 0, n_seg - 1);
    while (i > 0 && t < nodes[i]) --i;
    while (i < n_seg - 1 && t > nodes[i + 1]) ++i;
    double h = nodes[i + 1] - nodes[i];
    double u = (t - nodes[i]) / h;
    double u2 = u * u, u3 = u2 * u;
    double v = theta_nodes[i] * (2 * u3 - 3 * u2 + 1) +
               h * slope_nodes[i] * (u3 - 2 * u2 + u) +
               theta_nodes[i + 1] * (-2 * u3 + 3 * u2) +
               h * slope_nodes[i + 1] * (u3 - u2);
    return std::clamp(v, theta_nodes[i], theta_nodes[i + 1]);
  }
};

TimeChangeFamily TimeChange::family() const { return impl_->family; }

double TimeChange::theta(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("TimeChange::theta: t must lie in [0,1]");
  switch (impl_->family) {
    case TimeChangeFamily::identity: return t;
    case TimeChangeFamily::poly_right: return t * (2.0 - t);
    case TimeChangeFamily::poly_both: return t * t * (3.0 - 2.0 * t);
    default: return impl_->theta_tab(t);
  }
}

double TimeChange::theta_dot(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("TimeChange::theta_dot: t must lie in [0,1]");
  switch (impl_->family) {
    case TimeChangeFamily::identity: return 1.0;
    case TimeChangeFamily::poly_right: return 2.0 * (1.0 - t);
    case TimeChangeFamily::poly_both: return 6.0 * t * (1.0 - t);
    default: return impl_->weight(t) / impl_->normalization;
  }
}

double TimeChange::theta_complement(double t) const {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("TimeChange::theta_complement: t must lie in [0,1]");
  const double u = 1.0 - t;
  switch (impl_->family) {
    case TimeChangeFamily::identity: return u;
    case TimeChangeFamily::poly_right: return u * u;
    case TimeChangeFamily::poly_both: return u * u * (1.0 + 2.0 * t);
    // the exponential weights vanish faster than any power at t = 1, so the
    // tabulated complement never has to resolve a sub-rounding-unit tail
    default: return 1.0 - impl_->theta_tab(t);
  }
}

double TimeChange::inverse(double u) const {
  if (!(u >= 0.0 && u <= 1.0))
    throw std::domain_error("TimeChange::inverse: u must lie in [0,1]");
  switch (impl_->family) {
    case TimeChangeFamily::identity: return u;
    case TimeChangeFamily::poly_right: return 1.0 - std::sqrt(1.0 - u);
    default: break;
  }
  // bracketed Newton on theta(t) - u (theta is monotone)
  double lo = 0.0, hi = 1.0, t = u;
  for (int it = 0; it < 200; ++it) {
    double v = theta(t) - u;
    if (v > 0.0) hi = t; else lo = t;
    double dv = theta_dot(t);
    double step = dv > 0.0 ? t - v / dv : 0.5 * (lo + hi);
    t = (step > lo && step < hi) ? step : 0.5 * (lo + hi);
    if (hi - lo < 1e-15) break;
  }
  return t;
}

const std::vector<double>& TimeChange::inverse_table() const { return impl_->inv_table; }

TimeChange make_time_change(TimeChangeFamily family, const ScheduleSet& s,
                            const DiffusionParam& d) {
  (void)s; (void)d;  // families are fixed; validity is queried separately
  auto impl = std::make_shared<TimeChange::Impl>();
  impl->family = family;
  if (family == TimeChangeFamily::exp_right || family == TimeChangeFamily::exp_both) {
    const int n_seg = 1 << 14;
    const double pi = 3.14159265358979323846;
    impl->nodes.resize(n_seg + 1);
    for (int i = 0; i <= n_seg; ++i)
      impl->nodes[i] = 0.5 * (1.0 - std::cos(pi * i / n_seg));
    impl->nodes.front() = 0.0;
    impl->nodes.back() = 1.0;

    std::vector<double> cum(n_seg + 1, 0.0);
    for (int i = 1; i <= n_seg; ++i) {
      auto w = [&](double t) { return impl->weight(t); };
      cum[i] = cum[i - 1] +
               adaptive_simpson(w, impl->nodes[i - 1], impl->nodes[i], 1e-16);
    }
    impl->normalization = cum[n_seg];
    if (!(impl->normalization > 0.0))
      throw numerical_error("make_time_change: weight integrated to zero");
    impl->theta_nodes.resize(n_seg + 1);
    impl->slope_nodes.resize(n_seg + 1);
    for (int i = 0; i <= n_seg; ++i) {
      impl->theta_nodes[i] = cum[i] / impl->normalization;
      impl->slope_nodes[i] = impl->weight(impl->nodes[i]) / impl->normalization;
    }
    impl->theta_nodes.back() = 1.0;

    // construction-time monotonicity audit on a dense uniform grid
    TimeChange probe;
    probe.impl_ = impl;
    double prev = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      double v = probe.theta(static_cast<double>(i) / 10000);
      if (v < prev)
        throw numerical_error("make_time_change: tabulated theta not monotone");
      prev = v;
    }
  }
  TimeChange tc;
  tc.impl_ = impl;
  {  // diagnostics table of theta^{-1}
    auto mutable_impl = std::const_pointer_cast<TimeChange::Impl>(tc.impl_);
    mutable_impl->inv_table.resize(4097);
    for (int i = 0; i <= 4096; ++i)
      mutable_impl->inv_table[i] = tc.inverse(static_cast<double>(i) / 4096);
  }
  return tc;
}

namespace {

ValidityCondition sweep_condition(const TimeChange& tc, bool near_one) {
  ValidityCondition c;
  c.evaluated = true;
  double first = 0.0, prev = 0.0, last = 0.0;
  for (int k = 4; k <= 40; ++k) {
    double offset = std::ldexp(1.0, -k);  // 2^-k
    double t = near_one ? 1.0 - offset : offset;
    double q = tc.theta_dot(t) / (2.0 * offset);
    if (k == 4) first = q;
    prev = last;
    last = q;
  }
  c.first_quotient = first;
  c.last_quotient = last;
  c.growth = std::abs(last) / std::max(std::abs(first), 1e-300);
  bool cauchy = std::abs(last - prev) <=
                0.05 * std::max({std::abs(last), std::abs(prev), 1e-12});
  c.pass = cauchy && c.growth <= 10.0;
  return c;
}

}  // namespace

ValidityReport validate_time_change(const TimeChange& tc, const ScheduleSet& s,
                                    const DiffusionParam& d) {
  ValidityReport r;
  r.near_one = sweep_condition(tc, true);
  if (!epsilon_is_half_b(s, d)) r.near_zero = sweep_condition(tc, false);
  return r;
}

double chat_coeff_unchecked(const TimeChange& tc, const ScheduleSet& s,
                            const DiffusionParam& d, double t) {
  double tcl = std::clamp(t, 1e-12, 1.0 - 1e-12);
  double td = tc.theta_dot(tcl);
  if (td == 0.0) return 0.0;
  double th = std::clamp(tc.theta(tcl), kInteriorEps, 1.0 - kInteriorEps);
  return c_coeff(s, d, th) * td;
}

namespace {

// one-sided limit of c(theta(t))*theta_dot(t) on the geometric grid t = endpoint -+ 2^-k
double geometric_limit(const TimeChange& tc, const ScheduleSet& s, const DiffusionParam& d,
                       bool at_one) {
  double prev = 0.0;
  bool have_prev = false;
  for (int k = 4; k <= 46; ++k) {
    double offset = std::ldexp(1.0, -k);
    double t = at_one ? 1.0 - offset : offset;
    double v = chat_coeff_unchecked(tc, s, d, t);
    if (have_prev &&
        std::abs(v - prev) <= 1e-9 * std::max({1.0, std::abs(v), std::abs(prev)}))
      return v;
    prev = v;
    have_prev = true;
  }
  return prev;
}

}  // namespace

double chat_coeff(const TimeChange& tc, const ScheduleSet& s, const DiffusionParam& d,
                  double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("chat_coeff: t must lie in [0,1]");
  if (t > 0.0 && t < 1.0) {
    double td = tc.theta_dot(t);
    if (td == 0.0) return 0.0;
    double th = std::clamp(tc.theta(t), kInteriorEps, 1.0 - kInteriorEps);
    return c_coeff(s, d, th) * td;
  }
  ValidityReport rep = validate_time_change(tc, s, d);
  if (!rep.valid())
    throw std::domain_error(
        "chat_coeff: endpoint evaluation of a schedule that fails validation");
  const double b = s.b();
  const double eps = d.epsilon;
  switch (tc.family()) {
    case TimeChangeFamily::poly_right:
      // valid only with eps == b/2, where c(theta)*theta_dot = -2 sqrt(b t(2-t))
      return t == 0.0 ? 0.0 : -2.0 * std::sqrt(b);
    case TimeChangeFamily::poly_both: {
      double base = std::sqrt(3.0) * (b - 2.0 * eps) / std::sqrt(b);
      return t == 0.0 ? base : base - 2.0 * std::sqrt(3.0 * b);
    }
    case TimeChangeFamily::exp_right:
    case TimeChangeFamily::exp_both:
      return geometric_limit(tc, s, d, t == 1.0);
    case TimeChangeFamily::identity:
      break;  // identity never validates; unreachable
  }
  throw std::logic_error("chat_coeff: unexpected family at endpoint");
}

double chat_sup_diagnostic(const TimeChange& tc, const ScheduleSet& s,
                           const DiffusionParam& d, int n_grid) {
  if (n_grid < 2) throw std::invalid_argument("chat_sup_diagnostic: n_grid too small");
  double sup = 0.0;
  for (int i = 1; i < n_grid; ++i) {
    // (n_grid - i)/n_grid instead of 1 - u: exact for the near-1 tail, where
    // the clustering map's output distance from 1 approaches the ulp scale.
    double u = static_cast<double>(i) / n_grid;
    double v = static_cast<double>(n_grid - i) / n_grid;
    double a = std::pow(u, 2.5);
    double b = std::pow(v, 2.5);
    // near t=1 compute the small distance first so it is not rounded away
    double t = (2 * i <= n_grid) ? a / (a + b) : 1.0 - b / (a + b);
    double td = tc.theta_dot(t);
    if (td == 0.0) continue;
    const double floor = std::numeric_limits<double>::min();
    const double th = std::max(tc.theta(t), floor);
    const double thc = std::max(tc.theta_complement(t), floor);
    // c(theta) assembled from the (theta, 1-theta) pair: with the square-root
    // noise amplitude, gamma = sqrt(b*th*thc) and gamma_dot = b(thc-th)/(2
    // gamma), so c = (b(thc-th)/2 - eps)/gamma. Forming 1-theta by
    // subtraction instead would bottom out at the rounding unit and report
    // noise rather than the true endpoint growth.
    const double g = std::sqrt(s.b() * th * thc);
    const double c = (0.5 * s.b() * (thc - th) - d.epsilon) / g;
    sup = std::max(sup, std::abs(c * td));
  }
  return sup;
}

}  // namespace hsi
