#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hsi/schedules.hpp"

using namespace hsi;

namespace {

const ScheduleSet kSched(0.01);
const DiffusionParam kOde = DiffusionParam::ode();
const DiffusionParam kSde = DiffusionParam::half_b(kSched);

}  // namespace

TEST_CASE("coefficient schedules take their closed-form values") {
  CHECK(kSched.alpha(0.3) == 0.7);
  CHECK(kSched.beta(0.3) == 0.3);
  CHECK(kSched.alpha_dot(0.44) == -1.0);
  CHECK(kSched.beta_dot(0.44) == 1.0);
  // gamma(1/2) = sqrt(0.01 * 0.25) = 0.05 exactly
  CHECK(kSched.gamma(0.5) == 0.05);
  CHECK(kSched.gamma(0.0) == 0.0);
  CHECK(kSched.gamma(1.0) == 0.0);
  // gamma_dot * gamma = b(1-2t)/2 extends continuously to the endpoints
  CHECK(kSched.gamma_dot_gamma(0.0) == 0.005);
  CHECK(kSched.gamma_dot_gamma(1.0) == -0.005);
  CHECK(kSched.gamma_dot(0.5) == 0.0);
  CHECK(kSched.gamma_dot(0.25) ==
        doctest::Approx(0.005 * 0.5 / kSched.gamma(0.25)).epsilon(1e-15));
  CHECK_THROWS_AS(kSched.gamma_dot(0.0), std::domain_error);
  CHECK_THROWS_AS(kSched.gamma_dot(1.0), std::domain_error);
  CHECK_THROWS_AS(kSched.alpha(1.5), std::domain_error);
  CHECK_THROWS_AS(ScheduleSet(0.0), std::invalid_argument);
}

TEST_CASE("gamma is symmetric bitwise on a dyadic time grid") {
  // Both t = j/256 and 1 - t are exactly representable, and t(1-t) is formed
  // by one multiply, so the symmetry holds with equality rather than within a
  // tolerance.
  for (int j = 0; j <= 256; ++j) {
    const double t = static_cast<double>(j) / 256.0;
    CHECK(kSched.gamma(t) == kSched.gamma(1.0 - t));
  }
}

TEST_CASE("drift weight c(t) matches hand values") {
  // c = gamma_dot - eps / gamma; at t = 1/2 with eps = b/2:
  // 0 - 0.005 / 0.05 = -0.1 exactly.
  CHECK(c_coeff(kSched, kSde, 0.5) == -0.1);
  CHECK(c_coeff(kSched, kSde, 0.9) == doctest::Approx(-0.3).epsilon(1e-14));
  CHECK_THROWS_AS(c_coeff(kSched, kSde, 0.0), std::domain_error);
  CHECK_THROWS_AS(c_coeff(kSched, kSde, 1.0), std::domain_error);
  CHECK(epsilon_is_half_b(kSched, kSde));
  CHECK(!epsilon_is_half_b(kSched, DiffusionParam(0.0037)));
  CHECK_THROWS_AS(DiffusionParam(-1e-9), std::invalid_argument);
}

TEST_CASE("family names parse and round-trip") {
  for (TimeChangeFamily f :
       {TimeChangeFamily::identity, TimeChangeFamily::poly_right, TimeChangeFamily::poly_both,
        TimeChangeFamily::exp_right, TimeChangeFamily::exp_both})
    CHECK(parse_time_change_family(time_change_family_name(f)) == f);
  CHECK_THROWS_AS(parse_time_change_family("cubic"), std::invalid_argument);
}

TEST_CASE("polynomial time changes follow their closed forms") {
  TimeChange pr = make_time_change(TimeChangeFamily::poly_right, kSched, kSde);
  TimeChange pb = make_time_change(TimeChangeFamily::poly_both, kSched, kOde);
  TimeChange id = make_time_change(TimeChangeFamily::identity, kSched, kSde);
  for (int j = 0; j <= 64; ++j) {
    const double t = static_cast<double>(j) / 64.0;
    CHECK(pr.theta(t) == doctest::Approx(2 * t - t * t).epsilon(1e-15));
    CHECK(pr.theta_dot(t) == doctest::Approx(2 * (1 - t)).epsilon(1e-15));
    CHECK(pb.theta(t) == doctest::Approx(3 * t * t - 2 * t * t * t).epsilon(1e-15));
    CHECK(pb.theta_dot(t) == doctest::Approx(6 * t * (1 - t)).epsilon(1e-15));
    CHECK(id.theta(t) == t);
    CHECK(id.theta_dot(t) == 1.0);
  }
  // endpoint pinning is exact for every family
  for (TimeChangeFamily f :
       {TimeChangeFamily::identity, TimeChangeFamily::poly_right, TimeChangeFamily::poly_both,
        TimeChangeFamily::exp_right, TimeChangeFamily::exp_both}) {
    TimeChange tc = make_time_change(f, kSched, kSde);
    CHECK(tc.theta(0.0) == 0.0);
    CHECK(tc.theta(1.0) == 1.0);
    CHECK_THROWS_AS(tc.theta(-0.1), std::domain_error);
    CHECK_THROWS_AS(tc.theta(1.0001), std::domain_error);
  }
}

TEST_CASE("complement of theta uses cancellation-free closed forms") {
  TimeChange pr = make_time_change(TimeChangeFamily::poly_right, kSched, kSde);
  TimeChange pb = make_time_change(TimeChangeFamily::poly_both, kSched, kOde);
  TimeChange id = make_time_change(TimeChangeFamily::identity, kSched, kSde);
  for (int j = 0; j <= 64; ++j) {
    const double t = static_cast<double>(j) / 64.0;
    const double u = 1.0 - t;
    CHECK(pr.theta_complement(t) == u * u);
    CHECK(pb.theta_complement(t) == u * u * (1.0 + 2.0 * t));
    CHECK(id.theta_complement(t) == u);
  }
  // near t = 1 the closed form resolves magnitudes the subtraction cannot:
  // 1 - theta(1 - 1e-12) rounds to ~1e-16 noise while the true value is 1e-24.
  const double t = 1.0 - 1e-12;
  CHECK(pr.theta_complement(t) == doctest::Approx(1e-24).epsilon(1e-3));
  TimeChange er = make_time_change(TimeChangeFamily::exp_right, kSched, kSde);
  CHECK(er.theta_complement(0.25) ==
        doctest::Approx(1.0 - er.theta(0.25)).epsilon(1e-15));
}

TEST_CASE("exponential time changes match adaptive-quadrature references") {
  TimeChange er = make_time_change(TimeChangeFamily::exp_right, kSched, kSde);
  TimeChange eb = make_time_change(TimeChangeFamily::exp_both, kSched, kOde);
  // reference values computed by adaptive quadrature of the weight functions
  // exp(-1/(1-t)) and exp(-1/(t(1-t))), frozen to 16 digits
  CHECK(er.theta(0.25) == doctest::Approx(5.3511354775724984e-01).epsilon(1e-12));
  CHECK(er.theta(0.5) == doctest::Approx(8.7361819008729602e-01).epsilon(1e-12));
  CHECK(er.theta(0.75) == doctest::Approx(9.9461561275694899e-01).epsilon(1e-12));
  CHECK(eb.theta(0.25) == doctest::Approx(3.1754957727637770e-02).epsilon(1e-12));
  CHECK(eb.theta(0.5) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(eb.theta(0.75) == doctest::Approx(9.6824504227236241e-01).epsilon(1e-12));
  // theta_dot = weight / Z with Z_right = 1.4849550677592205e-01 and
  // Z_both = 7.0298584066096573e-03
  CHECK(er.theta_dot(0.0) == doctest::Approx(2.4773775931588826).epsilon(1e-12));
  CHECK(er.theta_dot(0.5) == doctest::Approx(0.9113762845419426).epsilon(1e-12));
  CHECK(er.theta_dot(1.0) == 0.0);
  CHECK(eb.theta_dot(0.5) == doctest::Approx(2.6054065145200269).epsilon(1e-12));
  CHECK(eb.theta_dot(0.0) == 0.0);
  CHECK(eb.theta_dot(1.0) == 0.0);
}

TEST_CASE("inverse undoes theta across families") {
  for (TimeChangeFamily f :
       {TimeChangeFamily::identity, TimeChangeFamily::poly_right, TimeChangeFamily::poly_both,
        TimeChangeFamily::exp_right, TimeChangeFamily::exp_both}) {
    TimeChange tc = make_time_change(f, kSched, kSde);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9})
      CHECK(tc.inverse(tc.theta(t)) == doctest::Approx(t).epsilon(1e-9));
    CHECK(tc.inverse(0.0) == 0.0);
    CHECK(tc.inverse(1.0) == 1.0);
    CHECK(tc.inverse_table().size() == 4097);
  }
}

TEST_CASE("admissibility depends on the family and on whether eps = b/2") {
  struct Row {
    TimeChangeFamily family;
    bool ok_ode, ok_sde;
  };
  // With eps = b/2 the left endpoint cancels, so only right-side decay is
  // needed; with eps = 0 both endpoints need the time change to flatten.
  const Row rows[] = {
      {TimeChangeFamily::identity, false, false},
      {TimeChangeFamily::poly_right, false, true},
      {TimeChangeFamily::poly_both, true, true},
      {TimeChangeFamily::exp_right, false, true},
      {TimeChangeFamily::exp_both, true, true},
  };
  for (const Row& r : rows) {
    TimeChange t0 = make_time_change(r.family, kSched, kOde);
    TimeChange t1 = make_time_change(r.family, kSched, kSde);
    CHECK(validate_time_change(t0, kSched, kOde).valid() == r.ok_ode);
    CHECK(validate_time_change(t1, kSched, kSde).valid() == r.ok_sde);
  }
  // the left-endpoint condition is skipped entirely when eps = b/2
  TimeChange pr = make_time_change(TimeChangeFamily::poly_right, kSched, kSde);
  ValidityReport rep = validate_time_change(pr, kSched, kSde);
  CHECK(!rep.near_zero.evaluated);
  CHECK(rep.near_one.evaluated);
}

TEST_CASE("reparameterized drift weight takes its closed endpoint values") {
  TimeChange pr = make_time_change(TimeChangeFamily::poly_right, kSched, kSde);
  TimeChange pb0 = make_time_change(TimeChangeFamily::poly_both, kSched, kOde);
  TimeChange pb1 = make_time_change(TimeChangeFamily::poly_both, kSched, kSde);

  // theta = 2t - t^2 with eps = b/2 gives c(theta)*theta_dot = -2 sqrt(b t(2-t)):
  // 0 at t=0, -2 sqrt(b) = -0.2 at t=1, -sqrt(3b) at t=1/2.
  CHECK(chat_coeff(pr, kSched, kSde, 0.0) == 0.0);
  CHECK(chat_coeff(pr, kSched, kSde, 1.0) == doctest::Approx(-0.2).epsilon(1e-14));
  CHECK(chat_coeff(pr, kSched, kSde, 0.5) ==
        doctest::Approx(-std::sqrt(0.03)).epsilon(1e-14));

  // theta = 3t^2 - 2t^3: +sqrt(3b) / -sqrt(3b) at the endpoints when eps = 0,
  // 0 / -2 sqrt(3b) when eps = b/2.
  const double s3b = std::sqrt(0.03);
  CHECK(chat_coeff(pb0, kSched, kOde, 0.0) == doctest::Approx(s3b).epsilon(1e-14));
  CHECK(chat_coeff(pb0, kSched, kOde, 1.0) == doctest::Approx(-s3b).epsilon(1e-14));
  CHECK(chat_coeff(pb1, kSched, kSde, 0.0) == 0.0);
  CHECK(chat_coeff(pb1, kSched, kSde, 1.0) == doctest::Approx(-2 * s3b).epsilon(1e-14));

  // exponential decays kill the endpoint weight entirely
  TimeChange er = make_time_change(TimeChangeFamily::exp_right, kSched, kSde);
  TimeChange eb = make_time_change(TimeChangeFamily::exp_both, kSched, kOde);
  CHECK(std::abs(chat_coeff(er, kSched, kSde, 1.0)) < 1e-40);
  CHECK(std::abs(chat_coeff(eb, kSched, kOde, 0.0)) < 1e-40);
  CHECK(std::abs(chat_coeff(eb, kSched, kOde, 1.0)) < 1e-40);

  // interior evaluation agrees with the definition c(theta(t)) * theta_dot(t)
  for (double t : {0.2, 0.5, 0.8})
    CHECK(chat_coeff(pr, kSched, kSde, t) ==
          doctest::Approx(c_coeff(kSched, kSde, pr.theta(t)) * pr.theta_dot(t))
              .epsilon(1e-14));

  // the identity schedule is inadmissible: endpoints throw...
  TimeChange id = make_time_change(TimeChangeFamily::identity, kSched, kSde);
  CHECK_THROWS_AS(chat_coeff(id, kSched, kSde, 0.0), std::domain_error);
  CHECK_THROWS_AS(chat_coeff(id, kSched, kSde, 1.0), std::domain_error);
  // ...while the interior still evaluates
  CHECK(chat_coeff(id, kSched, kSde, 0.5) == -0.1);
}

TEST_CASE("unchecked weight clamps the endpoints to enormous finite values") {
  TimeChange id = make_time_change(TimeChangeFamily::identity, kSched, kSde);
  // measured once and frozen: the clamp at 1 - 1e-12 gives |c| near
  // 0.01/gamma(1-1e-12) ~ 1e5
  CHECK(chat_coeff_unchecked(id, kSched, kSde, 1.0) ==
        doctest::Approx(-100001.10610430781).epsilon(1e-9));
  // at t = 0 the eps = b/2 cancellation leaves a near-zero value even clamped
  CHECK(std::abs(chat_coeff_unchecked(id, kSched, kSde, 0.0)) < 1e-6);
  TimeChange id0 = make_time_change(TimeChangeFamily::identity, kSched, kOde);
  CHECK(chat_coeff_unchecked(id0, kSched, kOde, 0.0) ==
        doctest::Approx(49999.999999925007).epsilon(1e-9));
  CHECK(chat_coeff_unchecked(id0, kSched, kOde, 1.0) ==
        doctest::Approx(-50000.553052103904).epsilon(1e-9));
  // interior values agree with the checked path
  TimeChange pb = make_time_change(TimeChangeFamily::poly_both, kSched, kOde);
  for (double t : {0.25, 0.5, 0.75})
    CHECK(chat_coeff_unchecked(pb, kSched, kOde, t) ==
          doctest::Approx(chat_coeff(pb, kSched, kOde, t)).epsilon(1e-12));
}

TEST_CASE("sup diagnostic separates admissible schedules from the identity") {
  TimeChange pr = make_time_change(TimeChangeFamily::poly_right, kSched, kSde);
  TimeChange pb = make_time_change(TimeChangeFamily::poly_both, kSched, kOde);
  TimeChange id = make_time_change(TimeChangeFamily::identity, kSched, kSde);

  const double pr5 = chat_sup_diagnostic(pr, kSched, kSde, 100000);
  const double pr6 = chat_sup_diagnostic(pr, kSched, kSde, 1000000);
  const double pb5 = chat_sup_diagnostic(pb, kSched, kOde, 100000);
  const double pb6 = chat_sup_diagnostic(pb, kSched, kOde, 1000000);
  const double id5 = chat_sup_diagnostic(id, kSched, kSde, 100000);
  const double id6 = chat_sup_diagnostic(id, kSched, kSde, 1000000);

  // admissible sups sit on their endpoint values, stable under refinement
  CHECK(pr5 == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(std::abs(pr6 - pr5) / pr5 < 0.01);
  CHECK(pb5 == doctest::Approx(std::sqrt(0.03)).epsilon(1e-10));
  CHECK(std::abs(pb6 - pb5) / pb5 < 0.01);

  // the identity sup tracks the densest grid point: |c| ~ 0.1/sqrt(d) with
  // d = N^{-5/2}, so refining 10x multiplies the sup by ~10^{5/4} = 17.8
  CHECK(id6 > 10.0 * id5);
  CHECK(id6 / id5 == doctest::Approx(std::pow(10.0, 1.25)).epsilon(0.01));
  CHECK_THROWS_AS(chat_sup_diagnostic(id, kSched, kSde, 1), std::invalid_argument);
}
