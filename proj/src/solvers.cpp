#include "hsi/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "hsi/errors.hpp"

namespace hsi {

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

Stepper parse_stepper(std::string_view name) {
  if (name == "em1") return Stepper::em1;
  if (name == "em2") return Stepper::em2;
  if (name == "heun") return Stepper::heun;
  throw std::invalid_argument("unknown stepper '" + std::string(name) +
                              "' (expected em1, em2 or heun)");
}

std::string_view stepper_name(Stepper s) {
  switch (s) {
    case Stepper::em1: return "em1";
    case Stepper::em2: return "em2";
    case Stepper::heun: return "heun";
  }
  throw std::invalid_argument("unknown stepper enum value");
}

void time_changed_drift(const BridgeDynamics& dyn, double t, std::span<const double> x0,
                        std::span<const double> x, std::span<double> out,
                        std::vector<double>& scratch) {
  const double th = dyn.time_change.theta(t);
  const double td = dyn.time_change.theta_dot(t);
  const double chat =
      dyn.unchecked_coefficients
          ? chat_coeff_unchecked(dyn.time_change, dyn.schedules, dyn.diffusion, t)
          : chat_coeff(dyn.time_change, dyn.schedules, dyn.diffusion, t);
  dyn.velocity->eval(th, x0, x, out);
  for (double& v : out) v *= td;
  if (chat != 0.0) {
    scratch.resize(out.size());
    dyn.denoiser->eval(th, x0, x, scratch);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += chat * scratch[i];
  }
}

void noise_increment(const BridgeDynamics& dyn, double t, double dt, RandomStream& rng,
                     std::span<double> out) {
  if (dyn.diffusion.epsilon == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  if (dyn.noise == nullptr)
    throw std::invalid_argument("noise_increment: eps > 0 requires a noise field");
  const double amp = std::sqrt(2.0 * dyn.diffusion.epsilon * dyn.time_change.theta_dot(t) * dt);
  const std::size_t n = static_cast<std::size_t>(dyn.noise->grid().n());
  if (out.size() % n != 0)
    throw std::invalid_argument("noise_increment: state size not a channel multiple");
  for (std::size_t c = 0; c * n < out.size(); ++c) {
    auto chan = out.subspan(c * n, n);
    dyn.noise->sample_into(rng, chan);
    for (double& v : chan) v *= amp;
  }
}

Trajectory sample_trajectory(const BridgeDynamics& dyn, const std::vector<double>& x0,
                             const SolverOptions& opt, RandomStream& rng) {
  if (opt.steps < 1) throw std::invalid_argument("solver: steps must be >= 1");
  const std::size_t expected =
      static_cast<std::size_t>(dyn.velocity->n_channels()) *
      static_cast<std::size_t>(dyn.velocity->grid().n());
  if (x0.size() != expected)
    throw std::invalid_argument("solver: initial state size does not match the drift field");

  const int T = opt.steps;
  const double dt = 1.0 / T;
  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(x0);

  std::vector<double> x = x0, d0(x.size()), d1(x.size()), w(x.size()), xp(x.size());
  std::vector<double> scratch;
  for (int k = 0; k < T; ++k) {
    const double t0 = static_cast<double>(k) / T;
    const double t1 = static_cast<double>(k + 1) / T;
    time_changed_drift(dyn, t0, x0, x, d0, scratch);
    noise_increment(dyn, t0, dt, rng, w);
    switch (opt.stepper) {
      case Stepper::em1:
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * d0[i] + w[i];
        break;
      case Stepper::em2:
        for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + dt * d0[i] + w[i];
        time_changed_drift(dyn, t1, x0, xp, d1, scratch);
        for (std::size_t i = 0; i < x.size(); ++i)
          x[i] += 0.5 * dt * (d0[i] + d1[i]) + w[i];
        break;
      case Stepper::heun:
        for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + dt * d0[i];
        time_changed_drift(dyn, t1, x0, xp, d1, scratch);
        for (std::size_t i = 0; i < x.size(); ++i)
          x[i] += 0.5 * dt * (d0[i] + d1[i]) + w[i];
        break;
    }
    if (!all_finite(x)) {
      traj.nonfinite_step = k;
      if (opt.throw_on_nonfinite) {
        std::ostringstream msg;
        msg << "non-finite state after step " << k << " (t = " << t1 << ")";
        throw numerical_error(msg.str());
      }
      if (opt.keep_path) {
        traj.times.push_back(t1);
        traj.states.push_back(x);
      }
      break;
    }
    if (opt.keep_path) {
      traj.times.push_back(t1);
      traj.states.push_back(x);
    }
  }
  if (!opt.keep_path) {
    traj.times.push_back(1.0);
    traj.states.push_back(std::move(x));
  }
  return traj;
}

BatchResult sample_batch(const BridgeDynamics& dyn, const Eigen::MatrixXd& x0_batch,
                         const SolverOptions& opt, const RandomStream& rng) {
  const auto paths = x0_batch.rows();
  BatchResult out;
  out.terminal.resize(paths, x0_batch.cols());
  SolverOptions path_opt = opt;
  path_opt.keep_path = false;
  std::vector<double> x0(static_cast<std::size_t>(x0_batch.cols()));
  for (Eigen::Index p = 0; p < paths; ++p) {
    Eigen::Map<Eigen::VectorXd>(x0.data(), x0_batch.cols()) = x0_batch.row(p);
    RandomStream path_rng = rng.split(static_cast<std::uint64_t>(p));
    Trajectory traj = sample_trajectory(dyn, x0, path_opt, path_rng);
    out.terminal.row(p) =
        Eigen::Map<const Eigen::VectorXd>(traj.terminal().data(), x0_batch.cols());
    if (!traj.finite() && out.nonfinite_step < 0) {
      out.nonfinite_step = traj.nonfinite_step;
      out.nonfinite_path = static_cast<int>(p);
    }
  }
  return out;
}

std::vector<double> integrate_ode(const OdeRhs& rhs, std::vector<double> x0, int steps,
                                  Stepper stepper) {
  if (steps < 1) throw std::invalid_argument("integrate_ode: steps must be >= 1");
  const double dt = 1.0 / steps;
  std::vector<double> x = std::move(x0), d0(x.size()), d1(x.size()), xp(x.size());
  for (int k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) / steps;
    const double t1 = static_cast<double>(k + 1) / steps;
    rhs(t0, x, d0);
    if (stepper == Stepper::em1) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += dt * d0[i];
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) xp[i] = x[i] + dt * d0[i];
      rhs(t1, xp, d1);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += 0.5 * dt * (d0[i] + d1[i]);
    }
  }
  return x;
}

}  // namespace hsi
