#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hsi/bridge.hpp"
#include "hsi/gaussian_field.hpp"
#include "hsi/random.hpp"
#include "hsi/schedules.hpp"

namespace hsi {

// em1: explicit Euler-Maruyama.
// em2: stochastic predictor-corrector; predictor and corrector share one
//      Brownian increment per step (exactly one noise draw per step).
// heun: same trapezoidal corrector but a deterministic predictor; noise is
//      added once after correction. With eps = 0 both reduce to classical
//      Heun, second order on smooth problems.
enum class Stepper { em1, em2, heun };

Stepper parse_stepper(std::string_view name);
std::string_view stepper_name(Stepper s);

// Everything needed to evaluate the time-changed bridge dynamics
//   dx = [theta_dot(t) * phi(theta(t), x0, x) + chat(t) * eta(theta(t), x0, x)] dt
//        + sqrt(2 * eps * theta_dot(t)) dW,
// which stays finite at t = 0, 1 for admissible (family, eps) pairs because
// chat carries the continuous endpoint extension.
struct BridgeDynamics {
  BridgeDynamics(const FieldMap& velocity_field, const FieldMap& denoiser_field,
                 ScheduleSet schedules_in, DiffusionParam diffusion_in, TimeChange tc)
      : velocity(&velocity_field),
        denoiser(&denoiser_field),
        schedules(schedules_in),
        diffusion(diffusion_in),
        time_change(std::move(tc)) {}

  const FieldMap* velocity;
  const FieldMap* denoiser;
  ScheduleSet schedules;
  DiffusionParam diffusion;
  TimeChange time_change;
  const GaussianField* noise = nullptr;  // required when diffusion.epsilon > 0
  // Ablation escape hatch: clamp the endpoint coefficient instead of
  // demanding admissibility, so invalid schedules run (and diverge on the
  // state) rather than throw.
  bool unchecked_coefficients = false;
};

// Writes the drift above into `out`; `scratch` is resized as needed and holds
// the denoiser value. Throws std::domain_error at t in {0,1} for inadmissible
// schedules unless dyn.unchecked_coefficients is set.
void time_changed_drift(const BridgeDynamics& dyn, double t, std::span<const double> x0,
                        std::span<const double> x, std::span<double> out,
                        std::vector<double>& scratch);

// sqrt(2 * eps * theta_dot(t) * dt) * (channel-wise Cholesky draw); fills
// `out` with zeros when eps == 0 without consuming randomness.
void noise_increment(const BridgeDynamics& dyn, double t, double dt, RandomStream& rng,
                     std::span<double> out);

struct Trajectory {
  std::vector<double> times;                // uniform grid k/T in changed time
  std::vector<std::vector<double>> states;  // flat [channel][sensor]; terminal only
                                            // unless keep_path was set
  int nonfinite_step = -1;                  // 0-based index of the first bad step
  bool finite() const { return nonfinite_step < 0; }
  const std::vector<double>& terminal() const { return states.back(); }
};

struct SolverOptions {
  int steps = 100;
  Stepper stepper = Stepper::em2;
  bool keep_path = false;
  // When set (default), a non-finite state raises hsi::numerical_error naming
  // the step; otherwise integration stops and the step index is recorded.
  bool throw_on_nonfinite = true;
};

// Integrates one path from t=0 to t=1; x0 is both the initial state and the
// conditioning argument fed to the drift fields at every step.
Trajectory sample_trajectory(const BridgeDynamics& dyn, const std::vector<double>& x0,
                             const SolverOptions& opt, RandomStream& rng);

struct BatchResult {
  Eigen::MatrixXd terminal;  // one row per path, flat [channel][sensor]
  int nonfinite_step = -1;   // first offending step over the whole batch
  int nonfinite_path = -1;
};

// Independent paths; path p uses rng.split(p), so results do not depend on
// batch size or ordering.
BatchResult sample_batch(const BridgeDynamics& dyn, const Eigen::MatrixXd& x0_batch,
                         const SolverOptions& opt, const RandomStream& rng);

// The same steppers on a plain deterministic ODE dx/dt = rhs(t, x) over
// [0,1]; em2 and heun coincide here. Used by the convergence-order checks.
using OdeRhs = std::function<void(double, const std::vector<double>&, std::vector<double>&)>;
std::vector<double> integrate_ode(const OdeRhs& rhs, std::vector<double> x0, int steps,
                                  Stepper stepper);

}  // namespace hsi
