#pragma once

#include <cstdint>
#include <vector>

#include "hsi/dataset.hpp"
#include "hsi/function_space.hpp"
#include "hsi/random.hpp"

namespace hsi {

// Convergence record of one damped-Newton solve.
struct NewtonStats {
  int iterations = 0;               // Newton updates taken before convergence
  double final_residual = 0.0;      // max-abs residual at acceptance
  std::vector<double> residual_history;  // max-abs residual before each update
};

// Solves the nonlinear two-point boundary value problem
//   -d/dw[(0.2 + psi(w)^2) dpsi/dw] = u(w)  on (0,1),  psi(0) = psi(1) = 0,
// with a second-order flux discretization on the nodes of u's grid:
// face flux F_{j+1/2} = a_{j+1/2} (psi_{j+1} - psi_j)/h with the coefficient
// a = 0.2 + ((psi_{j+1}+psi_j)/2)^2 evaluated from the arithmetic node mean.
// Damped Newton with an analytic tridiagonal Jacobian and Armijo
// backtracking (step halved up to 30 times, sufficient-decrease factor
// 1 - 1e-4 * step); initial guess psi = 0; converged when max|R| < 1e-10,
// at most 50 iterations.
//
// Throws hsi::numerical_error on non-convergence or line-search failure;
// `stats`, if non-null, is filled in both on success and on failure.
GridFunction solve_darcy(const GridFunction& u, NewtonStats* stats = nullptr);

// Bookkeeping from a dataset generation run.
struct DarcyGenerationReport {
  int n_resampled = 0;         // forcing draws discarded for non-convergence
  int max_iterations = 0;      // worst Newton iteration count over all solves
  double max_solution_abs = 0.0;  // largest max|psi| over all solves
};

// Draws `n_samples` forcings u from a zero-mean Gaussian random field with
// squared-exponential kernel of the given length scale, solves each for psi,
// and returns the raw (unnormalized) two-channel dataset with channel 0 = u
// and channel 1 = psi. Draws whose solve fails are discarded and replaced
// with fresh draws; if more than 1% of all draws fail, throws
// hsi::numerical_error (a failure rate that high indicates a bug rather
// than bad luck).
Dataset generate_darcy_dataset(const Grid& grid, int n_samples, std::uint64_t seed,
                               double length_scale = 0.05,
                               DarcyGenerationReport* report = nullptr);

}  // namespace hsi
