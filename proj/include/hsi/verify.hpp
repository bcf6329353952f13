#pragma once

#include <iosfwd>

#include "hsi/config.hpp"

namespace hsi {

// Self-contained property suite over the analytically tractable Gaussian
// coupling: interpolant identities, posterior-mean formulas, the two drift
// assemblies agreeing, endpoint coefficients, schedule admissibility, sampler
// fidelity, solver convergence orders, and a small transport run whose
// terminal law is known in closed form. Prints one PASS/FAIL line per
// property with the measured values. Returns true when everything passed.
bool run_verification_suite(const RunConfig& cfg, std::ostream& out);

}  // namespace hsi
