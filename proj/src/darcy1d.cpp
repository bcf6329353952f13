#include "hsi/darcy1d.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "hsi/errors.hpp"
#include "hsi/gaussian_field.hpp"

namespace hsi {

namespace {

// Interior residual R_j = -(F_{j+1/2} - F_{j-1/2})/h - u_j for j = 1..n-2,
// with face flux F = (0.2 + avg^2) * (psi_r - psi_l)/h, avg = (psi_l+psi_r)/2.
void residual(const std::vector<double>& psi, const std::vector<double>& u, double h,
              std::vector<double>& flux, std::vector<double>& r) {
  const int n = static_cast<int>(psi.size());
  for (int f = 0; f < n - 1; ++f) {
    const double avg = 0.5 * (psi[f + 1] + psi[f]);
    flux[f] = (0.2 + avg * avg) * (psi[f + 1] - psi[f]) / h;
  }
  for (int j = 1; j <= n - 2; ++j) r[j - 1] = -(flux[j] - flux[j - 1]) / h - u[j];
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Tridiagonal Jacobian of the interior residual. Row j (unknown psi_j):
//   dR_j/dpsi_{j-1} = +dF_{j-1/2}/dpsi_{j-1} / h
//   dR_j/dpsi_j     = -(dF_{j+1/2}/dpsi_j - dF_{j-1/2}/dpsi_j) / h
//   dR_j/dpsi_{j+1} = -dF_{j+1/2}/dpsi_{j+1} / h
// with, per face, dF/dpsi_right = avg*d + a/h and dF/dpsi_left = avg*d - a/h
// where d = (psi_r - psi_l)/h and a = 0.2 + avg^2.
void jacobian(const std::vector<double>& psi, double h, std::vector<double>& lower,
              std::vector<double>& main_diag, std::vector<double>& upper) {
  const int n = static_cast<int>(psi.size());
  std::vector<double> df_dr(n - 1), df_dl(n - 1);
  for (int f = 0; f < n - 1; ++f) {
    const double avg = 0.5 * (psi[f + 1] + psi[f]);
    const double a = 0.2 + avg * avg;
    const double d = (psi[f + 1] - psi[f]) / h;
    df_dr[f] = avg * d + a / h;
    df_dl[f] = avg * d - a / h;
  }
  const int m = n - 2;  // interior unknowns
  for (int j = 1; j <= m; ++j) {
    main_diag[j - 1] = -(df_dl[j] - df_dr[j - 1]) / h;
    if (j < m) upper[j - 1] = -df_dr[j] / h;
    if (j > 1) lower[j - 2] = df_dl[j - 1] / h;
  }
}

// Thomas algorithm for a tridiagonal system; overwrites scratch vectors.
void thomas(const std::vector<double>& lower, const std::vector<double>& main_diag,
            const std::vector<double>& upper, const std::vector<double>& rhs,
            std::vector<double>& c, std::vector<double>& d, std::vector<double>& x) {
  const int m = static_cast<int>(main_diag.size());
  c[0] = (m > 1) ? upper[0] / main_diag[0] : 0.0;
  d[0] = rhs[0] / main_diag[0];
  for (int i = 1; i < m; ++i) {
    const double piv = main_diag[i] - lower[i - 1] * c[i - 1];
    c[i] = (i < m - 1) ? upper[i] / piv : 0.0;
    d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / piv;
  }
  x[m - 1] = d[m - 1];
  for (int i = m - 2; i >= 0; --i) x[i] = d[i] - c[i] * x[i + 1];
}

}  // namespace

GridFunction solve_darcy(const GridFunction& u, NewtonStats* stats) {
  const Grid& grid = u.grid;
  const int n = grid.n();
  if (n < 3) throw numerical_error("solve_darcy: grid must have at least 3 nodes");
  for (double x : u.values)
    if (!std::isfinite(x)) throw numerical_error("solve_darcy: forcing is not finite");
  const double h = grid.spacing();
  const int m = n - 2;

  std::vector<double> psi(n, 0.0), trial(n, 0.0);
  std::vector<double> flux(n - 1), r(m), r_trial(m);
  std::vector<double> lower(m - 1), main_diag(m), upper(m - 1);
  std::vector<double> rhs(m), c(m), d(m), delta(m);

  NewtonStats local;
  NewtonStats& st = stats ? *stats : local;
  st = NewtonStats{};

  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 50;
  for (int it = 0; it < kMaxIter; ++it) {
    residual(psi, u.values, h, flux, r);
    const double rn = max_abs(r);
    st.residual_history.push_back(rn);
    if (rn < kTol) {
      st.iterations = it;
      st.final_residual = rn;
      return GridFunction(grid, std::move(psi));
    }
    jacobian(psi, h, lower, main_diag, upper);
    for (int i = 0; i < m; ++i) rhs[i] = -r[i];
    thomas(lower, main_diag, upper, rhs, c, d, delta);

    double lam = 1.0;
    bool accepted = false;
    for (int back = 0; back < 30; ++back) {
      trial = psi;
      for (int i = 0; i < m; ++i) trial[i + 1] += lam * delta[i];
      residual(trial, u.values, h, flux, r_trial);
      if (max_abs(r_trial) <= (1.0 - 1e-4 * lam) * rn) {
        psi.swap(trial);
        accepted = true;
        break;
      }
      lam *= 0.5;
    }
    if (!accepted) {
      st.iterations = it;
      st.final_residual = rn;
      throw numerical_error("solve_darcy: line search failed at residual " +
                            std::to_string(rn));
    }
  }
  residual(psi, u.values, h, flux, r);
  st.iterations = kMaxIter;
  st.final_residual = max_abs(r);
  throw numerical_error("solve_darcy: no convergence after 50 iterations, residual " +
                        std::to_string(st.final_residual));
}

Dataset generate_darcy_dataset(const Grid& grid, int n_samples, std::uint64_t seed,
                               double length_scale, DarcyGenerationReport* report) {
  if (n_samples < 1) throw std::invalid_argument("generate_darcy_dataset: n_samples >= 1");
  GaussianField field(grid, RbfKernel(length_scale));
  RandomStream rng(seed);

  Dataset data(grid, 2, n_samples);
  DarcyGenerationReport local;
  DarcyGenerationReport& rep = report ? *report : local;
  rep = DarcyGenerationReport{};

  const int n = grid.n();
  int accepted = 0;
  long draws = 0;
  while (accepted < n_samples) {
    GridFunction u = field.sample(rng);
    ++draws;
    NewtonStats stats;
    GridFunction psi = GridFunction::zeros(grid);
    bool ok = true;
    try {
      psi = solve_darcy(u, &stats);
    } catch (const numerical_error&) {
      ok = false;
    }
    if (!ok) {
      ++rep.n_resampled;
      // 1% failure budget, assessed against all draws so far (minimum 100
      // draws before the rate test can trip, so tiny datasets are not
      // aborted by a single unlucky draw).
      if (draws >= 100 && rep.n_resampled * 100 > draws)
        throw numerical_error(
            "generate_darcy_dataset: resample rate exceeds 1% (" +
            std::to_string(rep.n_resampled) + "/" + std::to_string(draws) +
            " draws failed)");
      continue;
    }
    rep.max_iterations = std::max(rep.max_iterations, stats.iterations);
    double scale = 0.0;
    for (double x : psi.values) scale = std::max(scale, std::abs(x));
    rep.max_solution_abs = std::max(rep.max_solution_abs, scale);
    double* row0 = data.channel(accepted, 0);
    double* row1 = data.channel(accepted, 1);
    for (int i = 0; i < n; ++i) {
      row0[i] = u.values[i];
      row1[i] = psi.values[i];
    }
    ++accepted;
  }
  // Final rate check covers short runs that never reached 100 draws mid-loop.
  if (rep.n_resampled * 100 > draws && draws >= 100)
    throw numerical_error("generate_darcy_dataset: resample rate exceeds 1%");
  return data;
}

}  // namespace hsi
