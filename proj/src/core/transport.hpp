#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "bloch.hpp"
#include "classical.hpp"

namespace kamqm {

/// Product bump prod_j (1 - x_j^2)^3 on the box center +- half_width in
/// scaled (e/E, v/sqrt(E)) variables; C^2 with compact support.
struct Bump {
  Vec center;      // d + 1: energy first
  Vec half_width;  // d + 1

  double operator()(const Vec& scaled) const;
  /// Lipschitz constant with respect to the scaled variables.
  double lipschitz() const;
};

struct TestFunctionPanel {
  int dimension = 1;
  std::vector<Bump> functions;

  /// 3 energies x 3 velocity centres per axis, covering e in [0.8, 1.2] and
  /// v in [-1.8, 1.8] (d = 1: 9 functions, d = 2: 27).
  static TestFunctionPanel standard(int dimension);
  /// f_E(e, v) = E^{-d/2} f(e/E, v/sqrt(E)).
  double evaluate(std::size_t i, const Vec& point, double energy_scale) const;
  /// Bounding box of all supports in scaled variables (lo, hi).
  std::pair<Vec, Vec> support_box() const;
};

/// nu^hbar from band sweeps: one atom (E_n, v_n) of weight (2 pi hbar)^d / |K|
/// per grid k and band with E_n in [a, b], so the total mass tends to
/// vol(P_I). Degenerate bands carry velocity 0.
EmpiricalMeasure quantum_measure(const Potential& v, double hbar, double a, double b, const std::vector<Vec>& ks,
                                 int workers = 0);

struct ComparisonReport {
  std::vector<double> integrals_a;
  std::vector<double> integrals_b;
  std::vector<double> differences;  // |a - b| per function
  double discrepancy = 0.0;         // max difference
  // One Monte Carlo sigma per function for a rejection-sampled measure
  // (zero for deterministic measures), and its maximum over the panel.
  std::vector<double> mc_error_a, mc_error_b;
  double mc_error = 0.0;
  double wasserstein = 0.0;  // W1 of normalized velocity marginals on the support box
  bool wasserstein_coarsened = false;
  double mass_a = 0.0, mass_b = 0.0;
  double energy_scale = 1.0;
};

/// Panel integrals of both measures under ballistic scaling. Throws
/// EmptyOverlap when either measure has no atom inside the panel support.
ComparisonReport weak_star_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                                    const TestFunctionPanel& panel, double energy_scale);

/// W1 between two weighted point sets in R^m (weights normalized to 1).
/// m = 1 uses the CDF formula; otherwise an exact transportation solve by
/// successive shortest paths.
double wasserstein1(const Mat& xa, const std::vector<double>& wa, const Mat& xb, const std::vector<double>& wb);

struct SweepCell {
  double energy = 0.0;
  double hbar = 0.0;
  double discrepancy = 0.0;
  double mc_error = 0.0;
  double wasserstein = 0.0;
  double mass_q = 0.0;
  double mass_c = 0.0;
  double unconverged_fraction = 0.0;
  std::string status = "ok";
};

struct SweepOptions {
  double delta = 0.1;          // I = [(1 - delta) E, (1 + delta) E]
  int k_grid = 32;
  std::size_t samples = 20000;
  bool scale_samples = false;  // multiply samples by E / E_list[0]
  std::uint64_t seed = 1;
  ClassicalMeasureOptions classical;
  int workers = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<double> energies;
  std::vector<double> discrepancy;  // smallest-hbar discrepancy per E
  double slope = 0.0;               // fit of log discrepancy vs log E
  bool fitted = false;
  double scaled_ratio = 0.0;        // max/min of discrepancy(E) sqrt(E)
};

/// For each E, compare nu^hbar (for every hbar in its list) with nu on
/// I = [(1 - delta) E, (1 + delta) E]; discrepancy(E) is the smallest-hbar
/// value. The classical side uses one seed for all E.
SweepResult high_energy_sweep(const Potential& v, const std::vector<double>& energies,
                              const std::vector<std::vector<double>>& hbars, const TestFunctionPanel& panel,
                              const SweepOptions& opt);

/// "E hbar discrepancy mass_q mass_c unconverged_fraction" table, plus
/// mc_error, wasserstein and status columns.
void write_sweep_table(std::ostream& out, const SweepResult& r);
/// Plot data: columns "log_E log_discrepancy scaled" per energy.
void write_sweep_plot(std::ostream& out, const SweepResult& r);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace kamqm
