#pragma once

#include <cstdint>
#include <vector>

#include "potential.hpp"

namespace kamqm {

struct FlowSample {
  double t = 0.0;
  PhasePoint x;  // q unwrapped in R^d
};

struct Trajectory {
  std::vector<FlowSample> samples;
  double energy_drift = 0.0;  // max |H(x(t)) - H(x(0))| over all steps
  double dt = 0.0;
};

double hamiltonian(const Potential& v, const PhasePoint& x);

/// Kick-drift-kick leapfrog for p' = -grad V, q' = p, position unwrapped.
/// Records every `record_every`-th step (0: endpoints only). Throws
/// StepTooLarge when the drift exceeds 1e-4 (E - V_min).
Trajectory integrate_flow(const Potential& v, const PhasePoint& x0, double T, double dt, int record_every = 0);

struct VelocityEstimate {
  Vec value;                 // (q(T) - q(0)) / T
  double window_T = 0.0;
  double uncertainty = 0.0;  // |avg[0,T] - avg[T/2,T]|
  bool converged = false;
  double dt_used = 0.0;
  double energy_drift = 0.0;
};

/// Birkhoff average of p through the position increment. dt is halved (up to
/// six times) while the drift bound fails; converged means uncertainty below
/// rel_tol * sqrt(2 (E - V_min)).
VelocityEstimate asymptotic_velocity(const Potential& v, const PhasePoint& x0, double T, double dt,
                                     double rel_tol = 1e-2);

struct LiouvilleSample {
  std::vector<PhasePoint> points;
  std::uint64_t proposals = 0;
  double box_volume = 0.0;      // |cell| * |ball of radius sqrt(2 (b - V_min))|
  double volume = 0.0;          // box_volume * acceptance
  double volume_error = 0.0;    // one Monte Carlo sigma
};

/// Uniform Liouville samples of {a <= H <= b} by rejection from
/// cell x momentum ball, using mt19937_64(seed). Throws EmptyShell when 10^6
/// proposals produce no acceptance.
LiouvilleSample sample_liouville(const Potential& v, double a, double b, std::size_t n_samples,
                                 std::uint64_t seed);

/// Weighted atoms in (energy, velocity) space R^{d+1}.
struct EmpiricalMeasure {
  int dimension = 1;
  std::vector<double> weights;
  Mat points;  // (d + 1) x n_atoms, row 0 = energy
  double total_mass = 0.0;
  double unconverged_fraction = 0.0;
  // Rejection-sampling metadata (zero for deterministic measures): the
  // measure equals box_volume / proposals times the sum over accepted atoms.
  double mc_box_volume = 0.0;
  std::uint64_t mc_proposals = 0;

  std::size_t size() const { return weights.size(); }
  void add(double w, const Vec& point);
};

struct ClassicalMeasureOptions {
  double T = 1e4;
  double dt = 1e-3;
  double rel_tol = 1e-2;
  int workers = 0;
};

EmpiricalMeasure classical_measure(const Potential& v, double a, double b, std::size_t n_samples,
                                   std::uint64_t seed, const ClassicalMeasureOptions& opt = {});

/// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::uint64_t x) { return static_cast<double>(x >> 11) * 0x1.0p-53; }

}  // namespace kamqm
