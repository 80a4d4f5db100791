#pragma once

#include <string>
#include <vector>

#include "bloch.hpp"
#include "kam.hpp"

namespace kamqm {

/// KAM tori for an energy window [a, b], with the accepted-action set used to
/// decide which momenta hbar (l* + k) carry quasimodes.
///
/// d = 1: accepted actions are the rotational intervals +-[P(a'), P(b)],
/// a' = max(a, separatrix, energy where the scaled frequency reaches gamma).
/// d = 2: accepted actions are the scan cells whose representative Newton
/// torus converged with margin >= gamma.
class TorusFamily {
 public:
  TorusFamily(Potential v, double a, double b, DiophantineParams params, NewtonOptions newton = {},
              int grid_size = 32, int workers = 0);

  const Potential& potential() const { return v_; }
  int dimension() const { return v_.dimension(); }
  double a() const { return a_; }
  double b() const { return b_; }
  /// Centre energy used for the ballistic scaling and gamma.
  double energy() const { return 0.5 * (a_ + b_); }
  const DiophantineParams& params() const { return params_; }
  /// gamma in physical angle-frequency units (sqrt(E) times the scaled one).
  double physical_gamma() const;

  /// Torus with action P in physical variables, with d_P S_po.
  KamTorus torus_at(const Vec& P) const;
  /// Distance from P to the accepted-action set (infinity when empty).
  double distance_to_accepted(const Vec& P) const;
  /// Bounding box of the accepted actions (lo, hi); empty set gives lo > hi.
  std::pair<Vec, Vec> accepted_box() const;
  /// Up to max_count physical actions spread over the accepted set (d = 1:
  /// both momentum signs, evenly in |P|; d = 2: a stride through the cells).
  std::vector<Vec> representative_actions(std::size_t max_count) const;

  double shell_volume() const { return shell_volume_; }
  /// vol(K_I) and vol(P_I) - vol(K_I).
  double kam_volume() const { return kam_volume_; }
  double complement_volume() const { return std::max(0.0, shell_volume_ - kam_volume_); }

 private:
  Potential v_;
  double a_, b_;
  DiophantineParams params_;
  NewtonOptions newton_;
  double shell_volume_ = 0.0;
  double kam_volume_ = 0.0;
  // d = 1
  double p_lo_ = 0.0, p_hi_ = -1.0;
  // d = 2: accepted tori (scaled actions J) and their cells, boxes of edge
  // cell_width_ about each center
  std::vector<Vec> accepted_J_;
  std::vector<Vec> accepted_centers_;
  Vec cell_width_;
};

struct AdmissibleSet {
  Vec k;
  double hbar = 0.0;
  double alpha = 0.0;
  std::vector<std::vector<int>> members;  // dual indices l*
  std::vector<Vec> actions;               // hbar (B* l* + k)
};

/// Default alpha: midpoint of (1, (tau - d)/d). beta = 1 - alpha d/(tau - d).
double default_alpha(int dimension, double tau);
double beta_exponent(int dimension, double tau, double alpha);

AdmissibleSet admissible_momenta(const Vec& k, double hbar, double alpha, const TorusFamily& family);

/// Leading amplitude on an angle grid of the torus.
struct LeadingAmplitude {
  TorusGrid grid;
  std::vector<double> A0;        // sqrt|det(I - d_q d_P S_po)|
  std::vector<double> measure;   // A0^2 / mean(A0^2): density of mu_P w.r.t. dq/|cell|
  std::vector<double> theta_Q;   // grid.size() x d, angle coordinates L^{-1}(q - d_P S_po)
  double min_det = 0.0;
};

/// Throws DegenerateJacobian when min |det| <= 1e-6.
LeadingAmplitude leading_amplitude(const KamTorus& torus, const Lattice& lattice, const TorusGrid& grid);

/// Solution of T_P A = f + E A0 on the torus: E = -mean_Q(f/A0) and
/// A = A0 sum_{m != 0} (f/A0)^_m / <omega, m> e^{i m.theta_Q}.
struct TransportResult {
  std::vector<cplx> A;  // on the amplitude grid
  double E = 0.0;
  double residual = 0.0;  // sup |T A - f - E A0| on the grid
};

TransportResult transport_solve(const KamTorus& torus, const Lattice& lattice, const LeadingAmplitude& lead,
                                const std::vector<cplx>& f, double gamma_physical = 0.0, double tau = 3.0);

/// Sup norm of T_P A on the grid (T_P A0 = 0 for an invariant torus).
std::vector<cplx> apply_transport(const KamTorus& torus, const Lattice& lattice, const TorusGrid& grid,
                                  const std::vector<cplx>& A);

struct Quasimode {
  std::vector<int> label;  // l*
  Vec k;
  double hbar = 0.0;
  int order = 0;  // N
  KamTorus torus;
  TorusGrid amplitude_grid;
  std::vector<std::vector<cplx>> amplitudes;  // A_0..A_N on amplitude_grid
  std::vector<double> energies;               // E_0..E_{N+1}, E_1 = 0
  double energy = 0.0;                        // sum hbar^j E_j
  double transport_residual = 0.0;
  CVec coefficients;  // normalized, in the band basis
  PlaneWaveBasis basis;
  double residual = 0.0;  // ||(H(k) - E~) psi~|| in the truncated basis
  int synthesis_grid = 0;
};

/// Build the order-N quasimode for label l* on the torus with action
/// hbar (l* + k), expanded in `basis`. `H` may pass the precomputed fiber.
Quasimode assemble_quasimode(const TorusFamily& family, std::span<const int> label, const Vec& k, double hbar,
                             int order, const PlaneWaveBasis& basis, const CMat* H = nullptr);

/// Defect of (S(q + l) - S(q))/hbar - <k, l> from 2 pi Z over the basis
/// vectors l, at a few sample points.
double phase_periodicity_defect(const Quasimode& qm, const Lattice& lattice);

/// Quasimodes of every admissible member, in member order. Members whose
/// torus cannot be built (below the separatrix, small divisors, no Newton
/// convergence) are skipped; their labels and reasons go to `skipped`.
struct QuasimodeFamily {
  std::vector<Quasimode> modes;
  std::vector<std::vector<int>> skipped;
  std::vector<std::string> reasons;
};

QuasimodeFamily assemble_family(const TorusFamily& family, const AdmissibleSet& set, int order,
                                const BandSpectrum& spec, int workers = 0);

struct MatchReport {
  int nearest = -1;
  double nearest_energy = 0.0;
  double distance = 0.0;        // |E_n - E~|
  double spectral_slack = 0.0;  // rounding allowance used in the check
  bool spectral_ok = false;     // distance <= residual + slack
  double mu = 0.0;              // distance from E~ to the rest of the spectrum
  int window_count = 0;         // eigenvalues in [E~ - hbar^p, E~ + hbar^p]
  bool simple = false;
  double overlap = 0.0;         // |<psi_n, psi~>|
  double aligned_distance = 0.0;  // ||psi~ - e^{i theta} psi_n||
  double eq1_bound = 0.0;       // 2 residual / mu
  bool eq1_ok = false;
};

/// Throws WindowUnresolved when the spectrum does not reach E~ + hbar^p.
MatchReport residual_and_match(const Quasimode& qm, const BandSpectrum& spec, double window_exponent = 2.0);

struct SeparationMatch {
  std::size_t member = 0;  // position in the family
  int band = -1;
  double distance = 0.0;
  double overlap = 0.0;
  double aligned_distance = 0.0;
  double bound = 0.0;  // 2 residual / hbar^N
  bool bound_ok = false;
};

struct SeparationReport {
  std::vector<std::size_t> lambda;
  std::vector<std::size_t> separated;  // G-Lambda
  std::vector<std::size_t> simple;     // F-Lambda
  std::vector<SeparationMatch> matches;
  bool injective = true;
};

SeparationReport separation_classify(const std::vector<Quasimode>& family, const BandSpectrum& spec, double hbar,
                                     int order);

struct QuasimodeVelocity {
  Vec expectation;     // <psi~, (D + hbar k) psi~>
  Vec classical;       // d_P K at hbar (l* + k)
  Vec measure_average; // mu_P average of d_q S~
  double joint_residual = 0.0;  // ||((D + hbar k) - d_P K) psi~||
};

QuasimodeVelocity quasimode_velocity(const Quasimode& qm);

}  // namespace kamqm
