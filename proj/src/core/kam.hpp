#pragma once

#include <iosfwd>
#include <vector>

#include "potential.hpp"

namespace kamqm {

struct DiophantineParams {
  double gamma = 0.1;
  double tau = 3.0;
  int k_max = 32;

  void validate(int dimension) const;
  /// tau = 2d + 1, gamma = c sqrt(1/E).
  static DiophantineParams defaults(int dimension, double energy, double c = 0.5);
};

/// min over 0 < |k|_inf <= k_max of |<omega, k>| |k|_2^tau.
double diophantine_margin(const Vec& omega, const DiophantineParams& params);

/// H(p, q) = 1/2 <p, G p> + eps V(q) on a torus with the given lattice.
/// The physical problem is (lattice, I, 1); after ballistic rescaling it is
/// (standard lattice, M, 1/E) with the same potential coefficients.
struct TorusHamiltonian {
  Lattice lattice;
  Mat G;
  FourierSeries V;
  double eps = 1.0;

  int dimension() const { return lattice.dimension(); }
  double kinetic(const Vec& p) const { return 0.5 * p.dot(G * p); }
};

TorusHamiltonian physical_hamiltonian(const Potential& v);
TorusHamiltonian scaled_hamiltonian(const Potential& v, double energy);

/// Invariant torus p = P - grad S_po(q) with H(P - grad S_po, q) = K.
struct KamTorus {
  Vec P;
  FourierSeries S_po;         // zero mean, on the frame lattice
  std::vector<FourierSeries> dS_dP;  // d_{P_a} S_po, one per axis (may be empty)
  double K = 0.0;
  Vec omega;                  // d_P K, in the frame's q units
  Vec omega_angle;            // L^{-1} omega (angle frequency on the standard torus)
  double residual = 0.0;      // sup |H(P - grad S_po, q) - K| on a test grid
  double margin = 0.0;        // diophantine_margin(omega_angle)
  int iterations = 0;
  bool scaled = false;        // frame: true for the rescaled Hamiltonian
  double energy_scale = 1.0;  // E used for rescaling when scaled

  Vec momentum(const Vec& q) const;
};

struct NewtonOptions {
  int cutoff = 16;          // |n_j| <= cutoff
  double tol = 1e-12;       // residual target
  int max_iterations = 200;
  bool check_divisors = true;
  bool derivatives = true;  // also solve for d_P S_po and d_P K
  DiophantineParams params;
};

/// Fourier-Newton iteration for the generating function at fixed action P.
/// Divisors are <omega, n> with omega the given angle frequency, else the
/// warm start's, else L^{-1} G P (refreshed as the iteration proceeds).
/// Throws SmallDivisorBreakdown or NoConvergence.
KamTorus newton_torus(const TorusHamiltonian& h, const Vec& P, const NewtonOptions& opt,
                      const KamTorus* warm_start = nullptr, const Vec* divisor_frequency = nullptr);

/// Torus whose frequency d_P K equals omega_target (frame units), by an
/// outer quasi-Newton loop on P around newton_torus. Throws
/// SmallDivisorBreakdown when the target fails the Diophantine test.
KamTorus newton_torus_frequency(const TorusHamiltonian& h, const Vec& omega_target, const NewtonOptions& opt);

/// Residual sup |H(P - grad S, q) - K| on an n^d grid for an arbitrary torus.
double torus_residual(const TorusHamiltonian& h, const KamTorus& t, int n);

/// Map a torus of the scaled Hamiltonian at energy E to physical variables
/// (S_po -> sqrt(E) S_po, K -> E K, P -> sqrt(E) L^{-T} P).
KamTorus scaled_to_physical(const KamTorus& t, const Lattice& lattice, double energy);
KamTorus physical_to_scaled(const KamTorus& t, const Lattice& lattice, double energy);

/// Lowest energy above the separatrix accepted for d = 1 rotational tori.
double separatrix_energy(const Potential& v);

/// d = 1 rotational torus at energy E and momentum sign, by quadrature of
/// p(q) = sqrt(2 (E - V)). Throws EnergyBelowSeparatrix.
KamTorus torus_d1(const Potential& v, double energy, int sign, const DiophantineParams& params);
/// d = 1 torus with mean momentum P (K(P) inverted by bisection + Newton).
KamTorus torus_d1_from_action(const Potential& v, double P, const DiophantineParams& params);
/// Mean momentum (1/a) int sqrt(2 (E - V)) dq and its energy derivative.
double action_d1(const Potential& v, double energy, double* dP_dE = nullptr);

struct VolumeFractionReport {
  double fraction = 0.0;
  std::size_t cells = 0;
  std::size_t converged = 0;
  std::size_t diophantine = 0;
  std::size_t small_divisor = 0;
  std::size_t no_convergence = 0;
  double gamma = 0.0;
  // d = 2: per accepted cell, the tested scaled action J and the cell
  // center, plus the cell edge lengths.
  std::vector<Vec> accepted_actions;
  std::vector<Vec> accepted_centers;
  Vec cell_width;
};

/// Fraction of the shell {a <= H <= b} filled by accepted KAM tori.
/// d = 1: exact rotational intervals above the separatrix with |omega| >=
/// gamma. d = 2: grid_size^2 scaled-action cells inside the unperturbed
/// shell, each represented by one quasi-random action inside it, attempted
/// with newton_torus and accepted when it converges and its margin is >= gamma.
VolumeFractionReport kam_volume_fraction(const Potential& v, double a, double b, const DiophantineParams& params,
                                         int grid_size, const NewtonOptions& opt, int workers = 0);

/// Torus archive record: "P.. omega.. K residual margin" then coefficient lines.
void write_torus(std::ostream& out, const KamTorus& t);

}  // namespace kamqm
