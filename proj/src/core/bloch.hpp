#pragma once

#include <vector>

#include "potential.hpp"

namespace kamqm {

using CMat = Eigen::MatrixXcd;

/// Plane waves e^{i<g, q>} with g = B* n and |g + k| <= cutoff * min|b*|,
/// ordered by |g + k| then lexicographically by n.
struct PlaneWaveBasis {
  int dimension = 1;
  Vec k;
  double cutoff = 0.0;
  std::vector<int> index;  // size() x d, row-major
  Mat shifted;             // d x size(): g + k

  std::size_t size() const { return static_cast<std::size_t>(shifted.cols()); }
  std::span<const int> mode(std::size_t i) const {
    return {index.data() + i * static_cast<std::size_t>(dimension), static_cast<std::size_t>(dimension)};
  }
  /// Position of dual index n, or -1.
  long find(std::span<const int> n) const;
};

PlaneWaveBasis make_basis(const Lattice& lattice, const Vec& k, double cutoff);

/// Truncated fiber <g1| H(k) |g2> = 1/2 hbar^2 |g1 + k|^2 delta + V-hat(n1 - n2).
CMat bloch_matrix(const Potential& v, double hbar, const PlaneWaveBasis& basis);

struct BandSpectrum {
  double hbar = 0.0;
  PlaneWaveBasis basis;
  Vec all_eigenvalues;  // lowest n_bands + 1 eigenvalues of the truncated fiber
  Vec eigenvalues;      // first n_bands
  CMat eigenvectors;    // basis.size() x n_bands, orthonormal columns
  Mat velocities;       // d x n_bands
  std::vector<char> converged;

  int n_bands() const { return static_cast<int>(eigenvalues.size()); }
  const Vec& k() const { return basis.k; }
};

/// Relative gap below which two bands count as degenerate.
inline constexpr double kDegenerateRelGap = 1e-10;
inline constexpr double kDegenerateAbsGap = 1e-12;

/// Lowest n_bands eigenpairs of the truncated fiber. With check set, each band
/// is recomputed at cutoff + 8 and flagged converged when the relative change
/// is below 1e-8; require_converged then turns a failed flag into
/// CutoffTooSmall.
BandSpectrum solve_bands(const Potential& v, double hbar, const Vec& k, double cutoff, int n_bands,
                         bool check = true, bool require_converged = true);

/// Cutoff (in units of min|b*|) resolving all bands up to e_max, with a margin.
double auto_cutoff(const Potential& v, double hbar, const Vec& k, double e_max);

/// All bands with E_n <= e_max plus one above (so window edges are resolved),
/// with the cutoff chosen automatically and grown until converged.
BandSpectrum solve_bands_below(const Potential& v, double hbar, const Vec& k, double e_max);

/// hbar sum |c_g|^2 (g + k), i.e. hbar^{-1} grad_k E_n by Hellmann-Feynman;
/// zero when band n is degenerate with a neighbour.
Vec group_velocity(const BandSpectrum& spec, int n);
bool band_is_degenerate(const BandSpectrum& spec, int n);

/// Liouville volume of {(p, q) in T*T : a <= H <= b}.
double shell_volume(const Potential& v, double a, double b);
/// Liouville volume of {H <= e}.
double sublevel_volume(const Potential& v, double e);

struct WeylCount {
  int count = 0;
  double prediction = 0.0;  // vol / (2 pi hbar)^d
  double volume = 0.0;
};
WeylCount weyl_count(const Potential& v, double hbar, const Vec& k, double a, double b);

/// Uniform Monkhorst grid of n^d points over the dual cell; with offset the
/// fractional coordinates are (j + 1/2)/n, which avoids the symmetry points
/// and is closed under k -> -k.
std::vector<Vec> k_grid(const Lattice& lattice, int n, bool offset = true);

}  // namespace kamqm
