#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fourier.hpp"

namespace kamqm {

/// Smooth real periodic potential V(q) = sum_n c_n e^{i<B* n, q>}.
///
/// Stored as a Hermitian FourierSeries plus a half-set of terms so that
/// V and its derivatives evaluate with one complex exponential per pair.
class Potential {
 public:
  /// Throws NonHermitian unless c_{-n} = conj(c_n) within 1e-12.
  explicit Potential(FourierSeries series, std::string name = "custom");

  const FourierSeries& series() const { return series_; }
  const Lattice& lattice() const { return series_.lattice(); }
  int dimension() const { return series_.dimension(); }
  const std::string& name() const { return name_; }

  double value(const Vec& q) const;
  /// V(q) and grad V(q) with respect to physical q.
  double value_and_gradient(const Vec& q, Vec& grad) const;
  /// Fixed-size fast path for d <= 2; grad must hold dimension() entries.
  double value_and_gradient(const double* q, double* grad) const;
  Mat hessian(const Vec& q) const;

  /// Fourier coefficient at dual index n (the matrix element V-hat(n)).
  cplx coefficient(std::span<const int> n) const { return series_.coefficient(n); }
  double mean() const { return mean_; }
  double v_min() const { return v_min_; }
  double v_max() const { return v_max_; }
  /// Sum of |c_n| over n != 0; bounds |V - mean|.
  double oscillation_bound() const { return osc_bound_; }
  bool is_constant() const { return terms_.empty(); }

  /// Stable content hash of lattice and coefficients (FNV-1a over a
  /// canonical text rendering); used as a cache key.
  std::uint64_t hash() const { return hash_; }

  /// Same series with every coefficient (including the mean) multiplied.
  Potential scaled(double factor) const;

 private:
  struct Term {
    int n[2];
    double g_angle[2];  // n as doubles
    cplx c;             // coefficient; the pair contributes 2 Re(c e^{i n.theta})
  };

  void locate_extrema();

  FourierSeries series_;
  std::string name_;
  std::vector<Term> terms_;
  double mean_ = 0.0;
  double osc_bound_ = 0.0;
  double v_min_ = 0.0;
  double v_max_ = 0.0;
  std::uint64_t hash_ = 0;
};

/// Built-in potentials on the standard lattice 2 pi Z^d:
///   free      V = 0
///   cosine    V = s cos q            (d = 1)
///   cosine2d  V = s (cos q1 + cos q2) (d = 2)
Potential builtin_potential(const std::string& name, double strength = 1.0);

/// Text potential format:
///
///   dimension 2
///   basis 6.283185307179586 0 0 6.283185307179586   (row-major)
///   hermitian true
///   coefficients
///   1 0 0.5 0
///   -1 0 0.5 0
///
/// or, instead of `coefficients`, `samples N` followed by N^d real values on
/// the uniform angle grid (axis 0 slowest) and optional `cutoff m` (default
/// 32) before it. Lines starting with '#' are comments.
Potential parse_potential(std::istream& in, const std::string& name = "file");
Potential load_potential(const std::string& path);
void write_potential(std::ostream& out, const Potential& v);

}  // namespace kamqm
