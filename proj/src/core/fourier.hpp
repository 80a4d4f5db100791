#pragma once

#include <complex>
#include <map>
#include <span>
#include <vector>

#include "fft.hpp"
#include "lattice.hpp"

namespace kamqm {

using CVec = Eigen::VectorXcd;

/// Trigonometric series sum_n c_n exp(i <B* n, q>) over the dual lattice,
/// indexed by integer coordinates n with respect to the dual basis.
///
/// In angle coordinates theta = L^{-1} q the phase is simply n . theta, so the
/// same coefficients describe V on the physical torus and V-hat on the
/// standard torus.
class FourierSeries {
 public:
  /// Empty series on the standard 1-d lattice (placeholder for aggregates).
  FourierSeries() : FourierSeries(Lattice::standard(1)) {}
  explicit FourierSeries(Lattice lattice, bool real_valued = false);

  const Lattice& lattice() const { return lattice_; }
  int dimension() const { return lattice_.dimension(); }
  std::size_t size() const { return coeffs_.size(); }
  bool real_valued() const { return real_valued_; }
  void set_real_valued(bool flag) { real_valued_ = flag; }

  std::span<const int> index(std::size_t term) const {
    return {indices_.data() + term * static_cast<std::size_t>(dimension()),
            static_cast<std::size_t>(dimension())};
  }
  cplx coefficient_at(std::size_t term) const { return coeffs_[term]; }
  /// Coefficient of dual index n (zero when absent).
  cplx coefficient(std::span<const int> n) const;
  void set(std::span<const int> n, cplx c);
  void add(std::span<const int> n, cplx c);

  /// Largest |n_j| over stored terms.
  int max_abs_index() const;
  /// Largest Euclidean |n| over stored terms; 0 for a constant series.
  double cutoff() const;
  bool is_hermitian(double tol = 1e-12) const;
  double max_abs_coefficient() const;

  cplx eval(const Vec& q) const;
  /// Gradient with respect to q: sum i (B* n) c_n e^{i<B*n,q>}.
  CVec gradient(const Vec& q) const;
  cplx eval_angles(std::span<const double> theta) const;
  /// Value and theta-gradient at angle point theta.
  cplx eval_angles_with_gradient(std::span<const double> theta, std::span<cplx> grad_theta) const;

  /// Values on an angle grid.
  std::vector<cplx> sample(const TorusGrid& grid) const;
  /// Coefficients of grid samples with |n_j| <= cutoff; drops |c| <= drop_tol.
  static FourierSeries from_samples(const Lattice& lattice, const std::vector<cplx>& values,
                                    const TorusGrid& grid, int cutoff, double drop_tol,
                                    bool real_valued);

  FourierSeries scaled(cplx factor) const;
  /// Drop terms with |c| <= tol.
  FourierSeries pruned(double tol) const;

 private:
  struct IndexLess {
    bool operator()(const std::vector<int>& a, const std::vector<int>& b) const { return a < b; }
  };

  Lattice lattice_;
  bool real_valued_ = false;
  std::vector<int> indices_;
  std::vector<cplx> coeffs_;
  std::map<std::vector<int>, std::size_t, IndexLess> lookup_;
};

/// Spectral gradient (physical q-derivatives) of grid values; one field per axis.
std::vector<std::vector<cplx>> spectral_gradient(const std::vector<cplx>& values,
                                                 const TorusGrid& grid, const Lattice& lattice);
/// Spectral Laplacian in physical coordinates.
std::vector<cplx> spectral_laplacian(const std::vector<cplx>& values, const TorusGrid& grid,
                                     const Lattice& lattice);
/// Zero-mean periodic antiderivative F with grad F = field - mean; only
/// defined when the field is a gradient, so callers pass an exact gradient.
std::vector<cplx> spectral_potential_d1(const std::vector<cplx>& field, const TorusGrid& grid,
                                        const Lattice& lattice);

}  // namespace kamqm
