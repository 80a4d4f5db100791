#pragma once

#include <Eigen/Dense>
#include <span>
#include <utility>

namespace kamqm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Configuration lattice with its dual and the rescaling matrices used to
/// move between physical phase space and the standard torus.
///
/// Columns of `basis()` are the generators l_1..l_d. The dual basis satisfies
/// <l_i, l*_j> = 2 pi delta_ij, L = basis / (2 pi) and M = (L^T L)^{-1}.
class Lattice {
 public:
  /// Throws UnsupportedDimension for d outside {1, 2} and SingularBasis when
  /// |det| <= 1e-12 * scale^d.
  static Lattice make(const Mat& basis_columns);
  /// 2 pi Z^d, whose dual is Z^d.
  static Lattice standard(int dimension);

  int dimension() const { return static_cast<int>(basis_.rows()); }
  const Mat& basis() const { return basis_; }
  const Mat& dual_basis() const { return dual_; }
  const Mat& L() const { return L_; }
  const Mat& L_inverse() const { return L_inv_; }
  const Mat& M() const { return M_; }

  double cell_volume() const { return cell_volume_; }
  double dual_cell_volume() const;
  /// Length of the shortest dual basis vector; sets the plane-wave cutoff scale.
  double min_dual_length() const;

  /// Physical wavevector B* n of an integer dual index.
  Vec dual_vector(std::span<const int> index) const;
  /// Angle coordinates phi = L^{-1} q (standard torus, period 2 pi).
  Vec to_angles(const Vec& q) const { return L_inv_ * q; }
  Vec from_angles(const Vec& phi) const { return L_ * phi; }

  /// Representative of q in the half-open parallelepiped spanned by the basis.
  Vec reduce(const Vec& q) const;
  /// Representative of k in the half-open dual parallelepiped.
  Vec reduce_dual(const Vec& k) const;
  /// Fractional coordinates of k with respect to the dual basis.
  Vec dual_fractional(const Vec& k) const;

  bool same_as(const Lattice& other, double tol = 1e-14) const;

 private:
  Lattice() = default;

  Mat basis_;
  Mat dual_;
  Mat L_;
  Mat L_inv_;
  Mat M_;
  double cell_volume_ = 0.0;
};

struct PhasePoint {
  Vec p;
  Vec q;
};

/// The map (p, q) -> (L^t p / sqrt(E), L^{-1} q mod 2 pi). Throws
/// NonpositiveEnergy unless E > 0.
std::pair<Vec, Vec> ballistic_rescale(const PhasePoint& x, double energy, const Lattice& lattice);

/// Reduce each component of an angle vector into [0, 2 pi).
Vec wrap_angles(const Vec& phi);

}  // namespace kamqm
