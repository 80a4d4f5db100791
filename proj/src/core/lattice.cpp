#include "lattice.hpp"

#include <cmath>
#include <string>

#include "error.hpp"

namespace kamqm {

Lattice Lattice::make(const Mat& basis_columns) {
  const auto d = basis_columns.rows();
  if (basis_columns.cols() != d) {
    fail(ErrorCode::InvalidArgument, "basis must be square");
  }
  if (d < 1 || d > 2) {
    fail(ErrorCode::UnsupportedDimension, "dimension " + std::to_string(d) + " (supported: 1, 2)");
  }
  if (!basis_columns.allFinite()) {
    fail(ErrorCode::InvalidArgument, "basis has non-finite entries");
  }
  double scale = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) scale = std::max(scale, basis_columns.col(j).norm());
  const double det = basis_columns.determinant();
  if (!(std::abs(det) > 1e-12 * std::pow(scale, static_cast<double>(d)))) {
    fail(ErrorCode::SingularBasis, "|det basis| = " + std::to_string(std::abs(det)));
  }

  Lattice lat;
  lat.basis_ = basis_columns;
  lat.L_ = basis_columns / kTwoPi;
  lat.L_inv_ = lat.L_.inverse();
  // Columns of 2 pi B^{-T}; equivalently the rows of L^{-1}.
  lat.dual_ = lat.L_inv_.transpose();
  Mat M = (lat.L_.transpose() * lat.L_).inverse();
  lat.M_ = 0.5 * (M + M.transpose());
  lat.cell_volume_ = std::abs(det);
  return lat;
}

Lattice Lattice::standard(int dimension) {
  if (dimension < 1 || dimension > 2) {
    fail(ErrorCode::UnsupportedDimension,
         "dimension " + std::to_string(dimension) + " (supported: 1, 2)");
  }
  return make(kTwoPi * Mat::Identity(dimension, dimension));
}

double Lattice::dual_cell_volume() const { return std::pow(kTwoPi, dimension()) / cell_volume_; }

double Lattice::min_dual_length() const {
  double m = dual_.col(0).norm();
  for (Eigen::Index j = 1; j < dual_.cols(); ++j) m = std::min(m, dual_.col(j).norm());
  return m;
}

Vec Lattice::dual_vector(std::span<const int> index) const {
  Vec g = Vec::Zero(dimension());
  for (int j = 0; j < dimension(); ++j) g += static_cast<double>(index[j]) * dual_.col(j);
  return g;
}

Vec Lattice::reduce(const Vec& q) const {
  Vec frac = L_inv_ * q / kTwoPi;
  for (Eigen::Index j = 0; j < frac.size(); ++j) {
    frac[j] -= std::floor(frac[j]);
    if (frac[j] >= 1.0) frac[j] = 0.0;
  }
  return basis_ * frac;
}

Vec Lattice::dual_fractional(const Vec& k) const { return L_ * k; }

Vec Lattice::reduce_dual(const Vec& k) const {
  Vec frac = dual_fractional(k);
  for (Eigen::Index j = 0; j < frac.size(); ++j) {
    frac[j] -= std::floor(frac[j]);
    if (frac[j] >= 1.0) frac[j] = 0.0;
  }
  return dual_ * frac;
}

bool Lattice::same_as(const Lattice& other, double tol) const {
  if (dimension() != other.dimension()) return false;
  return (basis_ - other.basis_).norm() <= tol * std::max(1.0, basis_.norm());
}

Vec wrap_angles(const Vec& phi) {
  Vec out = phi;
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    out[j] = std::fmod(out[j], kTwoPi);
    if (out[j] < 0.0) out[j] += kTwoPi;
    if (out[j] >= kTwoPi) out[j] = 0.0;
  }
  return out;
}

std::pair<Vec, Vec> ballistic_rescale(const PhasePoint& x, double energy, const Lattice& lattice) {
  if (!(energy > 0.0)) fail(ErrorCode::NonpositiveEnergy, "ballistic rescaling needs E > 0");
  Vec J = lattice.L().transpose() * x.p / std::sqrt(energy);
  Vec phi = wrap_angles(lattice.to_angles(x.q));
  return {std::move(J), std::move(phi)};
}

}  // namespace kamqm
