#include "fourier.hpp"

#include <cmath>
#include <cstdlib>

#include "error.hpp"

namespace kamqm {
namespace {

// Phase powers e^{i m theta_j} for |m| <= m_max, one table per axis, laid out
// as table[j * (2 m_max + 1) + m + m_max].
void phase_tables(std::span<const double> theta, int m_max, std::vector<cplx>& table) {
  const int d = static_cast<int>(theta.size());
  const int width = 2 * m_max + 1;
  table.resize(static_cast<std::size_t>(d * width));
  for (int j = 0; j < d; ++j) {
    cplx* row = table.data() + j * width + m_max;
    const cplx base = std::polar(1.0, theta[j]);
    row[0] = 1.0;
    cplx acc = 1.0;
    for (int m = 1; m <= m_max; ++m) {
      // Re-anchor periodically so recurrence error stays at a few ulps.
      acc = (m % 16 == 0) ? std::polar(1.0, theta[j] * m) : acc * base;
      row[m] = acc;
      row[-m] = std::conj(acc);
    }
  }
}

}  // namespace

FourierSeries::FourierSeries(Lattice lattice, bool real_valued)
    : lattice_(std::move(lattice)), real_valued_(real_valued) {}

cplx FourierSeries::coefficient(std::span<const int> n) const {
  auto it = lookup_.find(std::vector<int>(n.begin(), n.end()));
  return it == lookup_.end() ? cplx(0.0, 0.0) : coeffs_[it->second];
}

void FourierSeries::set(std::span<const int> n, cplx c) {
  if (static_cast<int>(n.size()) != dimension()) fail(ErrorCode::InvalidArgument, "index dimension mismatch");
  std::vector<int> key(n.begin(), n.end());
  auto it = lookup_.find(key);
  if (it != lookup_.end()) {
    coeffs_[it->second] = c;
    return;
  }
  lookup_.emplace(key, coeffs_.size());
  indices_.insert(indices_.end(), n.begin(), n.end());
  coeffs_.push_back(c);
}

void FourierSeries::add(std::span<const int> n, cplx c) { set(n, coefficient(n) + c); }

int FourierSeries::max_abs_index() const {
  int m = 0;
  for (int v : indices_) m = std::max(m, std::abs(v));
  return m;
}

double FourierSeries::cutoff() const {
  double best = 0.0;
  for (std::size_t t = 0; t < size(); ++t) {
    double s = 0.0;
    for (int v : index(t)) s += static_cast<double>(v) * v;
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

double FourierSeries::max_abs_coefficient() const {
  double m = 0.0;
  for (const auto& c : coeffs_) m = std::max(m, std::abs(c));
  return m;
}

bool FourierSeries::is_hermitian(double tol) const {
  const double scale = std::max(1.0, max_abs_coefficient());
  std::vector<int> neg(static_cast<std::size_t>(dimension()));
  for (std::size_t t = 0; t < size(); ++t) {
    auto n = index(t);
    for (int j = 0; j < dimension(); ++j) neg[static_cast<std::size_t>(j)] = -n[static_cast<std::size_t>(j)];
    if (std::abs(coefficient(neg) - std::conj(coeffs_[t])) > tol * scale) return false;
  }
  return true;
}

cplx FourierSeries::eval_angles(std::span<const double> theta) const {
  thread_local std::vector<cplx> table;
  const int m_max = max_abs_index();
  const int width = 2 * m_max + 1;
  phase_tables(theta, m_max, table);
  const int d = dimension();
  cplx sum = 0.0;
  for (std::size_t t = 0; t < size(); ++t) {
    const int* n = indices_.data() + t * static_cast<std::size_t>(d);
    cplx ph = table[static_cast<std::size_t>(n[0] + m_max)];
    for (int j = 1; j < d; ++j) ph *= table[static_cast<std::size_t>(j * width + n[j] + m_max)];
    sum += coeffs_[t] * ph;
  }
  return sum;
}

cplx FourierSeries::eval_angles_with_gradient(std::span<const double> theta,
                                              std::span<cplx> grad_theta) const {
  thread_local std::vector<cplx> table;
  const int m_max = max_abs_index();
  const int width = 2 * m_max + 1;
  phase_tables(theta, m_max, table);
  const int d = dimension();
  cplx sum = 0.0;
  for (int j = 0; j < d; ++j) grad_theta[static_cast<std::size_t>(j)] = 0.0;
  for (std::size_t t = 0; t < size(); ++t) {
    const int* n = indices_.data() + t * static_cast<std::size_t>(d);
    cplx ph = table[static_cast<std::size_t>(n[0] + m_max)];
    for (int j = 1; j < d; ++j) ph *= table[static_cast<std::size_t>(j * width + n[j] + m_max)];
    const cplx term = coeffs_[t] * ph;
    sum += term;
    for (int j = 0; j < d; ++j) grad_theta[static_cast<std::size_t>(j)] += cplx(0.0, n[j]) * term;
  }
  return sum;
}

cplx FourierSeries::eval(const Vec& q) const {
  Vec theta = lattice_.to_angles(q);
  return eval_angles({theta.data(), static_cast<std::size_t>(theta.size())});
}

CVec FourierSeries::gradient(const Vec& q) const {
  Vec theta = lattice_.to_angles(q);
  std::vector<cplx> gt(static_cast<std::size_t>(dimension()));
  eval_angles_with_gradient({theta.data(), static_cast<std::size_t>(theta.size())}, gt);
  // d/dq = L^{-T} d/dtheta
  CVec g_theta = Eigen::Map<CVec>(gt.data(), dimension());
  return lattice_.L_inverse().transpose().cast<cplx>() * g_theta;
}

std::vector<cplx> FourierSeries::sample(const TorusGrid& grid) const {
  if (grid.dimension != dimension()) fail(ErrorCode::InvalidArgument, "grid dimension mismatch");
  std::vector<cplx> out(grid.size(), cplx(0.0, 0.0));
  bool fits = true;
  for (std::size_t t = 0; t < size() && fits; ++t) {
    for (int v : index(t)) fits = fits && fft_slot(v, grid.n) >= 0;
  }
  if (fits) {
    for (std::size_t t = 0; t < size(); ++t) {
      std::size_t flat = 0;
      for (int v : index(t)) flat = flat * static_cast<std::size_t>(grid.n) + static_cast<std::size_t>(fft_slot(v, grid.n));
      out[flat] += coeffs_[t];
    }
    fft_inverse(out, grid);
    return out;
  }
  int multi[2] = {0, 0};
  double theta[2] = {0.0, 0.0};
  for (std::size_t f = 0; f < out.size(); ++f) {
    grid.unflatten(f, multi);
    for (int j = 0; j < dimension(); ++j) theta[j] = grid.angle(multi[j]);
    out[f] = eval_angles({theta, static_cast<std::size_t>(dimension())});
  }
  return out;
}

FourierSeries FourierSeries::from_samples(const Lattice& lattice, const std::vector<cplx>& values,
                                          const TorusGrid& grid, int cutoff, double drop_tol,
                                          bool real_valued) {
  if (grid.dimension != lattice.dimension()) fail(ErrorCode::InvalidArgument, "grid dimension mismatch");
  std::vector<cplx> coeffs = values;
  fft_forward(coeffs, grid);
  FourierSeries out(lattice, real_valued);
  int multi[2] = {0, 0};
  int idx[2] = {0, 0};
  for (std::size_t f = 0; f < coeffs.size(); ++f) {
    grid.unflatten(f, multi);
    bool keep = true;
    for (int j = 0; j < grid.dimension; ++j) {
      idx[j] = fft_frequency(multi[j], grid.n);
      if (std::abs(idx[j]) > cutoff || (grid.n % 2 == 0 && idx[j] == -grid.n / 2)) keep = false;
    }
    if (!keep || std::abs(coeffs[f]) <= drop_tol) continue;
    out.set({idx, static_cast<std::size_t>(grid.dimension)}, coeffs[f]);
  }
  if (real_valued) {
    // Symmetrize so the stored series is exactly Hermitian.
    FourierSeries sym(lattice, true);
    int neg[2] = {0, 0};
    for (std::size_t t = 0; t < out.size(); ++t) {
      auto n = out.index(t);
      for (int j = 0; j < grid.dimension; ++j) neg[j] = -n[static_cast<std::size_t>(j)];
      const cplx a = out.coefficient_at(t);
      const cplx b = out.coefficient({neg, static_cast<std::size_t>(grid.dimension)});
      sym.set(n, 0.5 * (a + std::conj(b)));
      sym.set({neg, static_cast<std::size_t>(grid.dimension)}, 0.5 * (b + std::conj(a)));
    }
    return sym;
  }
  return out;
}

FourierSeries FourierSeries::scaled(cplx factor) const {
  FourierSeries out = *this;
  for (auto& c : out.coeffs_) c *= factor;
  if (factor.imag() != 0.0) out.real_valued_ = false;
  return out;
}

FourierSeries FourierSeries::pruned(double tol) const {
  FourierSeries out(lattice_, real_valued_);
  for (std::size_t t = 0; t < size(); ++t) {
    if (std::abs(coeffs_[t]) > tol) out.set(index(t), coeffs_[t]);
  }
  return out;
}

std::vector<std::vector<cplx>> spectral_gradient(const std::vector<cplx>& values,
                                                 const TorusGrid& grid, const Lattice& lattice) {
  std::vector<cplx> coeffs = values;
  fft_forward(coeffs, grid);
  const int d = grid.dimension;
  std::vector<std::vector<cplx>> out(static_cast<std::size_t>(d), std::vector<cplx>(coeffs.size()));
  const Mat& dual = lattice.dual_basis();
  int multi[2] = {0, 0};
  for (std::size_t f = 0; f < coeffs.size(); ++f) {
    grid.unflatten(f, multi);
    double g[2] = {0.0, 0.0};
    bool nyquist = false;
    for (int j = 0; j < d; ++j) {
      const int m = fft_frequency(multi[j], grid.n);
      if (grid.n % 2 == 0 && m == -grid.n / 2) nyquist = true;
      for (int a = 0; a < d; ++a) g[a] += dual(a, j) * m;
    }
    for (int a = 0; a < d; ++a) out[static_cast<std::size_t>(a)][f] = nyquist ? cplx(0.0) : cplx(0.0, g[a]) * coeffs[f];
  }
  for (auto& field : out) fft_inverse(field, grid);
  return out;
}

std::vector<cplx> spectral_laplacian(const std::vector<cplx>& values, const TorusGrid& grid,
                                     const Lattice& lattice) {
  std::vector<cplx> coeffs = values;
  fft_forward(coeffs, grid);
  const int d = grid.dimension;
  const Mat& dual = lattice.dual_basis();
  int multi[2] = {0, 0};
  for (std::size_t f = 0; f < coeffs.size(); ++f) {
    grid.unflatten(f, multi);
    double g[2] = {0.0, 0.0};
    bool nyquist = false;
    for (int j = 0; j < d; ++j) {
      const int m = fft_frequency(multi[j], grid.n);
      if (grid.n % 2 == 0 && m == -grid.n / 2) nyquist = true;
      for (int a = 0; a < d; ++a) g[a] += dual(a, j) * m;
    }
    double g2 = 0.0;
    for (int a = 0; a < d; ++a) g2 += g[a] * g[a];
    coeffs[f] = nyquist ? cplx(0.0) : -g2 * coeffs[f];
  }
  fft_inverse(coeffs, grid);
  return coeffs;
}

std::vector<cplx> spectral_potential_d1(const std::vector<cplx>& field, const TorusGrid& grid,
                                        const Lattice& lattice) {
  if (grid.dimension != 1) fail(ErrorCode::UnsupportedDimension, "antiderivative is one-dimensional");
  std::vector<cplx> coeffs = field;
  fft_forward(coeffs, grid);
  const double b = lattice.dual_basis()(0, 0);
  for (int s = 0; s < grid.n; ++s) {
    const int m = fft_frequency(s, grid.n);
    if (m == 0 || (grid.n % 2 == 0 && m == -grid.n / 2)) {
      coeffs[static_cast<std::size_t>(s)] = 0.0;
    } else {
      coeffs[static_cast<std::size_t>(s)] /= cplx(0.0, b * m);
    }
  }
  fft_inverse(coeffs, grid);
  return coeffs;
}

}  // namespace kamqm
