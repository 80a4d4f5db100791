#include "bloch.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <unordered_map>

extern "C" void openblas_set_num_threads(int);

#include "error.hpp"

namespace kamqm {
namespace {

std::int64_t pack(std::span<const int> n) {
  std::int64_t key = 0;
  for (int v : n) key = key * 1000003 + (v + 500000);
  return key;
}

struct ModeTable {
  std::unordered_map<std::int64_t, long> pos;
  explicit ModeTable(const PlaneWaveBasis& b) {
    pos.reserve(b.size() * 2);
    for (std::size_t i = 0; i < b.size(); ++i) pos.emplace(pack(b.mode(i)), static_cast<long>(i));
  }
  long find(std::span<const int> n) const {
    auto it = pos.find(pack(n));
    return it == pos.end() ? -1 : it->second;
  }
};

double energy_scale(const Potential& v, double hbar, const Lattice& lat) {
  const double b = lat.min_dual_length();
  return std::max({v.v_max() - v.v_min(), 0.5 * hbar * hbar * b * b, 1e-300});
}

}  // namespace

long PlaneWaveBasis::find(std::span<const int> n) const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (std::equal(n.begin(), n.end(), mode(i).begin())) return static_cast<long>(i);
  }
  return -1;
}

PlaneWaveBasis make_basis(const Lattice& lattice, const Vec& k, double cutoff) {
  const int d = lattice.dimension();
  if (k.size() != d) fail(ErrorCode::InvalidArgument, "k has wrong dimension");
  if (!(cutoff > 0.0)) fail(ErrorCode::InvalidArgument, "cutoff must be positive");
  const double radius = cutoff * lattice.min_dual_length();
  const double reach = radius + k.norm();
  int span[2] = {0, 0};
  for (int j = 0; j < d; ++j) span[j] = static_cast<int>(std::ceil(lattice.L().row(j).norm() * reach)) + 1;

  struct Cand {
    double norm;
    int n[2];
  };
  std::vector<Cand> cands;
  int n[2] = {0, 0};
  const int n1_lo = d == 2 ? -span[1] : 0;
  const int n1_hi = d == 2 ? span[1] : 0;
  for (n[0] = -span[0]; n[0] <= span[0]; ++n[0]) {
    for (n[1] = n1_lo; n[1] <= n1_hi; ++n[1]) {
      Vec g = lattice.dual_vector({n, static_cast<std::size_t>(d)}) + k;
      const double r = g.norm();
      if (r <= radius * (1.0 + 1e-12)) cands.push_back({r, {n[0], n[1]}});
    }
  }
  const double tie = 1e-12 * std::max(1.0, reach);
  std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
    if (std::abs(a.norm - b.norm) > tie) return a.norm < b.norm;
    return std::lexicographical_compare(a.n, a.n + d, b.n, b.n + d);
  });

  PlaneWaveBasis basis;
  basis.dimension = d;
  basis.k = k;
  basis.cutoff = cutoff;
  basis.index.reserve(cands.size() * static_cast<std::size_t>(d));
  basis.shifted.resize(d, static_cast<Eigen::Index>(cands.size()));
  for (std::size_t i = 0; i < cands.size(); ++i) {
    basis.index.insert(basis.index.end(), cands[i].n, cands[i].n + d);
    basis.shifted.col(static_cast<Eigen::Index>(i)) =
        lattice.dual_vector({cands[i].n, static_cast<std::size_t>(d)}) + k;
  }
  return basis;
}

CMat bloch_matrix(const Potential& v, double hbar, const PlaneWaveBasis& basis) {
  const auto nb = static_cast<Eigen::Index>(basis.size());
  const int d = basis.dimension;
  CMat H = CMat::Zero(nb, nb);
  ModeTable table(basis);
  const FourierSeries& s = v.series();
  int target[2] = {0, 0};
  for (Eigen::Index i = 0; i < nb; ++i) {
    H(i, i) += 0.5 * hbar * hbar * basis.shifted.col(i).squaredNorm();
    auto ni = basis.mode(static_cast<std::size_t>(i));
    // Row i couples to n_j = n_i - m for every potential mode m.
    for (std::size_t t = 0; t < s.size(); ++t) {
      auto m = s.index(t);
      for (int a = 0; a < d; ++a) target[a] = ni[static_cast<std::size_t>(a)] - m[static_cast<std::size_t>(a)];
      const long j = table.find({target, static_cast<std::size_t>(d)});
      if (j >= 0) H(i, j) += s.coefficient_at(t);
    }
  }
  return H;
}

namespace {

struct Diag {
  Vec values;
  CMat vectors;
};

void single_threaded_blas() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

Diag lapack_diagonalize(const CMat& H, int n_values, bool vectors) {
  single_threaded_blas();
  const lapack_int n = static_cast<lapack_int>(H.rows());
  const lapack_int m_req = std::min<lapack_int>(n_values, n);
  Diag out;
  out.values.resize(n);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(n));
  lapack_int found = 0;
  lapack_int info = 0;
  const char job = vectors ? 'V' : 'N';
  if (H.imag().cwiseAbs().maxCoeff() == 0.0) {
    Mat A = H.real();
    Mat Z(n, vectors ? m_req : 1);
    info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, job, 'I', 'U', n, A.data(), n, 0.0, 0.0, 1, m_req, 0.0, &found,
                          out.values.data(), Z.data(), n, support.data());
    if (vectors && info == 0) out.vectors = Z.leftCols(found).cast<cplx>();
  } else {
    CMat A = H;
    CMat Z(n, vectors ? m_req : 1);
    info = LAPACKE_zheevr(LAPACK_COL_MAJOR, job, 'I', 'U', n, reinterpret_cast<lapack_complex_double*>(A.data()), n,
                          0.0, 0.0, 1, m_req, 0.0, &found, out.values.data(),
                          reinterpret_cast<lapack_complex_double*>(Z.data()), n, support.data());
    if (vectors && info == 0) out.vectors = Z.leftCols(found);
  }
  if (info != 0 || found != m_req) {
    fail(ErrorCode::EigensolverFailure, "LAPACK eigensolver returned info " + std::to_string(info));
  }
  out.values.conservativeResize(found);
  return out;
}

// Some OpenBLAS builds pick broken blocked kernels on newer CPUs (wrong
// eigenvectors from n ~ 100 on, eigenvalues still fine). Probe once on a
// matrix large enough to take the blocked path and fall back to Eigen.
bool lapack_trusted() {
  static const bool ok = [] {
    const Eigen::Index n = 160;
    CMat H(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double re = std::sin(0.7 * static_cast<double>(i * n + j) + 0.3);
        const double im = i == j ? 0.0 : std::cos(1.3 * static_cast<double>(i + 3 * j));
        H(i, j) = cplx(re, im);
        H(j, i) = std::conj(H(i, j));
      }
    }
    CMat R = H.real().cast<cplx>();
    for (const CMat* M : {&R, &H}) {
      try {
        Diag dg = lapack_diagonalize(*M, 40, true);
        const double res = (*M * dg.vectors - dg.vectors * dg.values.asDiagonal()).norm();
        const double orth = (dg.vectors.adjoint() * dg.vectors - CMat::Identity(40, 40)).norm();
        if (!(res < 1e-9 * static_cast<double>(n)) || !(orth < 1e-10)) return false;
      } catch (const Error&) {
        return false;
      }
    }
    return true;
  }();
  return ok;
}

// Lowest n_values eigenvalues (ascending) and, when requested, their
// eigenvectors.
Diag diagonalize(const CMat& H, int n_values, bool vectors) {
  if (lapack_trusted()) return lapack_diagonalize(H, n_values, vectors);
  const Eigen::Index m = std::min<Eigen::Index>(n_values, H.rows());
  Diag out;
  if (H.imag().cwiseAbs().maxCoeff() == 0.0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H.real(), vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorCode::EigensolverFailure, "eigensolver did not converge");
    out.values = es.eigenvalues().head(m);
    if (vectors) out.vectors = es.eigenvectors().leftCols(m).cast<cplx>();
  } else {
    Eigen::SelfAdjointEigenSolver<CMat> es(H, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorCode::EigensolverFailure, "eigensolver did not converge");
    out.values = es.eigenvalues().head(m);
    if (vectors) out.vectors = es.eigenvectors().leftCols(m);
  }
  return out;
}

// Number of eigenvalues <= e_max.
int count_below(const CMat& H, double e_max) {
  if (!lapack_trusted()) {
    const Vec w = diagonalize(H, static_cast<int>(H.rows()), false).values;
    return static_cast<int>((w.array() <= e_max).count());
  }
  single_threaded_blas();
  const lapack_int n = static_cast<lapack_int>(H.rows());
  Vec w(n);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(n));
  lapack_int found = 0, info = 0;
  const double lo = -std::numeric_limits<double>::infinity();
  if (H.imag().cwiseAbs().maxCoeff() == 0.0) {
    Mat A = H.real();
    double z = 0.0;
    info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'N', 'V', 'U', n, A.data(), n, lo, e_max, 0, 0, 0.0, &found, w.data(), &z,
                          1, support.data());
  } else {
    CMat A = H;
    lapack_complex_double z{};
    info = LAPACKE_zheevr(LAPACK_COL_MAJOR, 'N', 'V', 'U', n, reinterpret_cast<lapack_complex_double*>(A.data()), n,
                          lo, e_max, 0, 0, 0.0, &found, w.data(), &z, 1, support.data());
  }
  if (info != 0) fail(ErrorCode::EigensolverFailure, "LAPACK eigensolver returned info " + std::to_string(info));
  return static_cast<int>(found);
}

}  // namespace

bool band_is_degenerate(const BandSpectrum& spec, int n) {
  const Vec& all = spec.all_eigenvalues;
  const double e = all[n];
  const double tol = kDegenerateRelGap * std::abs(e) + kDegenerateAbsGap;
  if (n > 0 && std::abs(e - all[n - 1]) <= tol) return true;
  if (n + 1 < all.size() && std::abs(all[n + 1] - e) <= tol) return true;
  return false;
}

Vec group_velocity(const BandSpectrum& spec, int n) {
  const int d = spec.basis.dimension;
  if (n < 0 || n >= spec.n_bands()) fail(ErrorCode::InvalidArgument, "band index out of range");
  if (band_is_degenerate(spec, n)) return Vec::Zero(d);
  Vec v = Vec::Zero(d);
  const auto col = spec.eigenvectors.col(n);
  for (Eigen::Index i = 0; i < col.size(); ++i) v += std::norm(col[i]) * spec.basis.shifted.col(i);
  return spec.hbar * v;
}

BandSpectrum solve_bands(const Potential& v, double hbar, const Vec& k, double cutoff, int n_bands,
                         bool check, bool require_converged) {
  if (!(hbar > 0.0)) fail(ErrorCode::InvalidArgument, "hbar must be positive");
  if (n_bands < 1) fail(ErrorCode::InvalidArgument, "n_bands must be >= 1");
  BandSpectrum spec;
  spec.hbar = hbar;
  spec.basis = make_basis(v.lattice(), k, cutoff);
  if (2 * static_cast<std::size_t>(n_bands) >= spec.basis.size()) {
    fail(ErrorCode::CutoffTooSmall, "basis of " + std::to_string(spec.basis.size()) + " modes cannot resolve " +
                                        std::to_string(n_bands) + " bands");
  }
  // One extra pair so the degeneracy test of the top band sees its neighbour.
  Diag dg = diagonalize(bloch_matrix(v, hbar, spec.basis), n_bands + 1, true);
  spec.all_eigenvalues = dg.values;
  spec.eigenvalues = dg.values.head(n_bands);
  spec.eigenvectors = dg.vectors.leftCols(n_bands);
  spec.converged.assign(static_cast<std::size_t>(n_bands), 1);
  if (check) {
    PlaneWaveBasis wide = make_basis(v.lattice(), k, cutoff + 8.0);
    Diag ref = diagonalize(bloch_matrix(v, hbar, wide), n_bands, false);
    const double scale = energy_scale(v, hbar, v.lattice());
    for (int n = 0; n < n_bands; ++n) {
      const double e = spec.eigenvalues[n];
      const bool ok = std::abs(ref.values[n] - e) < 1e-8 * std::max(std::abs(e), scale);
      spec.converged[static_cast<std::size_t>(n)] = ok ? 1 : 0;
      if (!ok && require_converged) {
        fail(ErrorCode::CutoffTooSmall, "band " + std::to_string(n) + " moved by " +
                                            std::to_string(std::abs(ref.values[n] - e)) + " at cutoff + 8");
      }
    }
  }
  const int d = v.dimension();
  spec.velocities.resize(d, n_bands);
  for (int n = 0; n < n_bands; ++n) spec.velocities.col(n) = group_velocity(spec, n);
  return spec;
}

double auto_cutoff(const Potential& v, double hbar, const Vec& k, double e_max) {
  const double b = v.lattice().min_dual_length();
  const double pmax = std::sqrt(2.0 * std::max(e_max - v.v_min(), 0.0));
  const double r = pmax / (hbar * b) + k.norm() / b;
  // Bands below e_max fill the ball of radius r; solve_bands needs the basis
  // to hold twice as many modes, i.e. radius 2r (d = 1) or sqrt(2) r (d = 2).
  const double fill = v.dimension() == 1 ? 2.0 : 1.5;
  return std::ceil(std::max(1.1 * r + 2.0 * v.series().cutoff(), fill * r) + 8.0);
}

BandSpectrum solve_bands_below(const Potential& v, double hbar, const Vec& k, double e_max) {
  double cutoff = auto_cutoff(v, hbar, k, e_max);
  for (int attempt = 0; attempt < 6; ++attempt) {
    PlaneWaveBasis basis = make_basis(v.lattice(), k, cutoff);
    const int n_bands = count_below(bloch_matrix(v, hbar, basis), e_max) + 1;
    if (2 * static_cast<std::size_t>(n_bands) < basis.size()) {
      try {
        return solve_bands(v, hbar, k, cutoff, n_bands, true, true);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::CutoffTooSmall) throw;
      }
    }
    cutoff = std::ceil(cutoff * 1.3 + 4.0);
  }
  fail(ErrorCode::CutoffTooSmall, "bands below " + std::to_string(e_max) + " did not converge");
}

double sublevel_volume(const Potential& v, double e) {
  const int d = v.dimension();
  const int n = d == 1 ? 65536 : 512;
  TorusGrid grid{d, n};
  double sum = 0.0;
  int multi[2] = {0, 0};
  Vec theta(d);
  for (std::size_t f = 0; f < grid.size(); ++f) {
    grid.unflatten(f, multi);
    for (int j = 0; j < d; ++j) theta[j] = (multi[j] + 0.5) * kTwoPi / n;
    const double w = e - v.value(v.lattice().from_angles(theta));
    if (w <= 0.0) continue;
    // Ball volume of radius sqrt(2w): 2 sqrt(2w) for d = 1, 2 pi w for d = 2.
    sum += d == 1 ? 2.0 * std::sqrt(2.0 * w) : kTwoPi * w;
  }
  return sum / static_cast<double>(grid.size()) * v.lattice().cell_volume();
}

double shell_volume(const Potential& v, double a, double b) {
  if (!(b >= a)) fail(ErrorCode::InvalidArgument, "energy interval must satisfy a <= b");
  return sublevel_volume(v, b) - sublevel_volume(v, a);
}

WeylCount weyl_count(const Potential& v, double hbar, const Vec& k, double a, double b) {
  WeylCount out;
  out.volume = shell_volume(v, a, b);
  out.prediction = out.volume / std::pow(kTwoPi * hbar, v.dimension());
  if (b < v.v_min()) return out;
  BandSpectrum spec = solve_bands_below(v, hbar, k, b);
  for (int n = 0; n < spec.n_bands(); ++n) {
    const double e = spec.eigenvalues[n];
    if (e >= a && e <= b) ++out.count;
  }
  return out;
}

std::vector<Vec> k_grid(const Lattice& lattice, int n, bool offset) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "k-grid size must be >= 1");
  const int d = lattice.dimension();
  TorusGrid grid{d, n};
  std::vector<Vec> out;
  out.reserve(grid.size());
  int multi[2] = {0, 0};
  Vec frac(d);
  for (std::size_t f = 0; f < grid.size(); ++f) {
    grid.unflatten(f, multi);
    for (int j = 0; j < d; ++j) frac[j] = (multi[j] + (offset ? 0.5 : 0.0)) / n;
    out.push_back(lattice.dual_basis() * frac);
  }
  return out;
}

}  // namespace kamqm
