#include "quasimode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"
#include "parallel.hpp"

namespace kamqm {
namespace {

double segment_distance(const Vec& x, const Vec& a, const Vec& b) {
  const Vec ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (x - (a + t * ab)).norm();
}

// Per-point phase factors e^{sign i m theta_j} for m in [-M, M], one table per axis.
std::vector<std::vector<cplx>> phase_tables(const LeadingAmplitude& lead, int M, double sign) {
  const int d = lead.grid.dimension;
  const std::size_t n = lead.grid.size();
  const std::size_t w = static_cast<std::size_t>(2 * M + 1);
  std::vector<std::vector<cplx>> tab(static_cast<std::size_t>(d), std::vector<cplx>(n * w));
  for (int j = 0; j < d; ++j) {
    auto& t = tab[static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < n; ++i) {
      const double th = lead.theta_Q[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
      for (int m = -M; m <= M; ++m) t[i * w + static_cast<std::size_t>(m + M)] = std::polar(1.0, sign * m * th);
    }
  }
  return tab;
}

double sup_abs(const std::vector<cplx>& f) {
  double s = 0.0;
  for (const auto& x : f) s = std::max(s, std::abs(x));
  return s;
}

// Largest Fourier coefficient beyond a quarter of the grid, relative to the peak.
double spectral_tail(const std::vector<cplx>& values, const TorusGrid& grid) {
  std::vector<cplx> c = values;
  fft_forward(c, grid);
  double peak = 0.0, tail = 0.0;
  int multi[2] = {0, 0};
  for (std::size_t f = 0; f < c.size(); ++f) {
    grid.unflatten(f, multi);
    bool high = false;
    for (int j = 0; j < grid.dimension; ++j) high |= std::abs(fft_frequency(multi[j], grid.n)) >= grid.n / 4;
    const double a = std::abs(c[f]);
    peak = std::max(peak, a);
    if (high) tail = std::max(tail, a);
  }
  return peak > 0.0 ? tail / peak : 0.0;
}

// ||psi - e^{i theta} phi|| with theta = arg <phi, psi>, from the vectors (the
// 2 - 2|overlap| form bottoms out near sqrt(eps)).
double aligned_gap(const CVec& phi, const CVec& psi) {
  const cplx ov = phi.dot(psi);
  const cplx phase = std::abs(ov) > 0.0 ? ov / std::abs(ov) : cplx(1.0);
  return (psi - phase * phi).norm();
}

}  // namespace

TorusFamily::TorusFamily(Potential v, double a, double b, DiophantineParams params, NewtonOptions newton,
                         int grid_size, int workers)
    : v_(std::move(v)), a_(a), b_(b), params_(params), newton_(newton) {
  if (!(b > a)) fail(ErrorCode::InvalidArgument, "energy interval must satisfy a < b");
  if (!(energy() > 0.0)) fail(ErrorCode::NonpositiveEnergy, "window centre must be positive");
  params_.validate(dimension());
  newton_.params = params_;
  newton_.derivatives = true;
  shell_volume_ = kamqm::shell_volume(v_, a, b);
  VolumeFractionReport rep = kam_volume_fraction(v_, a, b, params_, grid_size, newton_, workers);
  kam_volume_ = rep.fraction * shell_volume_;
  if (dimension() == 1) {
    if (kam_volume_ > 0.0) {
      p_hi_ = action_d1(v_, b);
      p_lo_ = p_hi_ - kam_volume_ / (2.0 * v_.lattice().cell_volume());
    }
  } else {
    accepted_J_ = std::move(rep.accepted_actions);
    accepted_centers_ = std::move(rep.accepted_centers);
    cell_width_ = rep.cell_width;
  }
}

double TorusFamily::physical_gamma() const { return params_.gamma * std::sqrt(energy()); }

KamTorus TorusFamily::torus_at(const Vec& P) const {
  if (P.size() != dimension()) fail(ErrorCode::InvalidArgument, "action has wrong dimension");
  if (dimension() == 1) return torus_d1_from_action(v_, P[0], params_);
  const double E = energy();
  const Lattice& lat = v_.lattice();
  const Vec J = lat.L().transpose() * P / std::sqrt(E);
  KamTorus t = newton_torus(scaled_hamiltonian(v_, E), J, newton_);
  return scaled_to_physical(t, lat, E);
}

double TorusFamily::distance_to_accepted(const Vec& P) const {
  if (P.size() != dimension()) fail(ErrorCode::InvalidArgument, "action has wrong dimension");
  const double inf = std::numeric_limits<double>::infinity();
  if (dimension() == 1) {
    if (p_lo_ > p_hi_) return inf;
    const double x = std::abs(P[0]);
    if (x < p_lo_) return p_lo_ - x;
    if (x > p_hi_) return x - p_hi_;
    return 0.0;
  }
  const double rt = std::sqrt(energy());
  const Mat to_P = rt * v_.lattice().L().transpose().inverse();
  const Vec J = v_.lattice().L().transpose() * P / rt;
  // Cells are coarse boxes around shell actions; also keep the distance to
  // the unperturbed annulus sqrt(2a) <= |P| <= sqrt(2b).
  const double r = P.norm();
  const double ring = std::max({0.0, std::sqrt(2.0 * std::max(a_, 0.0)) - r, r - std::sqrt(2.0 * b_)});
  double best = inf;
  for (const Vec& c : accepted_centers_) {
    const Vec lo = c - 0.5 * cell_width_, hi = c + 0.5 * cell_width_;
    if (J[0] >= lo[0] && J[0] <= hi[0] && J[1] >= lo[1] && J[1] <= hi[1]) return ring;
    Vec corner[4] = {Vec(2), Vec(2), Vec(2), Vec(2)};
    corner[0] << lo[0], lo[1];
    corner[1] << hi[0], lo[1];
    corner[2] << hi[0], hi[1];
    corner[3] << lo[0], hi[1];
    for (int e = 0; e < 4; ++e) {
      best = std::min(best, segment_distance(P, to_P * corner[e], to_P * corner[(e + 1) % 4]));
    }
  }
  return std::max(best, ring);
}

std::vector<Vec> TorusFamily::representative_actions(std::size_t max_count) const {
  std::vector<Vec> out;
  if (max_count == 0) return out;
  if (dimension() == 1) {
    if (p_lo_ > p_hi_) return out;
    for (int sign : {1, -1}) {
      // odd counts give the extra torus to the positive sign
      const std::size_t per_sign = sign > 0 ? (max_count + 1) / 2 : max_count / 2;
      for (std::size_t i = 0; i < per_sign; ++i) {
        const double t = per_sign == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(per_sign - 1);
        out.push_back(Vec::Constant(1, sign * (p_lo_ + t * (p_hi_ - p_lo_))));
      }
    }
    return out;
  }
  const Mat to_P = std::sqrt(energy()) * v_.lattice().L().transpose().inverse();
  const std::size_t n = accepted_J_.size();
  const std::size_t count = std::min(n, max_count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(to_P * accepted_J_[i * n / count]);
  return out;
}

std::pair<Vec, Vec> TorusFamily::accepted_box() const {
  const int d = dimension();
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  if (d == 1) {
    if (p_lo_ <= p_hi_) {
      lo[0] = -p_hi_;
      hi[0] = p_hi_;
    }
    return {lo, hi};
  }
  const Mat to_P = std::sqrt(energy()) * v_.lattice().L().transpose().inverse();
  for (const Vec& c : accepted_centers_) {
    for (int sx = -1; sx <= 1; sx += 2) {
      for (int sy = -1; sy <= 1; sy += 2) {
        Vec corner = c;
        corner[0] += 0.5 * sx * cell_width_[0];
        corner[1] += 0.5 * sy * cell_width_[1];
        const Vec p = to_P * corner;
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
      }
    }
  }
  return {lo, hi};
}

double default_alpha(int dimension, double tau) {
  const double top = (tau - dimension) / dimension;
  if (!(top > 1.0)) fail(ErrorCode::InvalidArgument, "need tau > 2d for an admissible alpha");
  return 0.5 * (1.0 + top);
}

double beta_exponent(int dimension, double tau, double alpha) {
  return 1.0 - alpha * dimension / (tau - dimension);
}

AdmissibleSet admissible_momenta(const Vec& k, double hbar, double alpha, const TorusFamily& family) {
  const int d = family.dimension();
  if (k.size() != d) fail(ErrorCode::InvalidArgument, "k has wrong dimension");
  if (!(hbar > 0.0)) fail(ErrorCode::InvalidArgument, "hbar must be positive");
  AdmissibleSet set;
  set.k = k;
  set.hbar = hbar;
  set.alpha = alpha;
  auto [lo, hi] = family.accepted_box();
  if ((lo.array() > hi.array()).any()) return set;
  const double reach = std::pow(hbar, alpha);
  lo.array() -= reach;
  hi.array() += reach;
  const Lattice& lat = family.potential().lattice();
  // Integer range of l with hbar (B* l + k) inside the box.
  const Mat to_index = lat.dual_basis().inverse();
  Vec imin = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec imax = -imin;
  for (int c = 0; c < (1 << d); ++c) {
    Vec corner(d);
    for (int j = 0; j < d; ++j) corner[j] = (c >> j) & 1 ? hi[j] : lo[j];
    const Vec x = to_index * (corner / hbar - k);
    imin = imin.cwiseMin(x);
    imax = imax.cwiseMax(x);
  }
  std::vector<int> l(static_cast<std::size_t>(d));
  const int l0 = static_cast<int>(std::floor(imin[0])), l1 = static_cast<int>(std::ceil(imax[0]));
  const int m0 = d == 2 ? static_cast<int>(std::floor(imin[1])) : 0;
  const int m1 = d == 2 ? static_cast<int>(std::ceil(imax[1])) : 0;
  for (int i = l0; i <= l1; ++i) {
    for (int j = m0; j <= m1; ++j) {
      l[0] = i;
      if (d == 2) l[1] = j;
      const Vec P = hbar * (lat.dual_vector(l) + k);
      if (family.distance_to_accepted(P) <= reach) {
        set.members.push_back(l);
        set.actions.push_back(P);
      }
    }
  }
  return set;
}

LeadingAmplitude leading_amplitude(const KamTorus& torus, const Lattice& lattice, const TorusGrid& grid) {
  const int d = lattice.dimension();
  if (static_cast<int>(torus.dS_dP.size()) != d) {
    fail(ErrorCode::InvalidArgument, "torus carries no action derivatives");
  }
  LeadingAmplitude lead;
  lead.grid = grid;
  const std::size_t n = grid.size();
  const std::size_t du = static_cast<std::size_t>(d);
  std::vector<std::vector<cplx>> W(du);
  std::vector<std::vector<std::vector<cplx>>> dW(du);  // dW[a][b] = d_{q_b} W_a
  for (int a = 0; a < d; ++a) {
    W[static_cast<std::size_t>(a)] = torus.dS_dP[static_cast<std::size_t>(a)].sample(grid);
    dW[static_cast<std::size_t>(a)] = spectral_gradient(W[static_cast<std::size_t>(a)], grid, lattice);
  }
  lead.A0.resize(n);
  lead.measure.resize(n);
  lead.theta_Q.resize(n * du);
  lead.min_det = std::numeric_limits<double>::infinity();
  const Mat& Linv = lattice.L_inverse();
  int multi[2] = {0, 0};
  double mean_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Mat J = Mat::Identity(d, d);
    for (int a = 0; a < d; ++a) {
      for (int b = 0; b < d; ++b) J(a, b) -= dW[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)][i].real();
    }
    const double det = std::abs(J.determinant());
    lead.min_det = std::min(lead.min_det, det);
    lead.A0[i] = std::sqrt(det);
    mean_sq += det;
    grid.unflatten(i, multi);
    Vec w(d);
    for (int a = 0; a < d; ++a) w[a] = W[static_cast<std::size_t>(a)][i].real();
    const Vec shift = Linv * w;
    for (int j = 0; j < d; ++j) lead.theta_Q[i * du + static_cast<std::size_t>(j)] = grid.angle(multi[j]) - shift[j];
  }
  if (!(lead.min_det > 1e-6)) {
    fail(ErrorCode::DegenerateJacobian, "min |det(d_q theta_Q)| = " + format_double(lead.min_det));
  }
  mean_sq /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) lead.measure[i] = lead.A0[i] * lead.A0[i] / mean_sq;
  return lead;
}

std::vector<cplx> apply_transport(const KamTorus& torus, const Lattice& lattice, const TorusGrid& grid,
                                  const std::vector<cplx>& A) {
  const int d = lattice.dimension();
  const std::vector<cplx> s = torus.S_po.sample(grid);
  const auto grad_s = spectral_gradient(s, grid, lattice);
  const auto lap_s = spectral_laplacian(s, grid, lattice);
  const auto grad_a = spectral_gradient(A, grid, lattice);
  std::vector<cplx> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    cplx adv = 0.0;
    for (int j = 0; j < d; ++j) {
      const double v = torus.P[j] - grad_s[static_cast<std::size_t>(j)][i].real();
      adv += v * grad_a[static_cast<std::size_t>(j)][i];
    }
    out[i] = cplx(0.0, -1.0) * (adv - 0.5 * lap_s[i].real() * A[i]);
  }
  return out;
}

TransportResult transport_solve(const KamTorus& torus, const Lattice& lattice, const LeadingAmplitude& lead,
                                const std::vector<cplx>& f, double gamma_physical, double tau) {
  const TorusGrid& grid = lead.grid;
  const int d = grid.dimension;
  const std::size_t n = grid.size();
  if (f.size() != n) fail(ErrorCode::InvalidArgument, "source has wrong grid size");
  // A quarter of the grid keeps e^{i m.theta_Q(q)} resolved by the q-grid.
  const int M = d == 1 ? grid.n / 4 : std::min(grid.n / 4, 20);
  const std::size_t w = static_cast<std::size_t>(2 * M + 1);
  const std::size_t n_modes = d == 1 ? w : w * w;

  // h-hat_m = mean_Q(f / A0 e^{-i m.theta_Q}) = mean_q(f A0 e^{-i m.theta_Q(q)}).
  const auto fwd = phase_tables(lead, M, -1.0);
  std::vector<cplx> h(n_modes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const cplx src = f[i] * lead.A0[i];
    const cplx* t0 = fwd[0].data() + i * w;
    if (d == 1) {
      for (std::size_t m = 0; m < w; ++m) h[m] += src * t0[m];
    } else {
      const cplx* t1 = fwd[1].data() + i * w;
      for (std::size_t m0 = 0; m0 < w; ++m0) {
        const cplx s0 = src * t0[m0];
        cplx* row = h.data() + m0 * w;
        for (std::size_t m1 = 0; m1 < w; ++m1) row[m1] += s0 * t1[m1];
      }
    }
  }
  for (auto& c : h) c /= static_cast<double>(n);

  TransportResult res;
  const std::size_t zero = d == 1 ? static_cast<std::size_t>(M) : static_cast<std::size_t>(M) * w + M;
  res.E = -h[zero].real();
  double peak = 0.0;
  for (const auto& c : h) peak = std::max(peak, std::abs(c));
  std::vector<cplx> g(n_modes, 0.0);
  for (std::size_t idx = 0; idx < n_modes; ++idx) {
    if (idx == zero) continue;
    Vec m(d);
    if (d == 1) {
      m[0] = static_cast<double>(idx) - M;
    } else {
      m[0] = static_cast<double>(idx / w) - M;
      m[1] = static_cast<double>(idx % w) - M;
    }
    const double div = torus.omega_angle.dot(m);
    if (std::abs(h[idx]) <= 1e-15 * peak) continue;
    if (gamma_physical > 0.0 && std::abs(div) < 0.5 * gamma_physical * std::pow(m.norm(), -tau)) {
      fail(ErrorCode::SmallDivisorBreakdown, "transport divisor " + format_double(div) + " at mode " +
                                                 format_double(m[0]) + (d == 2 ? " " + format_double(m[1]) : ""));
    }
    g[idx] = h[idx] / div;
  }

  const auto inv = phase_tables(lead, M, 1.0);
  res.A.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    cplx s = 0.0;
    const cplx* t0 = inv[0].data() + i * w;
    if (d == 1) {
      for (std::size_t m = 0; m < w; ++m) s += g[m] * t0[m];
    } else {
      const cplx* t1 = inv[1].data() + i * w;
      for (std::size_t m0 = 0; m0 < w; ++m0) {
        cplx r = 0.0;
        const cplx* row = g.data() + m0 * w;
        for (std::size_t m1 = 0; m1 < w; ++m1) r += row[m1] * t1[m1];
        s += r * t0[m0];
      }
    }
    res.A[i] = lead.A0[i] * s;
  }

  std::vector<cplx> TA = apply_transport(torus, lattice, grid, res.A);
  for (std::size_t i = 0; i < n; ++i) res.residual = std::max(res.residual, std::abs(TA[i] - f[i] - res.E * lead.A0[i]));
  return res;
}

Quasimode assemble_quasimode(const TorusFamily& family, std::span<const int> label, const Vec& k, double hbar,
                             int order, const PlaneWaveBasis& basis, const CMat* H) {
  const Potential& v = family.potential();
  const Lattice& lat = v.lattice();
  const int d = lat.dimension();
  if (static_cast<int>(label.size()) != d || k.size() != d) fail(ErrorCode::InvalidArgument, "label/k dimension");
  if (order < 0) fail(ErrorCode::InvalidArgument, "order must be >= 0");
  if (!(hbar > 0.0)) fail(ErrorCode::InvalidArgument, "hbar must be positive");
  if (basis.dimension != d || (basis.k - k).norm() > 1e-14 * std::max(1.0, k.norm())) {
    fail(ErrorCode::InvalidArgument, "basis belongs to a different k");
  }

  Quasimode qm;
  qm.label.assign(label.begin(), label.end());
  qm.k = k;
  qm.hbar = hbar;
  qm.order = order;
  qm.torus = family.torus_at(hbar * (lat.dual_vector(label) + k));
  const KamTorus& t = qm.torus;

  int widest = t.S_po.max_abs_index();
  for (const auto& w : t.dS_dP) widest = std::max(widest, w.max_abs_index());
  const int n_max = d == 1 ? 2048 : 128;
  int n_amp = std::min(n_max, next_pow2(std::max(4 * widest + 2, d == 1 ? 128 : 32)));
  const double gamma = family.physical_gamma();
  const double tau = family.params().tau;
  for (;; n_amp *= 2) {
    TorusGrid grid{d, n_amp};
    LeadingAmplitude lead = leading_amplitude(t, lat, grid);
    std::vector<std::vector<cplx>> A(1, std::vector<cplx>(lead.A0.begin(), lead.A0.end()));
    std::vector<double> E{t.K, 0.0};
    double tres = sup_abs(apply_transport(t, lat, grid, A[0]));
    for (int j = 1; j <= order; ++j) {
      std::vector<cplx> f = spectral_laplacian(A[static_cast<std::size_t>(j - 1)], grid, lat);
      for (auto& x : f) x *= 0.5;
      for (int l = 1; l <= j - 1; ++l) {
        const double e = E[static_cast<std::size_t>(j + 1 - l)];
        const auto& Al = A[static_cast<std::size_t>(l)];
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += e * Al[i];
      }
      TransportResult r = transport_solve(t, lat, lead, f, gamma, tau);
      tres = std::max(tres, r.residual);
      E.push_back(r.E);
      A.push_back(std::move(r.A));
    }
    const double tail = spectral_tail(A.back(), grid);
    // Rounding noise sits near 1e-14 relative; 1e-10 flags real under-resolution.
    if (tail <= 1e-10 || n_amp >= n_max) {
      qm.amplitude_grid = grid;
      qm.amplitudes = std::move(A);
      qm.energies = std::move(E);
      qm.transport_residual = tres;
      break;
    }
  }
  qm.energy = 0.0;
  for (std::size_t j = qm.energies.size(); j-- > 0;) qm.energy = qm.energy * hbar + qm.energies[j];

  // Sum the amplitude series on the amplitude grid.
  std::vector<cplx> amp(qm.amplitude_grid.size(), 0.0);
  for (std::size_t j = qm.amplitudes.size(); j-- > 0;) {
    for (std::size_t i = 0; i < amp.size(); ++i) amp[i] = amp[i] * hbar + qm.amplitudes[j][i];
  }

  // psi~ = e^{i<g*, q>} e^{-i S_po / hbar} A, so the plane-wave coefficient of
  // g* + m is the m-th Fourier coefficient of F = e^{-i S_po / hbar} A.
  int span = 0;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    auto n = basis.mode(i);
    for (int j = 0; j < d; ++j) span = std::max(span, std::abs(n[static_cast<std::size_t>(j)] - label[static_cast<std::size_t>(j)]));
  }
  const int n_syn_max = d == 1 ? (1 << 17) : 1024;
  int n_syn = next_pow2(std::max(2 * span + 2, qm.amplitude_grid.n));
  CVec prev;
  for (;; n_syn *= 2) {
    TorusGrid g{d, n_syn};
    std::vector<cplx> F = fft_resample(amp, qm.amplitude_grid, g);
    const std::vector<cplx> S = t.S_po.sample(g);
    for (std::size_t i = 0; i < F.size(); ++i) F[i] *= std::polar(1.0, -S[i].real() / hbar);
    fft_forward(F, g);
    CVec c(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t i = 0; i < basis.size(); ++i) {
      auto n = basis.mode(i);
      std::size_t flat = 0;
      bool inside = true;
      for (int j = 0; j < d; ++j) {
        const int slot = fft_slot(n[static_cast<std::size_t>(j)] - label[static_cast<std::size_t>(j)], n_syn);
        if (slot < 0) inside = false;
        flat = flat * static_cast<std::size_t>(n_syn) + static_cast<std::size_t>(std::max(slot, 0));
      }
      c[static_cast<Eigen::Index>(i)] = inside ? F[flat] : cplx(0.0);
    }
    const double change = prev.size() ? (c - prev).norm() / c.norm() : 1.0;
    prev = c;
    if (change <= 1e-13) break;
    if (n_syn >= n_syn_max) {
      if (change <= 1e-10) break;
      fail(ErrorCode::GridTooCoarse, "synthesis did not settle: relative change " + format_double(change));
    }
  }
  qm.synthesis_grid = n_syn;
  qm.coefficients = prev / prev.norm();
  qm.basis = basis;

  CMat local;
  if (!H) {
    local = bloch_matrix(v, hbar, basis);
    H = &local;
  }
  qm.residual = (*H * qm.coefficients - qm.energy * qm.coefficients).norm();
  return qm;
}

double phase_periodicity_defect(const Quasimode& qm, const Lattice& lattice) {
  const int d = lattice.dimension();
  double worst = 0.0;
  for (int s = 0; s < 3; ++s) {
    const Vec q = lattice.basis() * Vec::Constant(d, 0.137 + 0.29 * s);
    const double S0 = qm.torus.P.dot(q) - qm.torus.S_po.eval(q).real();
    for (int a = 0; a < d; ++a) {
      const Vec l = lattice.basis().col(a);
      const Vec q1 = q + l;
      const double S1 = qm.torus.P.dot(q1) - qm.torus.S_po.eval(q1).real();
      const double x = (S1 - S0) / qm.hbar - qm.k.dot(l);
      worst = std::max(worst, std::abs(x - kTwoPi * std::round(x / kTwoPi)));
    }
  }
  return worst;
}

QuasimodeFamily assemble_family(const TorusFamily& family, const AdmissibleSet& set, int order,
                                const BandSpectrum& spec, int workers) {
  const CMat H = bloch_matrix(family.potential(), set.hbar, spec.basis);
  struct Outcome {
    bool ok = false;
    Quasimode qm;
    std::string reason;
  };
  auto out = parallel_map(set.members.size(), workers, [&](std::size_t i) {
    Outcome o;
    try {
      o.qm = assemble_quasimode(family, set.members[i], set.k, set.hbar, order, spec.basis, &H);
      o.ok = true;
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::EnergyBelowSeparatrix:
        case ErrorCode::SmallDivisorBreakdown:
        case ErrorCode::NoConvergence:
        case ErrorCode::DegenerateJacobian:
          o.reason = e.what();
          break;
        default:
          throw;
      }
    }
    return o;
  });
  QuasimodeFamily fam;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].ok) {
      fam.modes.push_back(std::move(out[i].qm));
    } else {
      fam.skipped.push_back(set.members[i]);
      fam.reasons.push_back(std::move(out[i].reason));
    }
  }
  return fam;
}

namespace {

void check_same_basis(const Quasimode& qm, const BandSpectrum& spec) {
  if (spec.basis.size() != qm.basis.size() || (spec.k() - qm.k).norm() > 1e-14 * std::max(1.0, qm.k.norm()) ||
      std::abs(spec.hbar - qm.hbar) > 1e-15 * qm.hbar) {
    fail(ErrorCode::InvalidArgument, "spectrum and quasimode use different fibers");
  }
}

}  // namespace

MatchReport residual_and_match(const Quasimode& qm, const BandSpectrum& spec, double window_exponent) {
  check_same_basis(qm, spec);
  const Vec& ev = spec.eigenvalues;
  const double half = std::pow(qm.hbar, window_exponent);
  if (ev.size() == 0 || qm.energy + half >= ev[ev.size() - 1]) {
    fail(ErrorCode::WindowUnresolved, "spectrum stops below E~ + hbar^p = " + format_double(qm.energy + half));
  }
  MatchReport r;
  r.mu = std::numeric_limits<double>::infinity();
  r.distance = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    const double dist = std::abs(ev[i] - qm.energy);
    if (dist < r.distance) {
      r.mu = r.distance;
      r.distance = dist;
      r.nearest = static_cast<int>(i);
    } else {
      r.mu = std::min(r.mu, dist);
    }
    if (dist <= half) ++r.window_count;
  }
  r.nearest_energy = ev[r.nearest];
  r.spectral_slack = 1e-12 * std::max(1.0, std::abs(qm.energy));
  r.spectral_ok = r.distance <= qm.residual + r.spectral_slack;
  r.simple = r.window_count == 1;
  r.overlap = std::abs(spec.eigenvectors.col(r.nearest).dot(qm.coefficients));
  r.aligned_distance = aligned_gap(spec.eigenvectors.col(r.nearest), qm.coefficients);
  r.eq1_bound = 2.0 * qm.residual / r.mu;
  r.eq1_ok = r.aligned_distance <= r.eq1_bound + 1e-12;
  return r;
}

SeparationReport separation_classify(const std::vector<Quasimode>& family, const BandSpectrum& spec, double hbar,
                                     int order) {
  SeparationReport rep;
  const double w = std::pow(hbar, order);
  const Vec& ev = spec.eigenvalues;
  for (std::size_t i = 0; i < family.size(); ++i) {
    check_same_basis(family[i], spec);
    rep.lambda.push_back(i);
    bool separated = true;
    for (std::size_t j = 0; j < family.size() && separated; ++j) {
      if (j != i && std::abs(family[i].energy - family[j].energy) <= 2.0 * w) separated = false;
    }
    if (!separated) continue;
    rep.separated.push_back(i);
    if (ev.size() == 0 || family[i].energy + w >= ev[ev.size() - 1]) {
      fail(ErrorCode::WindowUnresolved, "spectrum stops below E~ + hbar^N");
    }
    int count = 0, band = -1;
    for (Eigen::Index n = 0; n < ev.size(); ++n) {
      if (std::abs(ev[n] - family[i].energy) <= w) {
        ++count;
        band = static_cast<int>(n);
      }
    }
    if (count != 1) continue;
    rep.simple.push_back(i);
    SeparationMatch m;
    m.member = i;
    m.band = band;
    m.distance = std::abs(ev[band] - family[i].energy);
    m.overlap = std::abs(spec.eigenvectors.col(band).dot(family[i].coefficients));
    m.aligned_distance = aligned_gap(spec.eigenvectors.col(band), family[i].coefficients);
    m.bound = 2.0 * family[i].residual / w;
    m.bound_ok = m.aligned_distance <= m.bound + 1e-12;
    rep.matches.push_back(m);
  }
  std::vector<int> bands;
  for (const auto& m : rep.matches) bands.push_back(m.band);
  std::sort(bands.begin(), bands.end());
  rep.injective = std::adjacent_find(bands.begin(), bands.end()) == bands.end();
  return rep;
}

QuasimodeVelocity quasimode_velocity(const Quasimode& qm) {
  const int d = qm.basis.dimension;
  QuasimodeVelocity out;
  const Vec w = qm.coefficients.cwiseAbs2();
  out.expectation = qm.hbar * (qm.basis.shifted * w);
  out.classical = qm.torus.omega;
  double joint = 0.0;
  for (int j = 0; j < d; ++j) {
    const Vec vel = qm.hbar * qm.basis.shifted.row(j).transpose();
    joint += ((vel.array() - out.classical[j]).matrix().cwiseProduct(qm.coefficients.cwiseAbs().eval())).squaredNorm();
  }
  out.joint_residual = std::sqrt(joint);
  const Lattice& lat = qm.torus.S_po.lattice();
  const LeadingAmplitude lead = leading_amplitude(qm.torus, lat, qm.amplitude_grid);
  const auto grad = spectral_gradient(qm.torus.S_po.sample(qm.amplitude_grid), qm.amplitude_grid, lat);
  out.measure_average = Vec::Zero(d);
  for (std::size_t i = 0; i < lead.measure.size(); ++i) {
    for (int j = 0; j < d; ++j) {
      out.measure_average[j] += lead.measure[i] * (qm.torus.P[j] - grad[static_cast<std::size_t>(j)][i].real());
    }
  }
  out.measure_average /= static_cast<double>(lead.measure.size());
  return out;
}

}  // namespace kamqm
