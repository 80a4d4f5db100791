#include "kam.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "bloch.hpp"
#include "error.hpp"
#include "parallel.hpp"

namespace kamqm {

void DiophantineParams::validate(int dimension) const {
  if (!(gamma > 0.0)) fail(ErrorCode::InvalidArgument, "gamma must be positive");
  if (!(tau > dimension - 1)) fail(ErrorCode::InvalidArgument, "tau must exceed d - 1");
  if (k_max < 1) fail(ErrorCode::InvalidArgument, "k_max must be >= 1");
}

DiophantineParams DiophantineParams::defaults(int dimension, double energy, double c) {
  if (!(energy > 0.0)) fail(ErrorCode::NonpositiveEnergy, "Diophantine defaults need E > 0");
  DiophantineParams p;
  p.tau = 2.0 * dimension + 1.0;
  p.gamma = c * std::sqrt(1.0 / energy);
  p.k_max = dimension == 1 ? 8 : 32;
  return p;
}

double diophantine_margin(const Vec& omega, const DiophantineParams& params) {
  const int d = static_cast<int>(omega.size());
  if (d < 1 || d > 2) fail(ErrorCode::UnsupportedDimension, "margin supports d = 1, 2");
  double best = INFINITY;
  const int K = params.k_max;
  if (d == 1) {
    for (int k = 1; k <= K; ++k) best = std::min(best, std::abs(omega[0] * k) * std::pow(k, params.tau));
    return best;
  }
  // Half plane: k and -k give the same value.
  for (int k1 = 0; k1 <= K; ++k1) {
    for (int k2 = -K; k2 <= K; ++k2) {
      if (k1 == 0 && k2 <= 0) continue;
      const double norm = std::sqrt(static_cast<double>(k1) * k1 + static_cast<double>(k2) * k2);
      best = std::min(best, std::abs(omega[0] * k1 + omega[1] * k2) * std::pow(norm, params.tau));
    }
  }
  return best;
}

TorusHamiltonian physical_hamiltonian(const Potential& v) {
  const int d = v.dimension();
  return {v.lattice(), Mat::Identity(d, d), v.series(), 1.0};
}

TorusHamiltonian scaled_hamiltonian(const Potential& v, double energy) {
  if (!(energy > 0.0)) fail(ErrorCode::NonpositiveEnergy, "rescaling needs E > 0");
  const int d = v.dimension();
  Lattice std_lat = Lattice::standard(d);
  FourierSeries s(std_lat, true);
  for (std::size_t t = 0; t < v.series().size(); ++t) s.set(v.series().index(t), v.series().coefficient_at(t));
  return {std_lat, v.lattice().M(), std::move(s), 1.0 / energy};
}

Vec KamTorus::momentum(const Vec& q) const { return P - S_po.gradient(q).real(); }

namespace {

// Grid workspace for one torus frame: per-slot integer modes and physical
// wavevectors, and the sampled potential.
struct Frame {
  const TorusHamiltonian* h = nullptr;
  TorusGrid grid;
  int cutoff = 0;
  std::vector<int> modes;      // size x d
  std::vector<double> waves;   // size x d, physical B* n
  std::vector<char> active;    // 0 < |n|_inf <= cutoff, not Nyquist
  std::vector<double> vgrid;   // eps V

  Frame(const TorusHamiltonian& ham, int n, int cut) : h(&ham), grid{ham.dimension(), n}, cutoff(cut) {
    const int d = grid.dimension;
    const std::size_t sz = grid.size();
    modes.resize(sz * static_cast<std::size_t>(d));
    waves.assign(sz * static_cast<std::size_t>(d), 0.0);
    active.assign(sz, 0);
    const Mat& dual = ham.lattice.dual_basis();
    int multi[2] = {0, 0};
    for (std::size_t f = 0; f < sz; ++f) {
      grid.unflatten(f, multi);
      bool ok = true, zero = true;
      for (int j = 0; j < d; ++j) {
        const int m = fft_frequency(multi[j], n);
        modes[f * d + j] = m;
        if (n % 2 == 0 && m == -n / 2) ok = false;
        if (std::abs(m) > cutoff) ok = false;
        if (m != 0) zero = false;
      }
      active[f] = (ok && !zero) ? 1 : 0;
      for (int a = 0; a < d; ++a)
        for (int j = 0; j < d; ++j) waves[f * d + a] += dual(a, j) * modes[f * d + j];
    }
    std::vector<cplx> vs = ham.V.sample(grid);
    vgrid.resize(sz);
    for (std::size_t f = 0; f < sz; ++f) vgrid[f] = ham.eps * vs[f].real();
  }

  int d() const { return grid.dimension; }

  // Physical gradient fields of the function with coefficients `hat`.
  std::vector<std::vector<cplx>> gradient(const std::vector<cplx>& hat) const {
    const int dd = d();
    std::vector<std::vector<cplx>> out(static_cast<std::size_t>(dd), std::vector<cplx>(hat.size()));
    for (int a = 0; a < dd; ++a) {
      auto& fld = out[static_cast<std::size_t>(a)];
      for (std::size_t f = 0; f < hat.size(); ++f) fld[f] = cplx(0.0, waves[f * dd + a]) * hat[f];
      fft_inverse(fld, grid);
    }
    return out;
  }

  double divisor(const Vec& omega_angle, std::size_t f) const {
    double s = 0.0;
    for (int j = 0; j < d(); ++j) s += omega_angle[j] * modes[f * d() + j];
    return s;
  }

  double mode_norm(std::size_t f) const {
    double s = 0.0;
    for (int j = 0; j < d(); ++j) s += static_cast<double>(modes[f * d() + j]) * modes[f * d() + j];
    return std::sqrt(s);
  }

  FourierSeries to_series(const std::vector<cplx>& hat) const {
    FourierSeries s(h->lattice, true);
    for (std::size_t f = 0; f < hat.size(); ++f) {
      if (!active[f] || hat[f] == cplx(0.0, 0.0)) continue;
      s.set({modes.data() + f * d(), static_cast<std::size_t>(d())}, hat[f]);
    }
    return s;
  }

  std::vector<cplx> from_series(const FourierSeries& s) const {
    std::vector<cplx> hat(grid.size(), cplx(0.0, 0.0));
    for (std::size_t t = 0; t < s.size(); ++t) {
      auto n = s.index(t);
      std::size_t flat = 0;
      bool fits = true;
      for (int v : n) {
        const int slot = fft_slot(v, grid.n);
        if (slot < 0 || std::abs(v) > cutoff) fits = false;
        flat = flat * static_cast<std::size_t>(grid.n) + static_cast<std::size_t>(std::max(slot, 0));
      }
      if (fits) hat[flat] = s.coefficient_at(t);
    }
    return hat;
  }
};

int frame_size(const TorusHamiltonian& h, int cutoff) {
  const int need = std::max({4 * cutoff + 2, 2 * h.V.max_abs_index() + 2, h.dimension() == 1 ? 64 : 16});
  return next_pow2(need);
}

// Hamilton-Jacobi residual field R = 1/2 <u, G u> + eps V with u = P - grad S.
std::vector<cplx> hj_field(const Frame& fr, const Vec& P, const std::vector<cplx>& s_hat) {
  const int d = fr.d();
  auto grad = fr.gradient(s_hat);
  std::vector<cplx> R(fr.grid.size());
  const Mat& G = fr.h->G;
  double u[2];
  for (std::size_t f = 0; f < R.size(); ++f) {
    for (int a = 0; a < d; ++a) u[a] = P[a] - grad[static_cast<std::size_t>(a)][f].real();
    double kin = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) kin += u[a] * G(a, b) * u[b];
    R[f] = 0.5 * kin + fr.vgrid[f];
  }
  return R;
}

double sup_deviation(const std::vector<cplx>& R, double K) {
  double m = 0.0;
  for (const auto& r : R) {
    const double e = std::abs(r.real() - K);
    if (!(e <= m)) m = e;  // keeps NaN
  }
  return m;
}

// Linearized Hamilton-Jacobi operator x = (K', dS) -> K' + <u, grad dS>
// with u = G (P - grad S), on the frame's active modes plus the mean slot
// (packed index 0). Preconditioned by the constant coefficient <omega, n>.
struct Transport {
  const Frame* fr = nullptr;
  std::vector<std::size_t> slots;
  std::vector<double> u;    // size x d
  std::vector<double> div;  // per packed index

  Transport(const Frame& f, const Vec& P, const std::vector<cplx>& s_hat, const Vec& omega_angle) : fr(&f) {
    const int d = f.d();
    const std::size_t sz = f.grid.size();
    slots.push_back(0);
    div.push_back(0.0);
    for (std::size_t k = 0; k < sz; ++k) {
      if (!f.active[k]) continue;
      slots.push_back(k);
      div.push_back(f.divisor(omega_angle, k));
    }
    auto grad = f.gradient(s_hat);
    const Mat& G = f.h->G;
    u.resize(sz * static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < sz; ++k) {
      for (int a = 0; a < d; ++a) {
        double acc = 0.0;
        for (int b = 0; b < d; ++b) acc += G(a, b) * (P[b] - grad[static_cast<std::size_t>(b)][k].real());
        u[k * d + a] = acc;
      }
    }
  }

  CVec pack(const std::vector<cplx>& hat) const {
    CVec x(static_cast<Eigen::Index>(slots.size()));
    for (std::size_t i = 0; i < slots.size(); ++i) x[static_cast<Eigen::Index>(i)] = hat[slots[i]];
    return x;
  }

  // Zero-mean coefficient array of the dS part.
  std::vector<cplx> unpack(const CVec& x) const {
    std::vector<cplx> hat(fr->grid.size(), cplx(0.0, 0.0));
    for (std::size_t i = 1; i < slots.size(); ++i) hat[slots[i]] = x[static_cast<Eigen::Index>(i)];
    return hat;
  }

  CVec apply(const CVec& x) const {
    const int d = fr->d();
    auto g = fr->gradient(unpack(x));
    std::vector<cplx> field(fr->grid.size());
    for (std::size_t k = 0; k < field.size(); ++k) {
      cplx acc(0.0, 0.0);
      for (int a = 0; a < d; ++a) acc += u[k * d + a] * g[static_cast<std::size_t>(a)][k];
      field[k] = acc;
    }
    fft_forward(field, fr->grid);
    CVec y = pack(field);
    y[0] += x[0];
    return y;
  }

  CVec precondition(const CVec& y) const {
    CVec z(y.size());
    z[0] = y[0];
    for (Eigen::Index i = 1; i < y.size(); ++i) {
      const double dv = div[static_cast<std::size_t>(i)];
      z[i] = dv != 0.0 ? y[i] / cplx(0.0, dv) : cplx(0.0, 0.0);
    }
    return z;
  }
};

// Restarted GMRES with right preconditioning; the least-squares problem is
// re-solved each step, which is cheap next to the FFTs.
CVec gmres(const Transport& T, const CVec& b, double rtol) {
  constexpr int kRestart = 60, kCycles = 10;
  CVec x = CVec::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) return x;
  for (int cycle = 0; cycle < kCycles; ++cycle) {
    const CVec r = b - T.apply(x);
    const double beta = r.norm();
    if (beta <= rtol * bnorm) break;
    Eigen::MatrixXcd V(b.size(), kRestart + 1);
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(kRestart + 1, kRestart);
    V.col(0) = r / beta;
    CVec y;
    int m = 0;
    bool done = false;
    for (int j = 0; j < kRestart; ++j) {
      CVec w = T.apply(T.precondition(V.col(j)));
      for (int i = 0; i <= j; ++i) {
        H(i, j) = V.col(i).dot(w);
        w -= H(i, j) * V.col(i);
      }
      const double hn = w.norm();
      H(j + 1, j) = hn;
      m = j + 1;
      CVec rhs = CVec::Zero(m + 1);
      rhs[0] = beta;
      const auto Hm = H.topLeftCorner(m + 1, m);
      y = Hm.householderQr().solve(rhs);
      const double res = (rhs - Hm * y).norm();
      if (res <= rtol * bnorm || hn <= 1e-14 * beta) {
        done = true;
        break;
      }
      V.col(j + 1) = w / hn;
    }
    x += T.precondition(V.leftCols(m) * y);
    if (done) break;
  }
  return x;
}

// Solve <u, grad W_a> + c_a = u_a for every axis; c = d_P K and W_a = d_{P_a} S.
void solve_derivatives(const Frame& fr, const Vec& P, const std::vector<cplx>& s_hat, const Vec& om,
                       KamTorus& t) {
  const int d = fr.d();
  const Transport T(fr, P, s_hat, om);
  t.omega = Vec::Zero(d);
  t.dS_dP.clear();
  for (int a = 0; a < d; ++a) {
    std::vector<cplx> rhs(fr.grid.size());
    for (std::size_t k = 0; k < rhs.size(); ++k) rhs[k] = T.u[k * d + a];
    fft_forward(rhs, fr.grid);
    const CVec x = gmres(T, T.pack(rhs), 1e-13);
    t.omega[a] = x[0].real();
    t.dS_dP.push_back(fr.to_series(T.unpack(x)));
  }
}

}  // namespace

KamTorus newton_torus(const TorusHamiltonian& h, const Vec& P, const NewtonOptions& opt, const KamTorus* warm,
                      const Vec* divisor_frequency) {
  const int d = h.dimension();
  if (P.size() != d) fail(ErrorCode::InvalidArgument, "action has wrong dimension");
  if (opt.cutoff < 1) fail(ErrorCode::InvalidArgument, "cutoff must be >= 1");
  opt.params.validate(d);
  Frame fr(h, frame_size(h, opt.cutoff), opt.cutoff);
  const std::size_t sz = fr.grid.size();
  // The divisors only precondition the linear solves and screen for
  // resonance; the Newton step itself uses the full variable coefficient.
  Vec omega0 = h.lattice.L_inverse() * (h.G * P);
  if (divisor_frequency) {
    omega0 = *divisor_frequency;
  } else if (warm && warm->omega_angle.size() == d) {
    omega0 = warm->omega_angle;
  }
  const double scale = std::max(1.0, std::abs(h.kinetic(P)) + std::abs(h.eps) * h.V.max_abs_coefficient());

  std::vector<cplx> s_hat = warm ? fr.from_series(warm->S_po) : std::vector<cplx>(sz, cplx(0.0, 0.0));
  std::vector<cplx> R = hj_field(fr, P, s_hat);
  double best = INFINITY;
  int since_best = 0;
  double K = 0.0, res = INFINITY;
  int it = 0;
  for (;; ++it) {
    std::vector<cplx> R_hat = R;
    fft_forward(R_hat, fr.grid);
    K = R_hat[0].real();
    res = sup_deviation(R, K);
    if (!std::isfinite(res)) fail(ErrorCode::NoConvergence, "iteration diverged");
    if (res <= opt.tol * scale) break;
    if (res < 0.5 * best) {
      best = res;
      since_best = 0;
    } else if (++since_best >= 3 && res <= 100.0 * opt.tol * scale) {
      break;  // rounding floor of the sup norm
    } else if (since_best >= 6) {
      fail(ErrorCode::NoConvergence, "residual stagnated at " + format_double(res));
    }
    if (it >= opt.max_iterations) fail(ErrorCode::NoConvergence, "no convergence after " + std::to_string(it) + " iterations, residual " + format_double(res));
    for (std::size_t f = 0; f < sz; ++f) {
      if (!fr.active[f] || std::abs(R_hat[f]) <= 1e-15 * scale) continue;
      const double div = fr.divisor(omega0, f);
      if (div == 0.0) fail(ErrorCode::SmallDivisorBreakdown, "exact resonance");
      if (opt.check_divisors && std::abs(div) < 0.5 * opt.params.gamma * std::pow(fr.mode_norm(f), -opt.params.tau)) {
        fail(ErrorCode::SmallDivisorBreakdown, "divisor " + std::to_string(div) + " below threshold");
      }
    }
    const Transport T(fr, P, s_hat, omega0);
    const std::vector<cplx> ds = T.unpack(gmres(T, T.pack(R_hat), 1e-12));
    // Halve the step while the residual grows.
    std::vector<cplx> trial(sz);
    for (double lambda = 1.0;; lambda *= 0.5) {
      for (std::size_t f = 0; f < sz; ++f) trial[f] = s_hat[f] + lambda * ds[f];
      std::vector<cplx> Rt = hj_field(fr, P, trial);
      double mean = 0.0;
      for (const cplx& r : Rt) mean += r.real();
      const double rt = sup_deviation(Rt, mean / static_cast<double>(sz));
      if ((std::isfinite(rt) && rt < res) || lambda < 0.02) {
        s_hat.swap(trial);
        R.swap(Rt);
        break;
      }
    }
  }

  KamTorus t;
  t.P = P;
  t.S_po = fr.to_series(s_hat);
  t.K = K;
  t.iterations = it;
  if (opt.derivatives) {
    solve_derivatives(fr, P, s_hat, omega0, t);
  } else {
    t.omega = h.G * P;
  }
  t.omega_angle = h.lattice.L_inverse() * t.omega;
  t.margin = diophantine_margin(t.omega_angle, opt.params);
  t.residual = torus_residual(h, t, 2 * fr.grid.n);
  return t;
}

KamTorus newton_torus_frequency(const TorusHamiltonian& h, const Vec& omega_target, const NewtonOptions& opt) {
  const int d = h.dimension();
  if (omega_target.size() != d) fail(ErrorCode::InvalidArgument, "frequency has wrong dimension");
  opt.params.validate(d);
  const Vec target_angle = h.lattice.L_inverse() * omega_target;
  const double m = diophantine_margin(target_angle, opt.params);
  if (m < opt.params.gamma) {
    fail(ErrorCode::SmallDivisorBreakdown, "target frequency margin " + format_double(m) + " below gamma");
  }
  // Secant-free outer loop: d omega / dP = G + O(eps), so P moves by
  // G^{-1} times the frequency error, each inner solve warm started.
  NewtonOptions inner = opt;
  inner.derivatives = true;
  const Mat Ginv = h.G.inverse();
  const double wn = std::max(1.0, omega_target.norm());
  Vec P = Ginv * omega_target;
  KamTorus t;
  bool have = false;
  double best = INFINITY;
  int since_best = 0;
  for (int it = 0;; ++it) {
    KamTorus next = newton_torus(h, P, inner, have ? &t : nullptr, &target_angle);
    t = std::move(next);
    have = true;
    const double ferr = (omega_target - t.omega).norm();
    if (!std::isfinite(ferr)) fail(ErrorCode::NoConvergence, "iteration diverged");
    if (ferr <= 1e-12 * wn) {
      t.iterations = it;
      return t;
    }
    if (ferr < 0.5 * best) {
      best = ferr;
      since_best = 0;
    } else if (++since_best >= 6) {
      fail(ErrorCode::NoConvergence, "frequency error stagnated at " + format_double(ferr));
    }
    if (it >= opt.max_iterations) fail(ErrorCode::NoConvergence, "no convergence, frequency error " + format_double(ferr));
    P += Ginv * (omega_target - t.omega);
  }
}

double torus_residual(const TorusHamiltonian& h, const KamTorus& t, int n) {
  const int cut = std::max(1, t.S_po.max_abs_index());
  Frame fr(h, std::max(n, frame_size(h, cut)), cut);
  std::vector<cplx> hat = fr.from_series(t.S_po);
  std::vector<cplx> R = hj_field(fr, t.P, hat);
  return sup_deviation(R, t.K);
}

KamTorus scaled_to_physical(const KamTorus& t, const Lattice& lattice, double energy) {
  if (!(energy > 0.0)) fail(ErrorCode::NonpositiveEnergy, "rescaling needs E > 0");
  const double rt = std::sqrt(energy);
  KamTorus out;
  out.P = rt * lattice.L().transpose().inverse() * t.P;
  FourierSeries s(lattice, true);
  for (std::size_t i = 0; i < t.S_po.size(); ++i) s.set(t.S_po.index(i), rt * t.S_po.coefficient_at(i));
  out.S_po = std::move(s);
  const int d = lattice.dimension();
  if (!t.dS_dP.empty()) {
    const Mat& L = lattice.L();
    for (int a = 0; a < d; ++a) {
      FourierSeries w(lattice, true);
      for (int b = 0; b < d; ++b) {
        // J = L^T P / sqrt(E), and the sqrt(E) of S cancels the 1/sqrt(E) of dJ/dP.
        const FourierSeries& src = t.dS_dP[static_cast<std::size_t>(b)];
        for (std::size_t i = 0; i < src.size(); ++i) w.add(src.index(i), L(a, b) * src.coefficient_at(i));
      }
      out.dS_dP.push_back(std::move(w));
    }
  }
  out.K = energy * t.K;
  out.omega = rt * lattice.L() * t.omega;
  out.omega_angle = lattice.L_inverse() * out.omega;
  out.residual = energy * t.residual;
  out.margin = rt * t.margin;
  out.iterations = t.iterations;
  out.scaled = false;
  out.energy_scale = 1.0;
  return out;
}

KamTorus physical_to_scaled(const KamTorus& t, const Lattice& lattice, double energy) {
  if (!(energy > 0.0)) fail(ErrorCode::NonpositiveEnergy, "rescaling needs E > 0");
  const double rt = std::sqrt(energy);
  const int d = lattice.dimension();
  Lattice std_lat = Lattice::standard(d);
  KamTorus out;
  out.P = lattice.L().transpose() * t.P / rt;
  FourierSeries s(std_lat, true);
  for (std::size_t i = 0; i < t.S_po.size(); ++i) s.set(t.S_po.index(i), t.S_po.coefficient_at(i) / rt);
  out.S_po = std::move(s);
  if (!t.dS_dP.empty()) {
    const Mat Linv = lattice.L_inverse();
    for (int b = 0; b < d; ++b) {
      // d/dJ_b = sum_a (dP_a/dJ_b) d/dP_a, P = sqrt(E) L^{-T} J
      FourierSeries w(std_lat, true);
      for (int a = 0; a < d; ++a) {
        const FourierSeries& src = t.dS_dP[static_cast<std::size_t>(a)];
        for (std::size_t i = 0; i < src.size(); ++i) w.add(src.index(i), Linv(b, a) * src.coefficient_at(i));
      }
      out.dS_dP.push_back(std::move(w));
    }
  }
  out.K = t.K / energy;
  out.omega = lattice.L_inverse() * t.omega / rt;
  out.omega_angle = out.omega;
  out.residual = t.residual / energy;
  out.margin = t.margin / rt;
  out.iterations = t.iterations;
  out.scaled = true;
  out.energy_scale = energy;
  return out;
}

double separatrix_energy(const Potential& v) {
  return v.v_max() + 1e-3 * (v.v_max() - v.v_min() + 1.0);
}

namespace {

// Samples of |p| = sqrt(2 (E - V)) on an n-point grid of the d = 1 cell.
std::vector<double> speed_samples(const Potential& v, double energy, int n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  const double a = v.lattice().basis()(0, 0);
  Vec q(1);
  for (int i = 0; i < n; ++i) {
    q[0] = a * i / n;
    p[static_cast<std::size_t>(i)] = std::sqrt(2.0 * (energy - v.value(q)));
  }
  return p;
}

// Grid size at which the periodic trapezoid rule for mean(1/|p|) has
// converged to rounding.
int converged_grid(const Potential& v, double energy) {
  double prev = NAN;
  for (int n = 256; n <= 65536; n *= 2) {
    auto p = speed_samples(v, energy, n);
    double s = 0.0;
    for (double x : p) s += 1.0 / x;
    s /= n;
    if (std::abs(s - prev) <= 1e-15 * s) return n;
    prev = s;
  }
  return 65536;
}

}  // namespace

double action_d1(const Potential& v, double energy, double* dP_dE) {
  if (v.dimension() != 1) fail(ErrorCode::UnsupportedDimension, "action_d1 is one-dimensional");
  if (!(energy > v.v_max())) fail(ErrorCode::EnergyBelowSeparatrix, "energy below V_max");
  const int n = converged_grid(v, energy);
  auto p = speed_samples(v, energy, n);
  double s = 0.0, inv = 0.0;
  for (double x : p) {
    s += x;
    inv += 1.0 / x;
  }
  if (dP_dE) *dP_dE = inv / n;
  return s / n;
}

KamTorus torus_d1(const Potential& v, double energy, int sign, const DiophantineParams& params) {
  if (v.dimension() != 1) fail(ErrorCode::UnsupportedDimension, "torus_d1 is one-dimensional");
  if (sign != 1 && sign != -1) fail(ErrorCode::InvalidArgument, "sign must be +1 or -1");
  if (!(energy >= separatrix_energy(v))) {
    fail(ErrorCode::EnergyBelowSeparatrix, "E = " + std::to_string(energy) + " below separatrix margin " +
                                               std::to_string(separatrix_energy(v)));
  }
  const Lattice& lat = v.lattice();
  const int n = converged_grid(v, energy);
  TorusGrid grid{1, n};
  auto speed = speed_samples(v, energy, n);
  double mean_p = 0.0, mean_inv = 0.0;
  for (double x : speed) {
    mean_p += x;
    mean_inv += 1.0 / x;
  }
  mean_p /= n;
  mean_inv /= n;
  const double P = sign * mean_p;
  const double omega = sign / mean_inv;
  // S' = P - p and d_P S' = 1 - omega / p, both zero mean.
  // Rounding noise follows the size of the cancelling terms, not of the
  // (possibly small) difference, so each series is cut relative to that.
  std::vector<cplx> ds(speed.size()), dw(speed.size());
  double ds_scale = std::abs(P), dw_scale = 1.0;
  for (std::size_t i = 0; i < speed.size(); ++i) {
    const double p = sign * speed[i];
    ds[i] = P - p;
    dw[i] = 1.0 - omega / p;
    ds_scale = std::max(ds_scale, std::abs(p));
    dw_scale = std::max(dw_scale, std::abs(omega / p));
  }
  const double b = lat.dual_basis()(0, 0);
  auto integrate = [&](std::vector<cplx> f, double scale) {
    fft_forward(f, grid);
    FourierSeries s(lat, true);
    for (int slot = 0; slot < n; ++slot) {
      const int m = fft_frequency(slot, n);
      if (m == 0 || m == -n / 2) continue;
      const cplx c = f[static_cast<std::size_t>(slot)];
      if (std::abs(c) <= 1e-15 * scale) continue;
      const int idx[1] = {m};
      s.set(idx, c / cplx(0.0, b * m));
    }
    // Enforce exact Hermitian pairing lost to rounding.
    FourierSeries sym(lat, true);
    for (std::size_t t = 0; t < s.size(); ++t) {
      const int m = s.index(t)[0];
      const int neg[1] = {-m};
      sym.set(s.index(t), 0.5 * (s.coefficient_at(t) + std::conj(s.coefficient(neg))));
    }
    return sym;
  };
  KamTorus t;
  t.P = Vec::Constant(1, P);
  t.S_po = integrate(ds, ds_scale);
  t.dS_dP.push_back(integrate(dw, dw_scale));
  t.K = energy;
  t.omega = Vec::Constant(1, omega);
  t.omega_angle = lat.L_inverse() * t.omega;
  t.margin = diophantine_margin(t.omega_angle, params);
  t.residual = torus_residual(physical_hamiltonian(v), t, 1024);
  return t;
}

KamTorus torus_d1_from_action(const Potential& v, double P, const DiophantineParams& params) {
  const double sep = separatrix_energy(v);
  const double target = std::abs(P);
  const int sign = P >= 0.0 ? 1 : -1;
  if (!(target >= action_d1(v, sep))) fail(ErrorCode::EnergyBelowSeparatrix, "action below the separatrix action");
  double lo = sep, hi = 0.5 * target * target + v.v_max() + 1e-12;
  double e = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    double dpde = 0.0;
    const double f = action_d1(v, e, &dpde) - target;
    if (f > 0.0) hi = e; else lo = e;
    if (std::abs(f) <= 1e-15 * target || hi - lo <= 1e-15 * hi) break;
    double next = e - f / dpde;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    e = next;
  }
  return torus_d1(v, e, sign, params);
}

VolumeFractionReport kam_volume_fraction(const Potential& v, double a, double b, const DiophantineParams& params,
                                         int grid_size, const NewtonOptions& opt, int workers) {
  if (!(b > a)) fail(ErrorCode::InvalidArgument, "energy interval must satisfy a < b");
  const int d = v.dimension();
  const double E = 0.5 * (a + b);
  if (!(E > 0.0)) fail(ErrorCode::NonpositiveEnergy, "shell center must be positive");
  params.validate(d);
  VolumeFractionReport rep;
  rep.gamma = params.gamma;
  if (d == 1) {
    const double vol = shell_volume(v, a, b);
    if (!(vol > 0.0)) return rep;
    const double len = v.lattice().cell_volume();
    const double sep = separatrix_energy(v);
    double lo = std::max(a, sep);
    if (lo >= b) return rep;
    // Scaled angle frequency |L^{-1} omega| / sqrt(E) grows with energy;
    // locate where it reaches gamma.
    auto scaled_freq = [&](double e) {
      double dpde = 0.0;
      action_d1(v, e, &dpde);
      return std::abs(v.lattice().L_inverse()(0, 0) / dpde) / std::sqrt(E);
    };
    if (scaled_freq(lo) < params.gamma) {
      if (scaled_freq(b) < params.gamma) return rep;
      double x = lo, y = b;
      for (int i = 0; i < 200 && y - x > 1e-15 * y; ++i) {
        const double mid = 0.5 * (x + y);
        (scaled_freq(mid) < params.gamma ? x : y) = mid;
      }
      lo = y;
    }
    const double kam = 2.0 * len * (action_d1(v, b) - action_d1(v, lo));
    rep.fraction = std::min(1.0, kam / vol);
    rep.cells = 1;
    rep.converged = rep.diophantine = 1;
    return rep;
  }

  if (grid_size < 2) fail(ErrorCode::InvalidArgument, "grid size must be >= 2");
  TorusHamiltonian h = scaled_hamiltonian(v, E);
  const double lo_e = a / E, hi_e = b / E;
  const Mat Minv = h.G.inverse();
  Vec half(d);
  for (int j = 0; j < d; ++j) half[j] = std::sqrt(2.0 * hi_e * Minv(j, j));
  std::vector<Vec> cells, centers;
  TorusGrid g{d, grid_size};
  int multi[2] = {0, 0};
  // Cell centers have rational frequency ratios (2m+1)/(2m'+1), all exactly
  // resonant; each cell is represented by a Kronecker-sequence point instead.
  const double alpha[2] = {0.6180339887498949, 0.7548776662466927};
  for (std::size_t f = 0; f < g.size(); ++f) {
    g.unflatten(f, multi);
    Vec J(d), C(d);
    for (int j = 0; j < d; ++j) {
      double u = 0.5 + alpha[j] * static_cast<double>(f + 1);
      u -= std::floor(u);
      J[j] = -half[j] + (multi[j] + u) * 2.0 * half[j] / grid_size;
      C[j] = -half[j] + (multi[j] + 0.5) * 2.0 * half[j] / grid_size;
    }
    const double e0 = h.kinetic(J);
    if (e0 >= lo_e && e0 <= hi_e) {
      cells.push_back(J);
      centers.push_back(C);
    }
  }
  NewtonOptions o = opt;
  o.params = params;
  o.derivatives = true;
  enum Outcome : int { Ok = 0, Resonant = 1, Diverged = 2, Weak = 3 };
  auto outcome = parallel_map(cells.size(), workers, [&](std::size_t i) -> int {
    try {
      KamTorus t = newton_torus(h, cells[i], o);
      return t.margin >= params.gamma ? Ok : Weak;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SmallDivisorBreakdown) return Resonant;
      if (e.code() == ErrorCode::NoConvergence) return Diverged;
      throw;
    }
  });
  rep.cells = cells.size();
  rep.cell_width = 2.0 * half / grid_size;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (outcome[i] != Ok) continue;
    rep.accepted_actions.push_back(cells[i]);
    rep.accepted_centers.push_back(centers[i]);
  }
  for (int r : outcome) {
    if (r == Ok || r == Weak) ++rep.converged;
    if (r == Ok) ++rep.diophantine;
    if (r == Resonant) ++rep.small_divisor;
    if (r == Diverged) ++rep.no_convergence;
  }
  rep.fraction = cells.empty() ? 0.0 : static_cast<double>(rep.diophantine) / static_cast<double>(cells.size());
  return rep;
}

void write_torus(std::ostream& out, const KamTorus& t) {
  auto vec = [&](const char* key, const Vec& x) {
    out << key;
    for (Eigen::Index i = 0; i < x.size(); ++i) out << ' ' << x[i];
    out << '\n';
  };
  const auto prec = out.precision(17);
  out << "torus\n";
  vec("P", t.P);
  vec("omega", t.omega);
  out << "K " << t.K << "\nresidual " << t.residual << "\nmargin " << t.margin << '\n';
  out << "coefficients " << t.S_po.size() << '\n';
  for (std::size_t i = 0; i < t.S_po.size(); ++i) {
    for (int n : t.S_po.index(i)) out << n << ' ';
    out << t.S_po.coefficient_at(i).real() << ' ' << t.S_po.coefficient_at(i).imag() << '\n';
  }
  out << "end\n";
  out.precision(prec);
}

}  // namespace kamqm
