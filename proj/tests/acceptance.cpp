// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 2 7 9      a subset (criterion 11 then reruns only that subset)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "core/bloch.hpp"
#include "core/classical.hpp"
#include "core/error.hpp"
#include "core/kam.hpp"
#include "core/quasimode.hpp"
#include "core/transport.hpp"

using namespace kamqm;

namespace {

constexpr double kTwoPi = 6.283185307179586;
const double kPhi = 0.5 * (1.0 + std::sqrt(5.0));

struct Outcome {
  bool pass = false;
  std::string detail;
  std::vector<double> print;  // every number the verdict depends on
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vec vec1(double x) { return Vec::Constant(1, x); }

// ---- 1: free motion, nu^hbar = nu --------------------------------------------

Outcome free_identity(int workers) {
  Potential v = builtin_potential("free");
  ClassicalMeasureOptions co;
  co.T = 10.0;
  co.dt = 1e-2;
  co.workers = workers;
  EmpiricalMeasure c = classical_measure(v, 0.9, 1.1, 20000, 7, co);
  const TestFunctionPanel panel = TestFunctionPanel::standard(1);
  Outcome o{true, "", {}};
  for (double hbar : {0.1, 0.05}) {
    EmpiricalMeasure q = quantum_measure(v, hbar, 0.9, 1.1, k_grid(v.lattice(), 256), workers);
    ComparisonReport r = weak_star_distance(q, c, panel, 1.0);
    const bool ok = r.discrepancy <= 2.0 * r.mc_error;
    o.pass &= ok;
    o.detail += fmt("hbar=%g disc=%.3e 2sigma=%.3e; ", hbar, r.discrepancy, 2.0 * r.mc_error);
    o.print.insert(o.print.end(), {r.discrepancy, r.mc_error, r.wasserstein, q.total_mass});
  }
  o.print.push_back(c.total_mass);
  return o;
}

// ---- 2, 3: quasimode residual scaling and spectral certificate --------------

struct CosineFamily {
  Potential v = builtin_potential("cosine");
  DiophantineParams params = DiophantineParams::defaults(1, 2.0);
  TorusFamily family{v, 1.8, 2.2, params};
};

const CosineFamily& cosine_family() {
  static const CosineFamily f;
  return f;
}

const std::vector<double> kResidualHbars = {0.1, 0.1 / std::sqrt(2.0), 0.05, 0.05 / std::sqrt(2.0), 0.025};

Outcome residual_scaling(int) {
  const auto& cf = cosine_family();
  const Vec k = vec1(0.3);
  const double P = action_d1(cf.v, 2.0);
  std::vector<double> res;
  Outcome o;
  for (double hbar : kResidualHbars) {
    const int label[1] = {static_cast<int>(std::lround(P / hbar - k[0]))};
    BandSpectrum spec = solve_bands_below(cf.v, hbar, k, 2.6);
    Quasimode qm = assemble_quasimode(cf.family, label, k, hbar, 3, spec.basis);
    res.push_back(qm.residual);
    o.detail += fmt("%.4g:%.2e ", hbar, qm.residual);
    o.print.insert(o.print.end(), {qm.energy, qm.residual});
  }
  const double slope = loglog_slope(kResidualHbars, res);
  o.pass = slope >= 4.5;
  o.detail = fmt("slope=%.3f (>= 4.5); ", slope) + o.detail;
  o.print.push_back(slope);
  return o;
}

Outcome spectral_certificate(int workers) {
  const auto& cf = cosine_family();
  const Vec k = vec1(0.3);
  const double alpha = default_alpha(1, cf.params.tau);
  std::size_t total = 0, spectral = 0, simple = 0, eq1 = 0, skipped = 0;
  Outcome o;
  for (double hbar : kResidualHbars) {
    AdmissibleSet set = admissible_momenta(k, hbar, alpha, cf.family);
    BandSpectrum spec = solve_bands_below(cf.v, hbar, k, 2.8);
    QuasimodeFamily fam = assemble_family(cf.family, set, 3, spec, workers);
    skipped += fam.skipped.size();
    for (const Quasimode& qm : fam.modes) {
      MatchReport m = residual_and_match(qm, spec);
      ++total;
      spectral += m.spectral_ok;
      if (m.simple) {
        ++simple;
        eq1 += m.eq1_ok;
      }
      o.print.insert(o.print.end(), {qm.energy, qm.residual, m.distance, m.aligned_distance});
    }
  }
  o.pass = total > 0 && spectral == total && eq1 == simple;
  o.detail = fmt("%zu quasimodes (%zu skipped): spectral %zu/%zu, Eq.1 on simple windows %zu/%zu", total, skipped,
                 spectral, total, eq1, simple);
  return o;
}

// ---- 4, 5: band velocities and symmetry -------------------------------------

Outcome group_velocity_check(int) {
  Potential v = builtin_potential("cosine");
  const double hbar = 1.0;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ku(-0.5, 0.5);
  std::uniform_int_distribution<int> nu(0, 9);
  const double h = 1e-4;
  auto energy = [&](double k, int n) { return solve_bands(v, hbar, vec1(k), 40.0, 10).eigenvalues[n]; };
  double worst = 0.0;
  Outcome o;
  int samples = 0;
  while (samples < 100) {
    const double k = ku(rng);
    const int n = nu(rng);
    BandSpectrum spec = solve_bands(v, hbar, vec1(k), 40.0, 10);
    if (band_is_degenerate(spec, n)) continue;
    // d E / d k = hbar * group_velocity; fourth-order central difference.
    const double fd = (8.0 * (energy(k + h, n) - energy(k - h, n)) - (energy(k + 2 * h, n) - energy(k - 2 * h, n))) /
                      (12.0 * h);
    const double hf = hbar * group_velocity(spec, n)[0];
    const double rel = std::abs(hf - fd) / std::abs(fd);
    worst = std::max(worst, rel);
    o.print.insert(o.print.end(), {hf, fd});
    ++samples;
  }
  BandSpectrum at0 = solve_bands(v, hbar, vec1(0.0), 40.0, 12);
  double worst0 = 0.0;
  int checked = 0;
  for (int n = 0; n < at0.n_bands() && checked < 5; ++n) {
    if (band_is_degenerate(at0, n)) continue;
    worst0 = std::max(worst0, std::abs(group_velocity(at0, n)[0]));
    ++checked;
  }
  o.pass = worst < 1e-6 && checked == 5 && worst0 < 1e-8;
  o.detail = fmt("HF vs FD max rel err %.2e over 100 samples (< 1e-6); |v(k=0)| max %.2e over %d bands (< 1e-8)", worst,
                 worst0, checked);
  o.print.insert(o.print.end(), {worst, worst0});
  return o;
}

Outcome band_symmetry(int) {
  Potential v = builtin_potential("cosine");
  double sym = 0.0, excess = -INFINITY;
  Outcome o;
  for (double hbar : {0.3, 0.1}) {
    for (const Vec& k : k_grid(v.lattice(), 64)) {
      BandSpectrum a = solve_bands(v, hbar, k, 40.0, 10);
      BandSpectrum b = solve_bands(v, hbar, -k, 40.0, 10);
      for (int n = 0; n < 10; ++n) {
        sym = std::max(sym, std::abs(a.eigenvalues[n] - b.eigenvalues[n]));
        const double slope = hbar * group_velocity(a, n).norm();
        const double bound = hbar * std::sqrt(2.0 * (a.eigenvalues[n] - v.v_min())) + 1e-8;
        excess = std::max(excess, slope - bound);
        o.print.insert(o.print.end(), {a.eigenvalues[n], slope});
      }
    }
  }
  o.pass = sym <= 1e-10 && excess <= 0.0;
  o.detail = fmt("max |E(k) - E(-k)| = %.2e (<= 1e-10); max(|grad E| - bound) = %.2e (<= 0)", sym, excess);
  return o;
}

// ---- 6: Weyl law --------------------------------------------------------------

Outcome weyl_law(int) {
  Potential v = builtin_potential("cosine");
  const std::vector<double> hbars = {0.1, 0.05, 0.025};
  const auto ks = k_grid(v.lattice(), 8);
  // The remainder at one k is a sawtooth in vol / (2 pi hbar); its sup over k
  // is the quantity bounded by C hbar. The k-mean is printed for reference.
  std::vector<double> sup, mean;
  Outcome o;
  for (double hbar : hbars) {
    double s = 0.0, m = 0.0;
    for (const Vec& k : ks) {
      WeylCount w = weyl_count(v, hbar, k, 1.8, 2.2);
      const double e = std::abs(kTwoPi * hbar * w.count - w.volume);
      s = std::max(s, e);
      m += e;
      o.print.push_back(w.count);
    }
    sup.push_back(s);
    mean.push_back(m / static_cast<double>(ks.size()));
    o.detail += fmt("%g:%.3e ", hbar, s);
  }
  const double slope = loglog_slope(hbars, sup);
  o.pass = std::abs(slope - 1.0) <= 0.5;
  o.detail = fmt("sup_k slope=%.3f (1 +- 0.5), k-mean slope=%.3f; sup_k |error|: ", slope, loglog_slope(hbars, mean)) +
             o.detail;
  o.print.push_back(slope);
  return o;
}

// ---- 7: KAM tori ----------------------------------------------------------------

Outcome kam_certification(int) {
  Outcome o{true, "", {}};
  // d = 1: graph invariance under the flow.
  Potential v = builtin_potential("cosine");
  KamTorus t = torus_d1(v, 2.0, 1, DiophantineParams::defaults(1, 2.0));
  PhasePoint x0{t.momentum(vec1(0.0)), vec1(0.0)};
  Trajectory tr = integrate_flow(v, x0, 1e3, 1e-4, 1000);
  double off = 0.0;
  for (const FlowSample& s : tr.samples) off = std::max(off, std::abs(s.x.p[0] - t.momentum(s.x.q)[0]));
  const bool ok1 = t.residual < 1e-8 && off < 1e-7;
  o.detail += fmt("d=1 residual %.1e, flow off graph %.1e; ", t.residual, off);
  o.print.insert(o.print.end(), {t.residual, off});

  // d = 2: golden frequency for V = 0.1 (cos q1 + cos q2).
  Potential v2 = builtin_potential("cosine2d", 0.1);
  TorusHamiltonian h = physical_hamiltonian(v2);
  Vec target(2);
  target << 1.0, kPhi;
  NewtonOptions opt;
  opt.params = DiophantineParams::defaults(2, 0.5 * target.squaredNorm());
  bool ok2 = false;
  try {
    KamTorus g = newton_torus_frequency(h, target, opt);
    const double check = torus_residual(h, g, 64);
    ok2 = g.residual < 1e-8 && check < 1e-8 && (g.omega - target).norm() < 1e-8;
    o.detail += fmt("d=2 residual %.1e (fine grid %.1e), %d iterations; ", g.residual, check, g.iterations);
    o.print.insert(o.print.end(), {g.residual, check, g.K});
  } catch (const Error& e) {
    o.detail += std::string("d=2 Newton failed: ") + e.what() + "; ";
  }

  // First-order Fourier check: S_po - eps sum sin(q_j)/P_j shrinks fourfold when eps halves.
  const TorusHamiltonian unit = physical_hamiltonian(builtin_potential("cosine2d", 1.0));
  auto remainder = [&](double eps) {
    TorusHamiltonian he = unit;
    he.eps = eps;
    NewtonOptions no = opt;
    no.derivatives = false;
    KamTorus s = newton_torus(he, target, no);
    double worst = 0.0;
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) {
        Vec q(2);
        q << kTwoPi * i / 16, kTwoPi * j / 16;
        const double first = eps * (std::sin(q[0]) / target[0] + std::sin(q[1]) / target[1]);
        worst = std::max(worst, std::abs(s.S_po.eval(q).real() - first));
      }
    }
    return worst;
  };
  double ratio = NAN;
  try {
    ratio = remainder(0.1) / remainder(0.05);
  } catch (const Error& e) {
    o.detail += std::string("first-order check failed: ") + e.what() + "; ";
  }
  const bool ok3 = std::abs(ratio - 4.0) <= 0.4;
  o.detail += fmt("first-order remainder ratio %.3f (4 +- 0.4)", ratio);
  o.print.push_back(ratio);
  o.pass = ok1 && ok2 && ok3;
  return o;
}

// ---- 8: quasimode velocity --------------------------------------------------------

Outcome quasimode_velocity_check(int) {
  const auto& cf = cosine_family();
  const Vec k = vec1(0.3);
  const double P = action_d1(cf.v, 2.0);
  const std::vector<double> hbars = {0.1, 0.05, 0.025};
  std::vector<double> err;
  Outcome o;
  for (double hbar : hbars) {
    const int label[1] = {static_cast<int>(std::lround(P / hbar - k[0]))};
    BandSpectrum spec = solve_bands_below(cf.v, hbar, k, 2.6);
    Quasimode qm = assemble_quasimode(cf.family, label, k, hbar, 3, spec.basis);
    QuasimodeVelocity qv = quasimode_velocity(qm);
    err.push_back((qv.expectation - qv.classical).norm());
    o.print.push_back(err.back());
    o.detail += fmt("%g:%.3e ", hbar, err.back());
  }
  bool ok = true;
  std::string ratios;
  for (std::size_t i = 0; i + 1 < err.size(); ++i) {
    const double r = err[i] / err[i + 1];
    ok &= std::abs(r - 2.0) <= 0.6;
    ratios += fmt("%.2f ", r);
  }
  o.pass = ok;
  o.detail = "halving ratios " + ratios + "(2 +- 0.6); error: " + o.detail;
  return o;
}

// ---- 9: counting asymptotics ------------------------------------------------------

Outcome counting(int workers) {
  const auto& cf = cosine_family();
  const double alpha = default_alpha(1, cf.params.tau);
  const double beta = beta_exponent(1, cf.params.tau, alpha);
  const double vol_k = cf.family.kam_volume(), vol_c = cf.family.complement_volume();
  const auto ks = k_grid(cf.v.lattice(), 32);
  auto mean_count = [&](double hbar) {
    double sum = 0.0;
    for (const Vec& k : ks) {
      AdmissibleSet set = admissible_momenta(k, hbar, alpha, cf.family);
      BandSpectrum spec = solve_bands_below(cf.v, hbar, k, 2.8);
      QuasimodeFamily fam = assemble_family(cf.family, set, 3, spec, workers);
      SeparationReport rep = separation_classify(fam.modes, spec, hbar, 3);
      sum += static_cast<double>(rep.simple.size());
    }
    return kTwoPi * hbar * sum / static_cast<double>(ks.size());
  };
  // The O(hbar^beta) constant is calibrated at a coarser hbar and then used
  // as a prediction at the two test values.
  const double h0 = 0.1;
  const double c0 = mean_count(h0);
  const double C = std::abs(c0 - vol_k) / std::pow(h0, beta);
  Outcome o{true, "", {c0, C}};
  o.detail = fmt("vol(K)=%.4f vol(K^c)=%.4f beta=%.3f C=%.3f; ", vol_k, vol_c, beta, C);
  for (double hbar : {0.05, 0.025}) {
    const double c = mean_count(hbar);
    const double delta = C * std::pow(hbar, beta);
    const bool ok = c >= vol_k - vol_c - delta && c <= vol_k + delta;
    o.pass &= ok;
    o.detail += fmt("hbar=%g count=%.4f in [%.4f, %.4f]; ", hbar, c, vol_k - vol_c - delta, vol_k + delta);
    o.print.push_back(c);
  }
  return o;
}

// ---- 10: high-energy trend --------------------------------------------------------

Outcome high_energy(int workers) {
  Potential v = builtin_potential("cosine");
  SweepOptions opt;
  opt.samples = 5000;
  opt.scale_samples = true;
  opt.classical.T = 100.0;
  opt.classical.dt = 2e-3;
  opt.k_grid = 32;
  opt.seed = 11;
  opt.workers = workers;
  opt.classical.workers = workers;
  SweepResult r = high_energy_sweep(v, {4.0, 16.0, 64.0}, {{0.1, 0.05}, {0.2, 0.1}, {0.4, 0.2}},
                                    TestFunctionPanel::standard(1), opt);
  Outcome o;
  o.pass = r.scaled_ratio < 5.0;
  o.detail = fmt("discrepancy*sqrt(E) max/min = %.3f (< 5); discrepancy:", r.scaled_ratio);
  for (std::size_t i = 0; i < r.energies.size(); ++i) o.detail += fmt(" E=%g:%.3e", r.energies[i], r.discrepancy[i]);
  for (const SweepCell& c : r.cells) o.print.insert(o.print.end(), {c.discrepancy, c.mc_error, c.wasserstein});
  o.print.push_back(r.scaled_ratio);
  return o;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kamqm acceptance suite"};
  std::vector<int> only;
  int rerun_workers = 3;
  app.add_option("criteria", only, "criteria to run (default: all)")->check(CLI::Range(1, 11));
  app.add_option("--rerun-workers", rerun_workers, "worker count for the determinism rerun")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  std::setvbuf(stdout, nullptr, _IOLBF, 0);

  using Fn = std::function<Outcome(int)>;
  const std::vector<std::pair<int, Fn>> all = {
      {1, free_identity},         {2, residual_scaling}, {3, spectral_certificate},
      {4, group_velocity_check},  {5, band_symmetry},    {6, weyl_law},
      {7, kam_certification},     {8, quasimode_velocity_check}, {9, counting},
      {10, high_energy}};
  const std::set<int> want(only.begin(), only.end());
  auto selected = [&](int id) { return want.empty() || want.count(id) > 0; };

  auto run = [](const Fn& f, int workers) {
    try {
      return f(workers);
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what(), {}};
    }
  };

  int failures = 0;
  std::map<int, std::vector<double>> prints;
  for (const auto& [id, f] : all) {
    if (!selected(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = run(f, 1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs);
    failures += !o.pass;
    prints[id] = o.print;
  }

  if (selected(11)) {
    std::vector<int> differing;
    for (const auto& [id, f] : all) {
      if (!prints.count(id)) continue;
      Outcome o = run(f, rerun_workers);
      if (!same_bits(prints[id], o.print) || prints[id].empty()) differing.push_back(id);
    }
    std::string detail = fmt("%zu criteria rerun with %d workers", prints.size(), rerun_workers);
    if (!differing.empty()) {
      detail += "; differing:";
      for (int id : differing) detail += " " + std::to_string(id);
    }
    const bool pass = !prints.empty() && differing.empty();
    std::printf("%s criterion 11: %s\n", pass ? "PASS" : "FAIL", detail.c_str());
    failures += !pass;
  }
  return failures == 0 ? 0 : 1;
}
