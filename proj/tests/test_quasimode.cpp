#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "core/error.hpp"
#include "core/quasimode.hpp"

using namespace kamqm;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

double sup(const std::vector<cplx>& x) {
  double m = 0.0;
  for (const cplx& c : x) m = std::max(m, std::abs(c));
  return m;
}

// Smooth random function on the grid: a few random Fourier modes.
std::vector<cplx> random_field(const TorusGrid& grid, const Lattice& lat, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const int d = grid.dimension;
  std::vector<std::pair<std::vector<int>, cplx>> modes;
  for (int i = 0; i < 6; ++i) {
    std::vector<int> n(static_cast<std::size_t>(d));
    for (int& x : n) x = static_cast<int>(std::uniform_int_distribution<int>(-3, 3)(rng));
    modes.emplace_back(n, cplx(g(rng), g(rng)));
  }
  std::vector<cplx> out(grid.size());
  int multi[2] = {0, 0};
  for (std::size_t f = 0; f < grid.size(); ++f) {
    grid.unflatten(f, multi);
    cplx acc(0.0, 0.0);
    for (const auto& [n, c] : modes) {
      double phase = 0.0;
      for (int j = 0; j < d; ++j) phase += n[static_cast<std::size_t>(j)] * kTwoPi * multi[j] / grid.n;
      acc += c * std::exp(cplx(0.0, phase));
    }
    out[f] = acc;
  }
  (void)lat;
  return out;
}

struct CosineSetup {
  Potential v = builtin_potential("cosine");
  TorusFamily family{v, 1.8, 2.2, DiophantineParams::defaults(1, 2.0)};
  Vec k = Vec::Constant(1, 0.3);

  int label(double hbar) const { return static_cast<int>(std::lround(action_d1(v, 2.0) / hbar - 0.3)); }
};

}  // namespace

TEST_CASE("leading amplitude is transported") {
  CosineSetup s;
  KamTorus t = s.family.torus_at(Vec::Constant(1, action_d1(s.v, 2.0)));
  TorusGrid grid{1, 64};
  LeadingAmplitude lead = leading_amplitude(t, s.v.lattice(), grid);
  std::vector<cplx> A0(lead.A0.begin(), lead.A0.end());
  CHECK(sup(apply_transport(t, s.v.lattice(), grid, A0)) < 1e-9);
  // In d = 1, A0^2 is proportional to 1/|p|.
  Vec q(1);
  for (std::size_t i = 0; i < grid.size(); i += 8) {
    q[0] = kTwoPi * static_cast<double>(i) / 64.0;
    const double p = t.momentum(q)[0];
    CHECK(lead.A0[i] * lead.A0[i] * p == doctest::Approx(lead.A0[0] * lead.A0[0] * t.momentum(Vec::Zero(1))[0]).epsilon(1e-8));
  }
}

TEST_CASE("transport equation for a random right-hand side") {
  SUBCASE("d = 1") {
    CosineSetup s;
    KamTorus t = s.family.torus_at(Vec::Constant(1, -action_d1(s.v, 2.1)));
    TorusGrid grid{1, 64};
    LeadingAmplitude lead = leading_amplitude(t, s.v.lattice(), grid);
    auto f = random_field(grid, s.v.lattice(), 3);
    for (cplx& x : f) x = x.real();  // real sources give a real E
    TransportResult r = transport_solve(t, s.v.lattice(), lead, f);
    const auto TA = apply_transport(t, s.v.lattice(), grid, r.A);
    double worst = 0.0;
    cplx fa(0.0, 0.0);
    double aa = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      worst = std::max(worst, std::abs(TA[i] - f[i] - r.E * lead.A0[i]));
      fa += f[i] * lead.A0[i];
      aa += lead.A0[i] * lead.A0[i];
    }
    CHECK(worst < 1e-8 * sup(f));
    CHECK(std::abs(r.E + (fa / aa).real()) < 1e-10 * sup(f));
  }
  SUBCASE("d = 2") {
    Potential v = builtin_potential("cosine2d", 0.1);
    NewtonOptions opt;
    opt.params = DiophantineParams::defaults(2, 1.0);
    KamTorus t = newton_torus(physical_hamiltonian(v), Vec((Vec(2) << 1.2, 0.74).finished()), opt);
    TorusGrid grid{2, 64};
    LeadingAmplitude lead = leading_amplitude(t, v.lattice(), grid);
    std::vector<cplx> A0(lead.A0.begin(), lead.A0.end());
    CHECK(sup(apply_transport(t, v.lattice(), grid, A0)) < 1e-9);
    auto f = random_field(grid, v.lattice(), 5);
    for (cplx& x : f) x = x.real();
    TransportResult r = transport_solve(t, v.lattice(), lead, f, 0.0, 5.0);
    const auto TA = apply_transport(t, v.lattice(), grid, r.A);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) worst = std::max(worst, std::abs(TA[i] - f[i] - r.E * lead.A0[i]));
    CHECK(worst < 1e-7 * sup(f));
  }
}

TEST_CASE("free plane waves are exact quasimodes") {
  Potential v = builtin_potential("free");
  TorusFamily family(v, 0.9, 1.1, DiophantineParams::defaults(1, 1.0));
  const Vec k = Vec::Constant(1, 0.25);
  const double hbar = 0.1;
  const int l = 14;  // P = 1.425, E = 1.015
  const int lab[1] = {l};
  BandSpectrum spec = solve_bands_below(v, hbar, k, 1.3);
  Quasimode qm = assemble_quasimode(family, lab, k, hbar, 3, spec.basis);
  CHECK(qm.energy == doctest::Approx(0.5 * hbar * hbar * (l + 0.25) * (l + 0.25)).epsilon(1e-12));
  CHECK(qm.residual < 1e-10);
  const int n[1] = {l};
  CHECK(std::abs(qm.coefficients[spec.basis.find(n)]) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("cosine quasimodes: residual order, truncation and phase") {
  CosineSetup s;
  double prev = 0.0;
  for (double hbar : {0.1, 0.05}) {
    const int lab[1] = {s.label(hbar)};
    BandSpectrum spec = solve_bands_below(s.v, hbar, s.k, 2.6);
    Quasimode qm = assemble_quasimode(s.family, lab, s.k, hbar, 3, spec.basis);
    CHECK(phase_periodicity_defect(qm, s.v.lattice()) < 1e-10);
    CHECK(qm.energies.size() == 5);
    CHECK(qm.energies[1] == 0.0);
    MatchReport m = residual_and_match(qm, spec);
    CHECK(m.spectral_ok);
    CHECK(m.simple);
    CHECK(m.eq1_ok);
    CHECK(m.overlap > 0.99);
    // Doubling the plane-wave cutoff leaves the residual essentially unchanged.
    PlaneWaveBasis wide = make_basis(s.v.lattice(), s.k, 2.0 * spec.basis.cutoff);
    Quasimode q2 = assemble_quasimode(s.family, lab, s.k, hbar, 3, wide);
    CHECK(std::abs(q2.residual - qm.residual) < 0.1 * qm.residual);
    if (prev > 0.0) CHECK(prev / qm.residual > 16.0);
    prev = qm.residual;
  }
}

TEST_CASE("admissible momenta against a direct scan") {
  CosineSetup s;
  const double hbar = 0.05, alpha = default_alpha(1, 3.0);
  AdmissibleSet set = admissible_momenta(s.k, hbar, alpha, s.family);
  const double lo = action_d1(s.v, 1.8), hi = action_d1(s.v, 2.2), reach = std::pow(hbar, alpha);
  std::vector<int> expect;
  for (int l = -1000; l <= 1000; ++l) {
    const double p = std::abs(hbar * (l + 0.3));
    const double dist = p < lo ? lo - p : (p > hi ? p - hi : 0.0);
    if (dist <= reach) expect.push_back(l);
  }
  REQUIRE(set.members.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(set.members[i][0] == expect[i]);
}

TEST_CASE("alpha and beta exponents") {
  CHECK(default_alpha(1, 3.0) == doctest::Approx(1.5));
  CHECK(beta_exponent(1, 3.0, 1.5) == doctest::Approx(0.25));
  CHECK(default_alpha(2, 5.0) == doctest::Approx(0.75 + 0.5));
  CHECK(code_of([] { default_alpha(2, 3.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("family matches are injective on the separated set") {
  CosineSetup s;
  const double hbar = 0.1;
  AdmissibleSet set = admissible_momenta(s.k, hbar, default_alpha(1, 3.0), s.family);
  BandSpectrum spec = solve_bands_below(s.v, hbar, s.k, 2.6);
  QuasimodeFamily fam = assemble_family(s.family, set, 3, spec);
  CHECK(fam.modes.size() + fam.skipped.size() == set.members.size());
  CHECK(fam.modes.size() >= 2);
  SeparationReport rep = separation_classify(fam.modes, spec, hbar, 3);
  CHECK(rep.injective);
  CHECK(rep.simple.size() <= rep.separated.size());
  for (const SeparationMatch& m : rep.matches) CHECK(m.bound_ok);
}

TEST_CASE("same workers, same family") {
  CosineSetup s;
  const double hbar = 0.1;
  AdmissibleSet set = admissible_momenta(s.k, hbar, default_alpha(1, 3.0), s.family);
  BandSpectrum spec = solve_bands_below(s.v, hbar, s.k, 2.6);
  QuasimodeFamily a = assemble_family(s.family, set, 2, spec, 1);
  QuasimodeFamily b = assemble_family(s.family, set, 2, spec, 3);
  REQUIRE(a.modes.size() == b.modes.size());
  for (std::size_t i = 0; i < a.modes.size(); ++i) {
    CHECK(a.modes[i].energy == b.modes[i].energy);
    CHECK(a.modes[i].residual == b.modes[i].residual);
  }
}
