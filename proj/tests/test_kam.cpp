#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>

#include "core/bloch.hpp"
#include "core/error.hpp"
#include "core/kam.hpp"

using namespace kamqm;

namespace {

const double kGolden = 0.5 * (std::sqrt(5.0) - 1.0);

double quad(const std::function<double(double)>& f) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, kTwoPi, 15, 1e-13);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

TorusHamiltonian cosine_pair(double eps) {
  TorusHamiltonian h{Lattice::standard(2), Mat::Identity(2, 2),
                     builtin_potential("cosine2d").series(), eps};
  return h;
}

}  // namespace

TEST_CASE("default Diophantine parameters") {
  DiophantineParams p = DiophantineParams::defaults(2, 16.0);
  CHECK(p.tau == 5.0);
  CHECK(p.gamma == doctest::Approx(0.125));
  CHECK(DiophantineParams::defaults(1, 4.0, 0.2).gamma == doctest::Approx(0.1));
  CHECK(code_of([] { DiophantineParams::defaults(1, 0.0); }) == ErrorCode::NonpositiveEnergy);
}

TEST_CASE("Diophantine margin against a brute scan") {
  DiophantineParams p;
  p.tau = 3.0;
  p.k_max = 12;
  for (const Vec& w : {Vec(Vec::Map(std::vector<double>{1.0, kGolden}.data(), 2)),
                       Vec(Vec::Map(std::vector<double>{0.3, -0.71}.data(), 2)),
                       Vec(Vec::Map(std::vector<double>{1.0, 0.5}.data(), 2))}) {
    double best = INFINITY;
    for (int a = -12; a <= 12; ++a) {
      for (int b = -12; b <= 12; ++b) {
        if (a == 0 && b == 0) continue;
        best = std::min(best, std::abs(a * w[0] + b * w[1]) * std::pow(std::hypot(a, b), 3.0));
      }
    }
    CHECK(diophantine_margin(w, p) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("rotational pendulum torus") {
  Potential v = builtin_potential("cosine");
  const DiophantineParams params = DiophantineParams::defaults(1, 2.0);
  for (double E : {1.5, 2.0, 6.0}) {
    for (int sign : {1, -1}) {
      KamTorus t = torus_d1(v, E, sign, params);
      const double mean_p = quad([&](double q) { return std::sqrt(2.0 * (E - std::cos(q))); }) / kTwoPi;
      const double period = quad([&](double q) { return 1.0 / std::sqrt(2.0 * (E - std::cos(q))); });
      CHECK(t.K == doctest::Approx(E).epsilon(1e-12));
      CHECK(t.P[0] == doctest::Approx(sign * mean_p).epsilon(1e-9));
      CHECK(action_d1(v, E) == doctest::Approx(mean_p).epsilon(1e-9));
      CHECK(t.omega[0] == doctest::Approx(sign * kTwoPi / period).epsilon(1e-8));
      CHECK(t.residual < 1e-10);
      for (double q : {0.0, 1.0, 2.5, 4.0}) {
        const double p = sign * std::sqrt(2.0 * (E - std::cos(q)));
        CHECK(t.momentum(Vec::Constant(1, q))[0] == doctest::Approx(p).epsilon(1e-9));
      }
      KamTorus back = torus_d1_from_action(v, t.P[0], params);
      CHECK(back.K == doctest::Approx(E).epsilon(1e-10));
    }
  }
  CHECK(code_of([&] { torus_d1(v, 0.5, 1, params); }) == ErrorCode::EnergyBelowSeparatrix);
  CHECK(separatrix_energy(v) > 1.0);
}

TEST_CASE("separable 2-d torus is the product of pendulum tori") {
  Potential v1 = builtin_potential("cosine");
  TorusHamiltonian h = cosine_pair(1.0);
  NewtonOptions opt;
  opt.cutoff = 24;
  opt.params = DiophantineParams::defaults(2, 4.0);
  Vec P(2);
  P << 2.4, 2.4 * kGolden + 1.0;
  KamTorus t = newton_torus(h, P, opt);
  const KamTorus a = torus_d1_from_action(v1, P[0], DiophantineParams::defaults(1, 4.0));
  const KamTorus b = torus_d1_from_action(v1, P[1], DiophantineParams::defaults(1, 4.0));
  CHECK(t.residual < 1e-8);
  CHECK(t.K == doctest::Approx(a.K + b.K).epsilon(1e-9));
  CHECK(t.omega[0] == doctest::Approx(a.omega[0]).epsilon(1e-7));
  CHECK(t.omega[1] == doctest::Approx(b.omega[0]).epsilon(1e-7));
  Vec q(2);
  q << 0.7, 3.9;
  CHECK(t.momentum(q)[0] == doctest::Approx(a.momentum(Vec::Constant(1, 0.7))[0]).epsilon(1e-8));
  CHECK(t.momentum(q)[1] == doctest::Approx(b.momentum(Vec::Constant(1, 3.9))[0]).epsilon(1e-8));
}

TEST_CASE("golden-frequency torus") {
  Potential v = builtin_potential("cosine2d", 0.7);
  TorusHamiltonian h = scaled_hamiltonian(v, 16.0);
  NewtonOptions opt;
  opt.params = DiophantineParams::defaults(2, 16.0);
  Vec target(2);
  target << 0.8, 0.8 * kGolden;
  KamTorus t = newton_torus_frequency(h, target, opt);
  CHECK(t.residual < 1e-8);
  CHECK((t.omega - target).norm() < 1e-8);
  CHECK(t.margin >= opt.params.gamma);
  CHECK(torus_residual(h, t, 48) < 1e-8);

  Vec resonant(2);
  resonant << 0.8, 0.4;
  CHECK(code_of([&] { newton_torus_frequency(h, resonant, opt); }) == ErrorCode::SmallDivisorBreakdown);
}

TEST_CASE("generating function agrees with first-order perturbation theory") {
  Vec P(2);
  P << 1.0, kGolden;
  NewtonOptions opt;
  opt.params.gamma = 1e-3;
  auto remainder = [&](double eps) {
    KamTorus t = newton_torus(cosine_pair(eps), P, opt);
    double worst = 0.0;
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 16; ++j) {
        Vec q(2);
        q << kTwoPi * i / 16, kTwoPi * j / 16;
        const double first = eps * (std::sin(q[0]) / P[0] + std::sin(q[1]) / P[1]);
        worst = std::max(worst, std::abs(t.S_po.eval(q).real() - first));
      }
    }
    return worst;
  };
  const double r1 = remainder(0.02), r2 = remainder(0.01);
  CHECK(r1 > 0.0);
  CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("scaled and physical frames describe the same torus") {
  Potential v = builtin_potential("cosine2d", 0.7);
  const double E = 9.0;
  NewtonOptions opt;
  opt.params = DiophantineParams::defaults(2, E);
  Vec J(2);
  J << 0.9, 0.9 * kGolden;
  KamTorus s = newton_torus(scaled_hamiltonian(v, E), J, opt);
  KamTorus p = scaled_to_physical(s, v.lattice(), E);
  CHECK(p.K == doctest::Approx(E * s.K).epsilon(1e-12));
  CHECK(torus_residual(physical_hamiltonian(v), p, 32) < 1e-7 * E);
  KamTorus back = physical_to_scaled(p, v.lattice(), E);
  CHECK((back.P - s.P).norm() < 1e-12);
  CHECK(back.K == doctest::Approx(s.K).epsilon(1e-12));
}

TEST_CASE("KAM volume fraction") {
  Potential v = builtin_potential("cosine");
  NewtonOptions opt;
  {
    VolumeFractionReport r = kam_volume_fraction(v, 1.8, 2.2, DiophantineParams::defaults(1, 2.0), 0, opt);
    CHECK(r.fraction == doctest::Approx(1.0).epsilon(1e-6));
  }
  {
    // Straddling the separatrix: at most the rotational share of the shell.
    const double a = 0.5, b = 1.5;
    VolumeFractionReport r = kam_volume_fraction(v, a, b, DiophantineParams::defaults(1, 1.0), 0, opt);
    const double rotational = (sublevel_volume(v, b) - sublevel_volume(v, 1.0)) / shell_volume(v, a, b);
    CHECK(r.fraction <= rotational + 1e-9);
    CHECK(r.fraction >= rotational - 0.1);
  }
  {
    Potential v2 = builtin_potential("cosine2d", 0.2);
    opt.derivatives = false;
    VolumeFractionReport r = kam_volume_fraction(v2, 15.0, 17.0, DiophantineParams::defaults(2, 16.0), 8, opt);
    CHECK(r.cells > 0);
    CHECK(r.converged <= r.cells);
    CHECK(r.accepted_actions.size() == r.diophantine);
    CHECK(r.fraction > 0.5);
    CHECK(r.fraction <= 1.0);
  }
}
