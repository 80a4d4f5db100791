#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "core/bloch.hpp"
#include "core/error.hpp"

using namespace kamqm;

namespace {

Vec vec1(double x) { return Vec::Constant(1, x); }

// H(k) for V = s cos q in the plane waves e^{inq}, |n| <= nmax, built
// without the library's basis or matrix code.
Vec mathieu_bands(double hbar, double k, double s, int nmax, int count) {
  const int size = 2 * nmax + 1;
  Mat H = Mat::Zero(size, size);
  for (int i = 0; i < size; ++i) {
    const double n = i - nmax;
    H(i, i) = 0.5 * hbar * hbar * (n + k) * (n + k);
    if (i + 1 < size) H(i, i + 1) = H(i + 1, i) = 0.5 * s;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().head(count);
}

}  // namespace

TEST_CASE("cosine bands match a dense high-cutoff diagonalization") {
  Potential v = builtin_potential("cosine");
  for (double hbar : {1.0, 0.3, 0.1}) {
    for (double k : {0.0, 0.17, 0.5}) {
      BandSpectrum spec = solve_bands(v, hbar, vec1(k), auto_cutoff(v, hbar, vec1(k), 3.0), 10);
      const Vec ref = mathieu_bands(hbar, k, 1.0, 400, 10);
      for (int n = 0; n < 10; ++n) {
        CHECK(spec.eigenvalues[n] == doctest::Approx(ref[n]).epsilon(1e-10));
        CHECK(spec.converged[static_cast<std::size_t>(n)]);
      }
    }
  }
}

TEST_CASE("free bands are shifted parabolas") {
  Potential v = builtin_potential("free");
  const double hbar = 0.2, k = 0.31;
  BandSpectrum spec = solve_bands(v, hbar, vec1(k), 20.0, 8);
  std::vector<double> exact;
  for (int n = -10; n <= 10; ++n) exact.push_back(0.5 * hbar * hbar * (n + k) * (n + k));
  std::sort(exact.begin(), exact.end());
  for (int n = 0; n < 8; ++n) CHECK(spec.eigenvalues[n] == doctest::Approx(exact[static_cast<std::size_t>(n)]).epsilon(1e-12));
  // Group velocity of the plane wave n is hbar (n + k).
  CHECK(std::abs(group_velocity(spec, 0)[0]) == doctest::Approx(hbar * k).epsilon(1e-12));
}

TEST_CASE("Hellmann-Feynman velocity against central differences") {
  Potential v = builtin_potential("cosine");
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> kd(-0.5, 0.5);
  std::uniform_int_distribution<int> nd(0, 11);
  const double hbar = 0.2, h = 1e-4, cutoff = 40.0;
  int tested = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const double k = kd(rng);
    const int n = nd(rng);
    BandSpectrum c = solve_bands(v, hbar, vec1(k), cutoff, 12);
    if (band_is_degenerate(c, n)) continue;
    const double ep = solve_bands(v, hbar, vec1(k + h), cutoff, 12).eigenvalues[n];
    const double em = solve_bands(v, hbar, vec1(k - h), cutoff, 12).eigenvalues[n];
    const double fd = (ep - em) / (2.0 * h) / hbar;
    const double hf = group_velocity(c, n)[0];
    CHECK(std::abs(hf - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3));
    ++tested;
  }
  CHECK(tested > 30);
}

TEST_CASE("k -> -k symmetry and the velocity bound") {
  Potential v = builtin_potential("cosine2d", 0.7);
  const double hbar = 0.3;
  for (const Vec& k : k_grid(v.lattice(), 4)) {
    BandSpectrum a = solve_bands(v, hbar, k, 14.0, 10);
    BandSpectrum b = solve_bands(v, hbar, -k, 14.0, 10);
    for (int n = 0; n < 10; ++n) {
      CHECK(a.eigenvalues[n] == doctest::Approx(b.eigenvalues[n]).epsilon(1e-10));
      const double bound = std::sqrt(2.0 * (a.eigenvalues[n] - v.v_min()));
      CHECK(group_velocity(a, n).norm() <= bound + 1e-8 / hbar);
    }
  }
}

TEST_CASE("degenerate free bands carry zero velocity") {
  Potential v = builtin_potential("free");
  BandSpectrum spec = solve_bands(v, 0.5, vec1(0.0), 12.0, 5);
  // E = 0 once, then pairs n = +-1, +-2.
  CHECK_FALSE(band_is_degenerate(spec, 0));
  CHECK(band_is_degenerate(spec, 1));
  CHECK(band_is_degenerate(spec, 2));
  CHECK(group_velocity(spec, 1).norm() == 0.0);
}

TEST_CASE("too small a cutoff is reported") {
  Potential v = builtin_potential("cosine");
  bool thrown = false;
  try {
    solve_bands(v, 0.1, vec1(0.2), 3.0, 2, true, true);
  } catch (const Error& e) {
    thrown = e.code() == ErrorCode::CutoffTooSmall;
  }
  CHECK(thrown);
  BandSpectrum loose = solve_bands(v, 0.1, vec1(0.2), 3.0, 2, true, false);
  CHECK_FALSE(loose.converged[0]);
}

TEST_CASE("bands below an energy reach past it") {
  Potential v = builtin_potential("cosine");
  BandSpectrum spec = solve_bands_below(v, 0.1, vec1(0.3), 2.0);
  CHECK(spec.eigenvalues[spec.n_bands() - 1] > 2.0);
  CHECK(spec.eigenvalues[spec.n_bands() - 2] <= 2.0);
}

TEST_CASE("shell volumes against quadrature") {
  Potential free1 = builtin_potential("free");
  CHECK(shell_volume(free1, 1.0, 2.0) == doctest::Approx(kTwoPi * 2.0 * (2.0 - std::sqrt(2.0))).epsilon(1e-9));
  Potential free2 = builtin_potential("free2d");
  CHECK(shell_volume(free2, 1.0, 2.0) == doctest::Approx(kTwoPi * kTwoPi * M_PI * 2.0).epsilon(1e-9));

  Potential v = builtin_potential("cosine");
  using boost::math::quadrature::gauss_kronrod;
  for (double E : {0.3, 2.0}) {
    auto width = [&](double q) { return 2.0 * std::sqrt(std::max(0.0, 2.0 * (E - std::cos(q)))); };
    const double ref = gauss_kronrod<double, 61>::integrate(width, 0.0, kTwoPi, 15, 1e-12);
    CHECK(sublevel_volume(v, E) == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("Weyl count is exact for the free particle") {
  Potential v = builtin_potential("free");
  const double hbar = 0.05, k = 0.27, a = 1.0, b = 1.5;
  int count = 0;
  for (int n = -200; n <= 200; ++n) {
    const double e = 0.5 * hbar * hbar * (n + k) * (n + k);
    if (e >= a && e <= b) ++count;
  }
  WeylCount w = weyl_count(v, hbar, vec1(k), a, b);
  CHECK(w.count == count);
  CHECK(std::abs(w.count - w.prediction) <= 2.0);
}

TEST_CASE("k-grid is closed under negation") {
  Lattice lat = Lattice::standard(2);
  const auto ks = k_grid(lat, 6);
  CHECK(ks.size() == 36);
  for (const Vec& k : ks) {
    const Vec m = lat.reduce_dual(-k);
    bool found = false;
    for (const Vec& o : ks) found = found || (lat.reduce_dual(o) - m).norm() < 1e-12;
    CHECK(found);
  }
}
