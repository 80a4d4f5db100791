#include <doctest.h>

#include <cmath>
#include <sstream>

#include "core/error.hpp"
#include "core/fft.hpp"
#include "core/fourier.hpp"
#include "core/potential.hpp"

using namespace kamqm;

namespace {

Mat hexagonal() {
  Mat B(2, 2);
  B << 1.0, 0.5, 0.0, std::sqrt(3.0) / 2.0;
  return B;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

}  // namespace

TEST_CASE("one-dimensional lattice of period 2 pi") {
  Mat B(1, 1);
  B << kTwoPi;
  Lattice lat = Lattice::make(B);
  CHECK(lat.dual_basis()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(lat.M()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(lat.cell_volume() == doctest::Approx(kTwoPi));
}

TEST_CASE("square lattice is its own rescaling") {
  Lattice lat = Lattice::make(kTwoPi * Mat::Identity(2, 2));
  CHECK((lat.dual_basis() - Mat::Identity(2, 2)).norm() < 1e-14);
  CHECK((lat.M() - Mat::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("hexagonal dual basis against the pairing equations") {
  const Mat B = hexagonal();
  Lattice lat = Lattice::make(B);
  // <l_i, l*_j> = 2 pi delta_ij is D^T B = 2 pi I; solve the 2x2 system by
  // Cramer's rule.
  const double a = B(0, 0), b = B(0, 1), c = B(1, 0), d = B(1, 1);
  const double det = a * d - b * c;
  Mat inv(2, 2);
  inv << d / det, -b / det, -c / det, a / det;
  const Mat D = kTwoPi * inv.transpose();
  CHECK((lat.dual_basis() - D).norm() < 1e-12);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      CHECK(B.col(i).dot(lat.dual_basis().col(j)) == doctest::Approx(i == j ? kTwoPi : 0.0).epsilon(1e-12));
    }
  }
  // M = (L^T L)^{-1} is symmetric positive definite.
  const Mat& M = lat.M();
  CHECK(std::abs(M(0, 1) - M(1, 0)) < 1e-14);
  CHECK(M(0, 0) > 0.0);
  CHECK(M.determinant() > 0.0);
}

TEST_CASE("lattice construction errors") {
  Mat S(2, 2);
  S << 1.0, 2.0, 2.0, 4.0;
  CHECK(code_of([&] { Lattice::make(S); }) == ErrorCode::SingularBasis);
  CHECK(code_of([&] { Lattice::make(Mat::Identity(3, 3)); }) == ErrorCode::UnsupportedDimension);
}

TEST_CASE("reduction modulo the lattice is idempotent") {
  Lattice lat = Lattice::make(hexagonal());
  Vec q(2);
  q << 3.7, -2.2;
  const Vec r = lat.reduce(q);
  CHECK((lat.reduce(r) - r).norm() < 1e-14);
  CHECK((lat.reduce(q + 3.0 * lat.basis().col(0) - lat.basis().col(1)) - r).norm() < 1e-12);
  // The representative lies in the half-open cell.
  const Vec frac = lat.L_inverse() * r / kTwoPi;
  CHECK(frac.minCoeff() >= 0.0);
  CHECK(frac.maxCoeff() < 1.0);
}

TEST_CASE("ballistic rescaling preserves the Hamiltonian") {
  Lattice lat = Lattice::make(hexagonal());
  FourierSeries s(lat, true);
  const int n1[2] = {1, 0}, m1[2] = {-1, 0}, n2[2] = {1, 1}, m2[2] = {-1, -1};
  s.set(n1, cplx(0.3, 0.1));
  s.set(m1, cplx(0.3, -0.1));
  s.set(n2, cplx(-0.2, 0.0));
  s.set(m2, cplx(-0.2, 0.0));
  Potential v(s);
  PhasePoint x{Vec(2), Vec(2)};
  x.p << 1.3, -0.4;
  x.q << 0.8, 2.9;
  for (double E : {0.5, 3.0, 40.0}) {
    auto [J, phi] = ballistic_rescale(x, E, lat);
    // E * (1/2 <J, M J> + V-hat(phi) / E) against 1/2 |p|^2 + V(q).
    const double scaled = E * (0.5 * J.dot(lat.M() * J)) + v.series().eval_angles({phi.data(), 2}).real();
    const double H = 0.5 * x.p.squaredNorm() + v.value(x.q);
    CHECK(scaled == doctest::Approx(H).epsilon(1e-10));
    CHECK(phi.minCoeff() >= 0.0);
    CHECK(phi.maxCoeff() < kTwoPi);
  }
  CHECK(code_of([&] { ballistic_rescale(x, 0.0, lat); }) == ErrorCode::NonpositiveEnergy);
}

TEST_CASE("Fourier series evaluation by direct summation") {
  Lattice lat = Lattice::make(hexagonal());
  FourierSeries s(lat);
  const int a[2] = {2, -1}, b[2] = {0, 3};
  s.set(a, cplx(0.7, -0.2));
  s.set(b, cplx(-0.1, 0.4));
  Vec q(2);
  q << -1.1, 0.35;
  cplx direct = 0.0;
  for (auto [n, c] : {std::pair{a, cplx(0.7, -0.2)}, std::pair{b, cplx(-0.1, 0.4)}}) {
    const Vec g = n[0] * lat.dual_basis().col(0) + n[1] * lat.dual_basis().col(1);
    direct += c * std::exp(cplx(0.0, g.dot(q)));
  }
  CHECK(std::abs(s.eval(q) - direct) < 1e-13);
  CHECK_FALSE(s.is_hermitian());
  FourierSeries constant(lat, true);
  const int zero[2] = {0, 0};
  constant.set(zero, 2.5);
  CHECK(constant.cutoff() == 0.0);
  CHECK(constant.eval(q).real() == doctest::Approx(2.5));
}

TEST_CASE("FFT coefficients of a cosine") {
  TorusGrid g{1, 16};
  std::vector<cplx> f(g.size());
  for (int i = 0; i < g.n; ++i) f[static_cast<std::size_t>(i)] = std::cos(3.0 * g.angle(i));
  fft_forward(f, g);
  CHECK(std::abs(f[static_cast<std::size_t>(fft_slot(3, 16))] - 0.5) < 1e-15);
  CHECK(std::abs(f[static_cast<std::size_t>(fft_slot(-3, 16))] - 0.5) < 1e-15);
  CHECK(std::abs(f[0]) < 1e-15);
}

TEST_CASE("potential file round trip and Hermitian check") {
  Potential v = builtin_potential("cosine2d", 0.4);
  std::stringstream buf;
  write_potential(buf, v);
  Potential w = parse_potential(buf);
  CHECK(w.hash() == v.hash());
  Vec q(2);
  q << 0.3, 1.9;
  CHECK(w.value(q) == doctest::Approx(v.value(q)).epsilon(1e-14));

  std::istringstream bad("dimension 1\nbasis 6.283185307179586\nhermitian true\ncoefficients\n1 0.5 0\n-1 0.3 0\n");
  CHECK(code_of([&] { parse_potential(bad); }) == ErrorCode::NonHermitian);
  std::istringstream garbage("dimension 1\nbasis oops\n");
  CHECK(code_of([&] { parse_potential(garbage); }) == ErrorCode::ParseError);
}

TEST_CASE("sampled potential file") {
  std::ostringstream text;
  text.precision(17);
  text << "dimension 1\nbasis 6.283185307179586\ncutoff 4\nsamples 32\n";
  for (int i = 0; i < 32; ++i) text << std::cos(kTwoPi * i / 32.0) << '\n';
  std::istringstream in(text.str());
  Potential v = parse_potential(in);
  CHECK(v.v_min() == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(v.v_max() == doctest::Approx(1.0).epsilon(1e-9));
}
