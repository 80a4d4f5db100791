#include "potential.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "error.hpp"

namespace kamqm {
namespace {

bool positive_half(std::span<const int> n) {
  for (int v : n) {
    if (v != 0) return v > 0;
  }
  return false;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

Potential::Potential(FourierSeries series, std::string name)
    : series_(std::move(series)), name_(std::move(name)) {
  if (!series_.is_hermitian(1e-12)) fail(ErrorCode::NonHermitian, "potential coefficients must satisfy c_{-n} = conj(c_n)");
  series_.set_real_valued(true);
  const int d = dimension();
  std::vector<int> zero(static_cast<std::size_t>(d), 0);
  mean_ = series_.coefficient(zero).real();
  std::vector<int> neg(static_cast<std::size_t>(d));
  std::vector<std::vector<int>> order;
  for (std::size_t t = 0; t < series_.size(); ++t) {
    auto n = series_.index(t);
    if (!positive_half(n)) continue;
    order.emplace_back(n.begin(), n.end());
  }
  std::sort(order.begin(), order.end());
  for (const auto& n : order) {
    for (int j = 0; j < d; ++j) neg[static_cast<std::size_t>(j)] = -n[static_cast<std::size_t>(j)];
    const cplx c = 0.5 * (series_.coefficient(n) + std::conj(series_.coefficient(neg)));
    if (c == cplx(0.0, 0.0)) continue;
    Term term{};
    for (int j = 0; j < d; ++j) {
      term.n[j] = n[static_cast<std::size_t>(j)];
      term.g_angle[j] = static_cast<double>(term.n[j]);
    }
    term.c = c;
    terms_.push_back(term);
    osc_bound_ += 2.0 * std::abs(c);
  }

  std::string canon = "d " + std::to_string(d) + " basis";
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) canon += " " + fmt17(lattice().basis()(i, j));
  canon += " mean " + fmt17(mean_);
  for (const auto& t : terms_) {
    canon += "\n";
    for (int j = 0; j < d; ++j) canon += std::to_string(t.n[j]) + " ";
    canon += fmt17(t.c.real()) + " " + fmt17(t.c.imag());
  }
  hash_ = fnv1a(canon);
  locate_extrema();
}

double Potential::value_and_gradient(const double* q, double* grad) const {
  const int d = dimension();
  const Mat& Li = lattice().L_inverse();
  double theta[2] = {0.0, 0.0};
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) theta[i] += Li(i, j) * q[j];
  double v = mean_;
  double gt[2] = {0.0, 0.0};
  for (const auto& t : terms_) {
    double phase = t.g_angle[0] * theta[0];
    if (d == 2) phase += t.g_angle[1] * theta[1];
    const double cs = std::cos(phase);
    const double sn = std::sin(phase);
    // c e^{i phase} = (a + ib)(cs + i sn)
    const double re = t.c.real() * cs - t.c.imag() * sn;
    const double im = t.c.real() * sn + t.c.imag() * cs;
    v += 2.0 * re;
    for (int j = 0; j < d; ++j) gt[j] -= 2.0 * im * t.g_angle[j];
  }
  // grad_q = L^{-T} grad_theta
  for (int i = 0; i < d; ++i) {
    grad[i] = 0.0;
    for (int j = 0; j < d; ++j) grad[i] += Li(j, i) * gt[j];
  }
  return v;
}

double Potential::value_and_gradient(const Vec& q, Vec& grad) const {
  grad.resize(dimension());
  return value_and_gradient(q.data(), grad.data());
}

double Potential::value(const Vec& q) const {
  double g[2];
  return value_and_gradient(q.data(), g);
}

Mat Potential::hessian(const Vec& q) const {
  const int d = dimension();
  Vec theta = lattice().to_angles(q);
  Mat h = Mat::Zero(d, d);
  for (const auto& t : terms_) {
    double phase = 0.0;
    for (int j = 0; j < d; ++j) phase += t.g_angle[j] * theta[j];
    const double re = t.c.real() * std::cos(phase) - t.c.imag() * std::sin(phase);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) h(a, b) -= 2.0 * re * t.g_angle[a] * t.g_angle[b];
  }
  const Mat& Li = lattice().L_inverse();
  return Li.transpose() * h * Li;
}

void Potential::locate_extrema() {
  if (terms_.empty()) {
    v_min_ = v_max_ = mean_;
    return;
  }
  const int d = dimension();
  const int m = series_.max_abs_index();
  const int n = d == 1 ? std::max(256, 16 * m) : std::max(64, 8 * m);
  TorusGrid grid{d, n};
  std::size_t imin = 0, imax = 0;
  double lo = INFINITY, hi = -INFINITY;
  int multi[2] = {0, 0};
  Vec q(d);
  Vec theta(d);
  for (std::size_t f = 0; f < grid.size(); ++f) {
    grid.unflatten(f, multi);
    for (int j = 0; j < d; ++j) theta[j] = grid.angle(multi[j]);
    q = lattice().from_angles(theta);
    const double v = value(q);
    if (v < lo) { lo = v; imin = f; }
    if (v > hi) { hi = v; imax = f; }
  }
  // Newton polish from the best grid points; a grid extremum of a smooth
  // function sits inside the basin of the true one at this resolution.
  auto polish = [&](std::size_t f, double sign) {
    grid.unflatten(f, multi);
    for (int j = 0; j < d; ++j) theta[j] = grid.angle(multi[j]);
    Vec x = lattice().from_angles(theta);
    double best = sign * value(x);
    Vec g(d);
    for (int it = 0; it < 50; ++it) {
      value_and_gradient(x, g);
      Mat h = hessian(x);
      Vec step = h.ldlt().solve(g);
      if (!step.allFinite()) break;
      Vec trial = x - step;
      const double vt = sign * value(trial);
      if (vt < best - 1e-300) {
        best = vt;
        x = trial;
      } else {
        break;
      }
      if (step.norm() < 1e-14 * (1.0 + x.norm())) break;
    }
    return sign * best;
  };
  v_min_ = std::min(lo, polish(imin, 1.0));
  v_max_ = std::max(hi, polish(imax, -1.0));
}

Potential Potential::scaled(double factor) const {
  return Potential(series_.scaled(cplx(factor, 0.0)), name_);
}

Potential builtin_potential(const std::string& name, double strength) {
  if (name == "free") {
    return Potential(FourierSeries(Lattice::standard(1), true), "free");
  }
  if (name == "free2d") {
    return Potential(FourierSeries(Lattice::standard(2), true), "free2d");
  }
  if (name == "cosine") {
    FourierSeries s(Lattice::standard(1), true);
    const int p[1] = {1}, m[1] = {-1};
    s.set(p, 0.5 * strength);
    s.set(m, 0.5 * strength);
    return Potential(std::move(s), "cosine");
  }
  if (name == "cosine2d") {
    FourierSeries s(Lattice::standard(2), true);
    const int idx[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& n : idx) s.set(n, 0.5 * strength);
    return Potential(std::move(s), "cosine2d");
  }
  fail(ErrorCode::InvalidArgument, "unknown built-in potential '" + name + "' (free, free2d, cosine, cosine2d)");
}

Potential parse_potential(std::istream& in, const std::string& name) {
  int d = 0;
  std::vector<double> basis;
  bool hermitian = true;
  int cutoff = 32;
  std::string line;
  int lineno = 0;
  auto bad = [&](const std::string& why) -> void {
    fail(ErrorCode::ParseError, name + ":" + std::to_string(lineno) + ": " + why);
  };
  auto next_data_line = [&](std::string& out) {
    while (std::getline(in, out)) {
      ++lineno;
      auto pos = out.find_first_not_of(" \t\r");
      if (pos == std::string::npos || out[pos] == '#') continue;
      return true;
    }
    return false;
  };
  while (next_data_line(line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dimension") {
      if (!(ls >> d)) bad("dimension needs an integer");
      if (d < 1 || d > 2) fail(ErrorCode::UnsupportedDimension, "dimension " + std::to_string(d));
    } else if (key == "basis") {
      double x;
      while (ls >> x) basis.push_back(x);
    } else if (key == "hermitian") {
      std::string v;
      ls >> v;
      if (v == "true" || v == "1" || v == "yes") hermitian = true;
      else if (v == "false" || v == "0" || v == "no") hermitian = false;
      else bad("hermitian must be true or false");
    } else if (key == "cutoff") {
      if (!(ls >> cutoff) || cutoff < 0) bad("cutoff needs a nonnegative integer");
    } else if (key == "coefficients" || key == "samples") {
      if (d == 0) bad("dimension must precede data");
      if (basis.size() != static_cast<std::size_t>(d * d)) bad("basis needs d*d entries");
      Mat B(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) B(i, j) = basis[static_cast<std::size_t>(i * d + j)];
      Lattice lat = Lattice::make(B);
      if (key == "coefficients") {
        FourierSeries s(lat, hermitian);
        while (next_data_line(line)) {
          std::istringstream cs(line);
          int idx[2] = {0, 0};
          double re = 0, im = 0;
          for (int j = 0; j < d; ++j)
            if (!(cs >> idx[j])) bad("expected " + std::to_string(d) + " integer indices");
          if (!(cs >> re >> im)) bad("expected 're im' after indices");
          std::string extra;
          if (cs >> extra) bad("trailing token '" + extra + "'");
          s.add({idx, static_cast<std::size_t>(d)}, cplx(re, im));
        }
        if (!hermitian) fail(ErrorCode::NonHermitian, "potentials must be real (hermitian true)");
        return Potential(std::move(s), name);
      }
      int n = 0;
      if (!(ls >> n) || n < 2) bad("samples needs a grid size >= 2");
      TorusGrid grid{d, n};
      std::vector<cplx> values;
      values.reserve(grid.size());
      double x;
      while (values.size() < grid.size() && next_data_line(line)) {
        std::istringstream vs(line);
        while (vs >> x) values.push_back(x);
      }
      if (values.size() != grid.size()) bad("expected " + std::to_string(grid.size()) + " samples");
      FourierSeries s = FourierSeries::from_samples(lat, values, grid, std::min(cutoff, (n - 1) / 2), 1e-15, true);
      return Potential(std::move(s), name);
    } else {
      bad("unknown key '" + key + "'");
    }
  }
  bad("missing coefficients or samples section");
  fail(ErrorCode::Internal, "unreachable");
}

Potential load_potential(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open potential file " + path);
  return parse_potential(in, path);
}

void write_potential(std::ostream& out, const Potential& v) {
  const int d = v.dimension();
  out << "# " << v.name() << "\n";
  out << "dimension " << d << "\nbasis";
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out << ' ' << fmt17(v.lattice().basis()(i, j));
  out << "\nhermitian true\ncoefficients\n";
  std::vector<std::pair<std::vector<int>, cplx>> rows;
  for (std::size_t t = 0; t < v.series().size(); ++t) {
    auto n = v.series().index(t);
    rows.emplace_back(std::vector<int>(n.begin(), n.end()), v.series().coefficient_at(t));
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [n, c] : rows) {
    for (int j : n) out << j << ' ';
    out << fmt17(c.real()) << ' ' << fmt17(c.imag()) << '\n';
  }
}

}  // namespace kamqm
