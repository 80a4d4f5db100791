#include "transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/successive_shortest_path_nonnegative_weights.hpp>

#include "error.hpp"
#include "parallel.hpp"

namespace kamqm {
namespace {

// sup |d/dx (1 - x^2)^3| = 6 x (1 - x^2)^2 at x^2 = 1/5.
const double kBumpSlope = 6.0 / std::sqrt(5.0) * 0.64;

Vec scaled_point(const EmpiricalMeasure& m, Eigen::Index i, double E) {
  Vec s = m.points.col(i);
  s[0] /= E;
  s.tail(m.dimension) /= std::sqrt(E);
  return s;
}

bool inside(const Vec& x, const Vec& lo, const Vec& hi) {
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

// Velocity marginal of the atoms inside the box, normalized to mass 1.
void restricted_marginal(const EmpiricalMeasure& m, double E, const Vec& lo, const Vec& hi, Mat& pts,
                         std::vector<double>& w) {
  std::vector<Eigen::Index> keep;
  double total = 0.0;
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m.size()); ++i) {
    if (m.weights[static_cast<std::size_t>(i)] > 0.0 && inside(scaled_point(m, i, E), lo, hi)) {
      keep.push_back(i);
      total += m.weights[static_cast<std::size_t>(i)];
    }
  }
  pts.resize(m.dimension, static_cast<Eigen::Index>(keep.size()));
  w.resize(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    pts.col(static_cast<Eigen::Index>(j)) = scaled_point(m, keep[j], E).tail(m.dimension);
    w[j] = m.weights[static_cast<std::size_t>(keep[j])] / total;
  }
}

// Merge atoms into square bins of edge h at their weighted centroids.
void coarsen(Mat& pts, std::vector<double>& w, double h) {
  std::map<std::vector<long>, std::pair<Vec, double>> bins;
  const auto m = pts.rows();
  for (Eigen::Index i = 0; i < pts.cols(); ++i) {
    std::vector<long> key(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) key[static_cast<std::size_t>(j)] = static_cast<long>(std::floor(pts(j, i) / h));
    auto [it, fresh] = bins.try_emplace(key, Vec::Zero(m), 0.0);
    it->second.first += w[static_cast<std::size_t>(i)] * pts.col(i);
    it->second.second += w[static_cast<std::size_t>(i)];
  }
  pts.resize(m, static_cast<Eigen::Index>(bins.size()));
  w.clear();
  Eigen::Index c = 0;
  for (const auto& [key, val] : bins) {
    pts.col(c++) = val.first / val.second;
    w.push_back(val.second);
  }
}

}  // namespace

double Bump::operator()(const Vec& s) const {
  double f = 1.0;
  for (Eigen::Index j = 0; j < center.size(); ++j) {
    const double x = (s[j] - center[j]) / half_width[j];
    if (std::abs(x) >= 1.0) return 0.0;
    const double u = 1.0 - x * x;
    f *= u * u * u;
  }
  return f;
}

double Bump::lipschitz() const {
  double s = 0.0;
  for (Eigen::Index j = 0; j < half_width.size(); ++j) s += std::pow(kBumpSlope / half_width[j], 2);
  return std::sqrt(s);
}

TestFunctionPanel TestFunctionPanel::standard(int dimension) {
  if (dimension != 1 && dimension != 2) fail(ErrorCode::UnsupportedDimension, "panel dimension must be 1 or 2");
  TestFunctionPanel p;
  p.dimension = dimension;
  const double ec[3] = {0.9, 1.0, 1.1};
  const double vc[3] = {-1.2, 0.0, 1.2};
  for (double e : ec) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < (dimension == 2 ? 3 : 1); ++j) {
        Bump b;
        b.center = Vec(dimension + 1);
        b.half_width = Vec(dimension + 1);
        b.center[0] = e;
        b.half_width[0] = 0.1;
        b.center[1] = vc[i];
        b.half_width[1] = 0.6;
        if (dimension == 2) {
          b.center[2] = vc[j];
          b.half_width[2] = 0.6;
        }
        p.functions.push_back(b);
      }
    }
  }
  return p;
}

double TestFunctionPanel::evaluate(std::size_t i, const Vec& point, double E) const {
  if (!(E > 0.0)) fail(ErrorCode::NonpositiveEnergy, "energy scale must be positive");
  Vec s = point;
  s[0] /= E;
  s.tail(dimension) /= std::sqrt(E);
  return std::pow(E, -0.5 * dimension) * functions.at(i)(s);
}

std::pair<Vec, Vec> TestFunctionPanel::support_box() const {
  Vec lo = Vec::Constant(dimension + 1, std::numeric_limits<double>::infinity());
  Vec hi = -lo;
  for (const Bump& b : functions) {
    lo = lo.cwiseMin(b.center - b.half_width);
    hi = hi.cwiseMax(b.center + b.half_width);
  }
  return {lo, hi};
}

EmpiricalMeasure quantum_measure(const Potential& v, double hbar, double a, double b, const std::vector<Vec>& ks,
                                 int workers) {
  const int d = v.dimension();
  if (!(hbar > 0.0)) fail(ErrorCode::InvalidArgument, "hbar must be positive");
  if (!(b > a)) fail(ErrorCode::InvalidArgument, "energy interval must satisfy a < b");
  if (ks.empty()) fail(ErrorCode::InvalidArgument, "empty k-grid");
  auto atoms = parallel_map(ks.size(), workers, [&](std::size_t i) {
    std::vector<Vec> out;
    if (b <= v.v_min()) return out;
    BandSpectrum spec = solve_bands_below(v, hbar, ks[i], b);
    for (int n = 0; n < spec.n_bands(); ++n) {
      const double e = spec.eigenvalues[n];
      if (e < a || e > b) continue;
      Vec atom(d + 1);
      atom[0] = e;
      atom.tail(d) = group_velocity(spec, n);
      out.push_back(atom);
    }
    return out;
  });
  EmpiricalMeasure m;
  m.dimension = d;
  const double w = std::pow(kTwoPi * hbar, d) / static_cast<double>(ks.size());
  for (const auto& list : atoms) {
    for (const Vec& x : list) m.add(w, x);
  }
  m.points.conservativeResize(d + 1, static_cast<Eigen::Index>(m.size()));
  return m;
}

double wasserstein1(const Mat& xa, const std::vector<double>& wa, const Mat& xb, const std::vector<double>& wb) {
  if (xa.rows() != xb.rows()) fail(ErrorCode::InvalidArgument, "point sets of different dimension");
  const std::size_t na = wa.size(), nb = wb.size();
  if (na == 0 || nb == 0) fail(ErrorCode::EmptyOverlap, "W1 of an empty point set");
  double sa = 0.0, sb = 0.0;
  for (double x : wa) sa += x;
  for (double x : wb) sb += x;
  if (xa.rows() == 1) {
    std::vector<std::pair<double, double>> ev;  // (position, signed mass)
    for (std::size_t i = 0; i < na; ++i) ev.emplace_back(xa(0, static_cast<Eigen::Index>(i)), wa[i] / sa);
    for (std::size_t j = 0; j < nb; ++j) ev.emplace_back(xb(0, static_cast<Eigen::Index>(j)), -wb[j] / sb);
    std::sort(ev.begin(), ev.end());
    double cdf = 0.0, w1 = 0.0;
    for (std::size_t i = 0; i + 1 < ev.size(); ++i) {
      cdf += ev[i].second;
      w1 += std::abs(cdf) * (ev[i + 1].first - ev[i].first);
    }
    return w1;
  }

  // Exact transportation problem as an integer min-cost flow: masses and
  // costs are quantized to ~2^40 units (relative error ~1e-12), the value is
  // then evaluated with the true costs.
  using namespace boost;
  using Traits = adjacency_list_traits<vecS, vecS, directedS>;
  using Graph = adjacency_list<
      vecS, vecS, directedS, no_property,
      property<edge_capacity_t, long long,
               property<edge_residual_capacity_t, long long,
                        property<edge_reverse_t, Traits::edge_descriptor, property<edge_weight_t, long long>>>>>;
  constexpr double kUnits = 1099511627776.0;  // 2^40
  std::vector<long long> qa(na), qb(nb);
  long long ta = 0, tb = 0;
  for (std::size_t i = 0; i < na; ++i) ta += qa[i] = std::llround(wa[i] / sa * kUnits);
  for (std::size_t j = 0; j < nb; ++j) tb += qb[j] = std::llround(wb[j] / sb * kUnits);
  // Put the rounding difference on the heaviest target.
  const auto jmax = static_cast<std::size_t>(std::max_element(qb.begin(), qb.end()) - qb.begin());
  qb[jmax] += ta - tb;
  if (qb[jmax] < 0) fail(ErrorCode::Internal, "W1 mass quantization failed");

  Mat cost(static_cast<Eigen::Index>(na), static_cast<Eigen::Index>(nb));
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (xa.col(static_cast<Eigen::Index>(i)) - xb.col(static_cast<Eigen::Index>(j))).norm();
    }
  }
  const double cmax = cost.maxCoeff();
  const double cscale = cmax > 0.0 ? kUnits / cmax : 1.0;

  const std::size_t source = na + nb, sink = na + nb + 1;
  Graph g(na + nb + 2);
  auto capacity = get(edge_capacity, g);
  auto reverse = get(edge_reverse, g);
  auto weight = get(edge_weight, g);
  auto residual = get(edge_residual_capacity, g);
  auto link = [&](std::size_t u, std::size_t v, long long cap, long long w) {
    const auto e = add_edge(u, v, g).first;
    const auto r = add_edge(v, u, g).first;
    capacity[e] = cap;
    capacity[r] = 0;
    weight[e] = w;
    weight[r] = -w;
    reverse[e] = r;
    reverse[r] = e;
    return e;
  };
  for (std::size_t i = 0; i < na; ++i) link(source, i, qa[i], 0);
  for (std::size_t j = 0; j < nb; ++j) link(na + j, sink, qb[j], 0);
  std::vector<Traits::edge_descriptor> pair_edges;
  pair_edges.reserve(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      const double c = cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      pair_edges.push_back(link(i, na + j, ta, std::llround(c * cscale)));
    }
  }
  successive_shortest_path_nonnegative_weights(g, source, sink);
  double total = 0.0;
  long long moved = 0;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      const auto e = pair_edges[i * nb + j];
      const long long f = capacity[e] - residual[e];
      moved += f;
      total += static_cast<double>(f) * cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  if (moved != ta) fail(ErrorCode::Internal, "W1 flow incomplete");
  return total / static_cast<double>(ta);
}

ComparisonReport weak_star_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                                    const TestFunctionPanel& panel, double E) {
  if (a.dimension != b.dimension || a.dimension != panel.dimension) {
    fail(ErrorCode::InvalidArgument, "measure and panel dimensions differ");
  }
  if (!(E > 0.0)) fail(ErrorCode::NonpositiveEnergy, "energy scale must be positive");
  const auto [lo, hi] = panel.support_box();
  ComparisonReport r;
  r.energy_scale = E;
  r.mass_a = a.total_mass;
  r.mass_b = b.total_mass;
  const std::size_t nf = panel.functions.size();
  auto integrate = [&](const EmpiricalMeasure& m, std::vector<double>& out, std::vector<double>& err) {
    out.assign(nf, 0.0);
    err.assign(nf, 0.0);
    std::vector<double> s1(nf, 0.0), s2(nf, 0.0);
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m.size()); ++i) {
      if (!inside(scaled_point(m, i, E), lo, hi)) continue;
      ++hits;
      const Vec x = m.points.col(i);
      for (std::size_t f = 0; f < nf; ++f) {
        const double y = panel.evaluate(f, x, E);
        out[f] += m.weights[static_cast<std::size_t>(i)] * y;
        s1[f] += y;
        s2[f] += y * y;
      }
    }
    if (m.mc_proposals > 0) {
      const double N = static_cast<double>(m.mc_proposals);
      for (std::size_t f = 0; f < nf; ++f) {
        err[f] = m.mc_box_volume * std::sqrt(std::max(0.0, s2[f] / N - (s1[f] / N) * (s1[f] / N)) / N);
      }
    }
    return hits;
  };
  if (integrate(a, r.integrals_a, r.mc_error_a) == 0 || integrate(b, r.integrals_b, r.mc_error_b) == 0) {
    fail(ErrorCode::EmptyOverlap, "a measure has no atoms inside the panel support");
  }
  r.differences.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    r.differences[f] = std::abs(r.integrals_a[f] - r.integrals_b[f]);
    r.discrepancy = std::max(r.discrepancy, r.differences[f]);
    r.mc_error = std::max(r.mc_error, std::hypot(r.mc_error_a[f], r.mc_error_b[f]));
  }

  Mat pa, pb;
  std::vector<double> wa, wb;
  restricted_marginal(a, E, lo, hi, pa, wa);
  restricted_marginal(b, E, lo, hi, pb, wb);
  if (a.dimension > 1) {
    double h = (hi - lo).tail(a.dimension).maxCoeff() / 256.0;
    while (wa.size() * wb.size() > 40000) {
      coarsen(pa, wa, h);
      coarsen(pb, wb, h);
      h *= 2.0;
      r.wasserstein_coarsened = true;
    }
  }
  r.wasserstein = wasserstein1(pa, wa, pb, wb);
  return r;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::InvalidArgument, "slope needs two or more points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) fail(ErrorCode::InvalidArgument, "log-log fit needs positive data");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

SweepResult high_energy_sweep(const Potential& v, const std::vector<double>& energies,
                              const std::vector<std::vector<double>>& hbars, const TestFunctionPanel& panel,
                              const SweepOptions& opt) {
  if (energies.empty() || hbars.size() != energies.size()) {
    fail(ErrorCode::InvalidArgument, "need one hbar list per energy");
  }
  if (!(opt.delta > 0.0 && opt.delta < 1.0)) fail(ErrorCode::InvalidArgument, "delta must lie in (0, 1)");
  for (std::size_t i = 1; i < energies.size(); ++i) {
    if (!(energies[i] > energies[i - 1])) fail(ErrorCode::InvalidArgument, "energies must increase");
  }
  if (!(energies[0] > 0.0)) fail(ErrorCode::NonpositiveEnergy, "sweep energies must be positive");
  for (const auto& hs : hbars) {
    if (hs.empty()) fail(ErrorCode::InvalidArgument, "every energy needs at least one hbar");
    for (double h : hs) {
      if (!(h > 0.0)) fail(ErrorCode::InvalidArgument, "hbar must be positive");
    }
  }
  SweepResult res;
  const std::vector<Vec> ks = k_grid(v.lattice(), opt.k_grid);
  ClassicalMeasureOptions copt = opt.classical;
  copt.workers = opt.workers;
  for (std::size_t e = 0; e < energies.size(); ++e) {
    const double E = energies[e];
    const double a = (1.0 - opt.delta) * E, b = (1.0 + opt.delta) * E;
    std::size_t n = opt.samples;
    if (opt.scale_samples) n = static_cast<std::size_t>(std::llround(static_cast<double>(n) * E / energies[0]));
    std::vector<double> hs = hbars[e];
    std::sort(hs.begin(), hs.end(), std::greater<>());
    EmpiricalMeasure classical;
    std::string classical_status;
    try {
      classical = classical_measure(v, a, b, n, opt.seed, copt);
    } catch (const Error& err) {
      classical_status = error_name(err.code());
    }
    double smallest = -1.0;
    for (double h : hs) {
      SweepCell c;
      c.energy = E;
      c.hbar = h;
      if (!classical_status.empty()) {
        c.status = classical_status;
      } else {
        try {
          EmpiricalMeasure q = quantum_measure(v, h, a, b, ks, opt.workers);
          ComparisonReport r = weak_star_distance(q, classical, panel, E);
          c.discrepancy = r.discrepancy;
          c.mc_error = r.mc_error;
          c.wasserstein = r.wasserstein;
          c.mass_q = q.total_mass;
          c.mass_c = classical.total_mass;
          c.unconverged_fraction = classical.unconverged_fraction;
          smallest = c.discrepancy;
        } catch (const Error& err) {
          c.status = error_name(err.code());
        }
      }
      res.cells.push_back(c);
    }
    if (smallest >= 0.0) {
      res.energies.push_back(E);
      res.discrepancy.push_back(smallest);
    }
  }
  // Free motion sits at the rounding floor; a fit would be meaningless.
  const bool floor = std::all_of(res.discrepancy.begin(), res.discrepancy.end(), [](double x) { return x < 1e-12; });
  if (res.energies.size() >= 2 && !v.is_constant() && !floor) {
    res.slope = loglog_slope(res.energies, res.discrepancy);
    res.fitted = true;
  }
  if (!res.energies.empty()) {
    double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
    for (std::size_t i = 0; i < res.energies.size(); ++i) {
      const double s = res.discrepancy[i] * std::sqrt(res.energies[i]);
      mn = std::min(mn, s);
      mx = std::max(mx, s);
    }
    res.scaled_ratio = mn > 0.0 ? mx / mn : std::numeric_limits<double>::infinity();
  }
  return res;
}

void write_sweep_table(std::ostream& out, const SweepResult& r) {
  out << "E hbar discrepancy mass_q mass_c unconverged_fraction mc_error wasserstein status\n";
  char buf[512];
  for (const SweepCell& c : r.cells) {
    std::snprintf(buf, sizeof buf, "%.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g %s\n", c.energy, c.hbar,
                  c.discrepancy, c.mass_q, c.mass_c, c.unconverged_fraction, c.mc_error, c.wasserstein,
                  c.status.c_str());
    out << buf;
  }
}

void write_sweep_plot(std::ostream& out, const SweepResult& r) {
  out << "log_E log_discrepancy scaled\n";
  char buf[256];
  for (std::size_t i = 0; i < r.energies.size(); ++i) {
    const double d = r.discrepancy[i];
    std::snprintf(buf, sizeof buf, "%.10g %.10g %.10g\n", std::log(r.energies[i]), d > 0.0 ? std::log(d) : -INFINITY,
                  d * std::sqrt(r.energies[i]));
    out << buf;
  }
}

}  // namespace kamqm
