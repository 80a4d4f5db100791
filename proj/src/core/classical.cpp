#include "classical.hpp"

#include <cmath>
#include <random>
#include <string>

#include "error.hpp"
#include "parallel.hpp"

namespace kamqm {
namespace {

struct State {
  double p[2] = {0.0, 0.0};
  double q[2] = {0.0, 0.0};
};

State to_state(const PhasePoint& x) {
  State s;
  for (Eigen::Index j = 0; j < x.p.size(); ++j) {
    s.p[j] = x.p[j];
    s.q[j] = x.q[j];
  }
  return s;
}

PhasePoint to_point(const State& s, int d) {
  PhasePoint x{Vec(d), Vec(d)};
  for (int j = 0; j < d; ++j) {
    x.p[j] = s.p[j];
    x.q[j] = s.q[j];
  }
  return x;
}

std::size_t step_count(double T, double dt) {
  if (!(dt > 0.0) || !(T > 0.0) || dt > T) fail(ErrorCode::InvalidArgument, "need 0 < dt <= T");
  return static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
}

double drift_bound(const Potential& v, double e0) {
  return std::max(1e-4 * (e0 - v.v_min()), 1e-13 * std::max(1.0, std::abs(e0)));
}

// Leapfrog core. `on_step(i, state)` is called after every full step; the
// return value is the maximum energy deviation.
template <class OnStep>
double leapfrog(const Potential& v, State& s, std::size_t n_steps, double h, OnStep&& on_step) {
  const int d = v.dimension();
  double g[2];
  double V = v.value_and_gradient(s.q, g);
  double kin = 0.0;
  for (int j = 0; j < d; ++j) kin += s.p[j] * s.p[j];
  const double e0 = 0.5 * kin + V;
  double drift = 0.0;
  const double half = 0.5 * h;
  for (std::size_t i = 0; i < n_steps; ++i) {
    for (int j = 0; j < d; ++j) {
      s.p[j] -= half * g[j];
      s.q[j] += h * s.p[j];
    }
    V = v.value_and_gradient(s.q, g);
    kin = 0.0;
    for (int j = 0; j < d; ++j) {
      s.p[j] -= half * g[j];
      kin += s.p[j] * s.p[j];
    }
    drift = std::max(drift, std::abs(0.5 * kin + V - e0));
    on_step(i + 1, s);
  }
  return drift;
}

}  // namespace

double hamiltonian(const Potential& v, const PhasePoint& x) { return 0.5 * x.p.squaredNorm() + v.value(x.q); }

void EmpiricalMeasure::add(double w, const Vec& point) {
  if (point.size() != dimension + 1) fail(ErrorCode::InvalidArgument, "atom has wrong dimension");
  const auto n = static_cast<Eigen::Index>(weights.size());
  if (points.cols() <= n) points.conservativeResize(dimension + 1, std::max<Eigen::Index>(16, 2 * n));
  points.col(n) = point;
  weights.push_back(w);
  total_mass += w;
}

Trajectory integrate_flow(const Potential& v, const PhasePoint& x0, double T, double dt, int record_every) {
  const int d = v.dimension();
  if (x0.p.size() != d || x0.q.size() != d) fail(ErrorCode::InvalidArgument, "phase point has wrong dimension");
  const std::size_t n = step_count(T, dt);
  const double h = T / static_cast<double>(n);
  Trajectory traj;
  traj.dt = h;
  traj.samples.push_back({0.0, x0});
  State s = to_state(x0);
  traj.energy_drift = leapfrog(v, s, n, h, [&](std::size_t i, const State& st) {
    if ((record_every > 0 && i % static_cast<std::size_t>(record_every) == 0) || i == n) {
      traj.samples.push_back({i == n ? T : static_cast<double>(i) * h, to_point(st, d)});
    }
  });
  const double bound = drift_bound(v, hamiltonian(v, x0));
  if (traj.energy_drift > bound) {
    fail(ErrorCode::StepTooLarge, "energy drift " + std::to_string(traj.energy_drift) + " exceeds " +
                                      std::to_string(bound) + " at dt " + std::to_string(h));
  }
  return traj;
}

VelocityEstimate asymptotic_velocity(const Potential& v, const PhasePoint& x0, double T, double dt,
                                     double rel_tol) {
  const int d = v.dimension();
  const double e0 = hamiltonian(v, x0);
  const double bound = drift_bound(v, e0);
  double h_req = dt;
  for (int attempt = 0; attempt <= 6; ++attempt, h_req *= 0.5) {
    std::size_t n = step_count(T, h_req);
    n += n % 2;  // the midpoint T/2 must be a step boundary
    const double h = T / static_cast<double>(n);
    State s = to_state(x0);
    State mid;
    const double drift = leapfrog(v, s, n, h, [&](std::size_t i, const State& st) {
      if (2 * i == n) mid = st;
    });
    if (drift > bound) continue;
    VelocityEstimate est;
    est.value = Vec(d);
    Vec late(d);
    for (int j = 0; j < d; ++j) {
      est.value[j] = (s.q[j] - x0.q[j]) / T;
      late[j] = (s.q[j] - mid.q[j]) / (0.5 * T);
    }
    est.window_T = T;
    est.uncertainty = (est.value - late).norm();
    est.dt_used = h;
    est.energy_drift = drift;
    const double speed = std::sqrt(2.0 * std::max(e0 - v.v_min(), 0.0));
    est.converged = est.uncertainty < rel_tol * std::max(speed, 1e-300) || est.uncertainty == 0.0;
    return est;
  }
  fail(ErrorCode::StepTooLarge, "energy drift bound not met after halving dt six times");
}

LiouvilleSample sample_liouville(const Potential& v, double a, double b, std::size_t n_samples,
                                 std::uint64_t seed) {
  const int d = v.dimension();
  if (n_samples < 1) fail(ErrorCode::InvalidArgument, "n_samples must be >= 1");
  if (!(b > v.v_min()) || !(b >= a)) fail(ErrorCode::EmptyShell, "interval lies below V_min");
  const double R = std::sqrt(2.0 * (b - v.v_min()));
  LiouvilleSample out;
  out.box_volume = v.lattice().cell_volume() * (d == 1 ? 2.0 * R : 0.5 * kTwoPi * R * R);
  std::mt19937_64 rng(seed);
  Vec u(d);
  PhasePoint x{Vec(d), Vec(d)};
  while (out.points.size() < n_samples) {
    if (out.points.empty() && out.proposals >= 1000000) {
      fail(ErrorCode::EmptyShell, "no acceptance in 10^6 proposals");
    }
    ++out.proposals;
    for (int j = 0; j < d; ++j) u[j] = unit_uniform(rng());
    x.q = v.lattice().basis() * u;
    if (d == 1) {
      x.p[0] = R * (2.0 * unit_uniform(rng()) - 1.0);
    } else {
      const double r = R * std::sqrt(unit_uniform(rng()));
      const double phi = kTwoPi * unit_uniform(rng());
      x.p[0] = r * std::cos(phi);
      x.p[1] = r * std::sin(phi);
    }
    const double e = hamiltonian(v, x);
    if (e >= a && e <= b) out.points.push_back(x);
  }
  const double acc = static_cast<double>(out.points.size()) / static_cast<double>(out.proposals);
  out.volume = out.box_volume * acc;
  out.volume_error = out.box_volume * std::sqrt(acc * (1.0 - acc) / static_cast<double>(out.proposals));
  return out;
}

EmpiricalMeasure classical_measure(const Potential& v, double a, double b, std::size_t n_samples,
                                   std::uint64_t seed, const ClassicalMeasureOptions& opt) {
  const int d = v.dimension();
  LiouvilleSample ls = sample_liouville(v, a, b, n_samples, seed);
  auto est = parallel_map(ls.points.size(), opt.workers, [&](std::size_t i) {
    return asymptotic_velocity(v, ls.points[i], opt.T, opt.dt, opt.rel_tol);
  });
  EmpiricalMeasure m;
  m.dimension = d;
  m.points.resize(d + 1, static_cast<Eigen::Index>(ls.points.size()));
  const double w = ls.volume / static_cast<double>(ls.points.size());
  std::size_t unconverged = 0;
  Vec atom(d + 1);
  for (std::size_t i = 0; i < ls.points.size(); ++i) {
    atom[0] = hamiltonian(v, ls.points[i]);
    if (est[i].converged) {
      atom.tail(d) = est[i].value;
    } else {
      atom.tail(d).setZero();
      ++unconverged;
    }
    m.add(w, atom);
  }
  m.points.conservativeResize(d + 1, static_cast<Eigen::Index>(m.size()));
  m.unconverged_fraction = static_cast<double>(unconverged) / static_cast<double>(ls.points.size());
  m.mc_box_volume = ls.box_volume;
  m.mc_proposals = ls.proposals;
  return m;
}

}  // namespace kamqm
