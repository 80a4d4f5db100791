#include "kamqm.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "core/bloch.hpp"
#include "core/classical.hpp"
#include "core/error.hpp"
#include "core/kam.hpp"
#include "core/quasimode.hpp"
#include "core/transport.hpp"

using namespace kamqm;

struct kamqm_potential {
  Potential v;
};

struct kamqm_bands {
  BandSpectrum spec;
  Mat velocities;  // d x n_bands, zero at degeneracies
};

struct kamqm_measure {
  EmpiricalMeasure m;
};

struct kamqm_family {
  TorusFamily family;
};

struct kamqm_torus {
  KamTorus t;
};

struct kamqm_quasimodes {
  std::size_t admissible = 0;
  std::vector<kamqm_quasimode_record> records;
  std::vector<std::vector<int>> skipped;
  std::vector<std::string> reasons;
};

struct kamqm_sweep {
  SweepResult r;
};

namespace {

thread_local std::string last_error;

int record(ErrorCode code, const std::string& msg) {
  last_error = msg;
  return static_cast<int>(code);
}

// Runs fn, mapping exceptions to status codes.
template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return KAMQM_OK;
  } catch (const Error& e) {
    return record(e.code(), e.what());
  } catch (const std::bad_alloc&) {
    return record(ErrorCode::Internal, "out of memory");
  } catch (const std::exception& e) {
    return record(ErrorCode::Internal, e.what());
  }
}

#define KAMQM_REQUIRE(cond, what)                                             \
  do {                                                                        \
    if (!(cond)) return record(ErrorCode::InvalidArgument, what);             \
  } while (0)

Vec to_vec(const double* x, int d) {
  Vec out(d);
  for (int j = 0; j < d; ++j) out[j] = x[j];
  return out;
}

DiophantineParams diophantine_from(const kamqm_kam_options& o, int d, double energy) {
  DiophantineParams p = DiophantineParams::defaults(d, energy, o.c);
  if (o.gamma > 0.0) p.gamma = o.gamma;
  if (o.tau > 0.0) p.tau = o.tau;
  if (o.k_max > 0) p.k_max = o.k_max;
  return p;
}

}  // namespace

extern "C" {

const char* kamqm_version(void) { return KAMQM_VERSION; }

const char* kamqm_status_name(int status) {
  if (status < 0 || status > KAMQM_INTERNAL) return "Unknown";
  return error_name(static_cast<ErrorCode>(status));
}

const char* kamqm_last_error(void) { return last_error.c_str(); }

// ---- potentials

int kamqm_potential_builtin(const char* name, double strength, kamqm_potential** out) {
  KAMQM_REQUIRE(name && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new kamqm_potential{builtin_potential(name, strength)}; });
}

int kamqm_potential_load(const char* path, kamqm_potential** out) {
  KAMQM_REQUIRE(path && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new kamqm_potential{load_potential(path)}; });
}

int kamqm_potential_parse(const char* text, kamqm_potential** out) {
  KAMQM_REQUIRE(text && out, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::istringstream in(text);
    *out = new kamqm_potential{parse_potential(in, "text")};
  });
}

void kamqm_potential_free(kamqm_potential* v) { delete v; }

int kamqm_potential_dimension(const kamqm_potential* v) { return v ? v->v.dimension() : 0; }
uint64_t kamqm_potential_hash(const kamqm_potential* v) { return v ? v->v.hash() : 0; }
const char* kamqm_potential_name(const kamqm_potential* v) { return v ? v->v.name().c_str() : ""; }

int kamqm_potential_range(const kamqm_potential* v, double* v_min, double* v_max) {
  KAMQM_REQUIRE(v, "null potential");
  if (v_min) *v_min = v->v.v_min();
  if (v_max) *v_max = v->v.v_max();
  return KAMQM_OK;
}

int kamqm_potential_value(const kamqm_potential* v, const double* q, double* value) {
  KAMQM_REQUIRE(v && q && value, "null argument");
  return guarded([&] { *value = v->v.value(to_vec(q, v->v.dimension())); });
}

int kamqm_k_grid(const kamqm_potential* v, int n, double* k, size_t capacity) {
  KAMQM_REQUIRE(v && k, "null argument");
  KAMQM_REQUIRE(n > 0, "k-grid size must be positive");
  return guarded([&] {
    const int d = v->v.dimension();
    const auto ks = k_grid(v->v.lattice(), n, true);
    if (ks.size() * static_cast<std::size_t>(d) > capacity) fail(ErrorCode::InvalidArgument, "k buffer too small");
    for (std::size_t i = 0; i < ks.size(); ++i) {
      for (int j = 0; j < d; ++j) k[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] = ks[i][j];
    }
  });
}

int kamqm_shell_volume(const kamqm_potential* v, double a, double b, double* volume) {
  KAMQM_REQUIRE(v && volume, "null argument");
  return guarded([&] { *volume = shell_volume(v->v, a, b); });
}

// ---- bands

namespace {

kamqm_bands* wrap_bands(BandSpectrum spec) {
  auto* out = new kamqm_bands{std::move(spec), {}};
  const int d = out->spec.basis.dimension;
  out->velocities.resize(d, out->spec.n_bands());
  for (int n = 0; n < out->spec.n_bands(); ++n) out->velocities.col(n) = group_velocity(out->spec, n);
  return out;
}

}  // namespace

int kamqm_bands_solve(const kamqm_potential* v, double hbar, const double* k, double cutoff, int n_bands,
                      kamqm_bands** out) {
  KAMQM_REQUIRE(v && k && out, "null argument");
  *out = nullptr;
  KAMQM_REQUIRE(n_bands > 0, "band count must be positive");
  return guarded([&] {
    const Vec kv = to_vec(k, v->v.dimension());
    if (cutoff > 0.0) {
      *out = wrap_bands(solve_bands(v->v, hbar, kv, cutoff, n_bands, true, true));
      return;
    }
    // Automatic: room for twice the bands, then grow until converged.
    double c = 8.0;
    while (make_basis(v->v.lattice(), kv, c).size() < 2 * static_cast<std::size_t>(n_bands) + 16) c *= 1.25;
    for (int attempt = 0;; ++attempt) {
      try {
        *out = wrap_bands(solve_bands(v->v, hbar, kv, c, n_bands, true, true));
        return;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::CutoffTooSmall || attempt >= 5) throw;
        c *= 1.5;
      }
    }
  });
}

int kamqm_bands_solve_below(const kamqm_potential* v, double hbar, const double* k, double e_max,
                            kamqm_bands** out) {
  KAMQM_REQUIRE(v && k && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = wrap_bands(solve_bands_below(v->v, hbar, to_vec(k, v->v.dimension()), e_max)); });
}

void kamqm_bands_free(kamqm_bands* b) { delete b; }

int kamqm_bands_count(const kamqm_bands* b) { return b ? b->spec.n_bands() : 0; }
double kamqm_bands_cutoff(const kamqm_bands* b) { return b ? b->spec.basis.cutoff : 0.0; }
size_t kamqm_bands_basis_size(const kamqm_bands* b) { return b ? b->spec.basis.size() : 0; }

int kamqm_bands_get(const kamqm_bands* b, int n, double* energy, double* velocity, int* converged) {
  KAMQM_REQUIRE(b, "null bands");
  KAMQM_REQUIRE(n >= 0 && n < b->spec.n_bands(), "band index out of range");
  if (energy) *energy = b->spec.eigenvalues[n];
  if (velocity) {
    for (Eigen::Index j = 0; j < b->velocities.rows(); ++j) velocity[j] = b->velocities(j, n);
  }
  if (converged) *converged = b->spec.converged[static_cast<std::size_t>(n)] ? 1 : 0;
  return KAMQM_OK;
}

int kamqm_weyl_count(const kamqm_potential* v, double hbar, const double* k, double a, double b, int* count,
                     double* prediction) {
  KAMQM_REQUIRE(v && k, "null argument");
  return guarded([&] {
    WeylCount w = weyl_count(v->v, hbar, to_vec(k, v->v.dimension()), a, b);
    if (count) *count = w.count;
    if (prediction) *prediction = w.prediction;
  });
}

// ---- measures

void kamqm_classical_options_init(kamqm_classical_options* opt) {
  if (!opt) return;
  ClassicalMeasureOptions d;
  opt->T = d.T;
  opt->dt = d.dt;
  opt->rel_tol = d.rel_tol;
  opt->workers = d.workers;
}

int kamqm_measure_classical(const kamqm_potential* v, double a, double b, size_t samples, uint64_t seed,
                            const kamqm_classical_options* opt, kamqm_measure** out) {
  KAMQM_REQUIRE(v && out, "null argument");
  *out = nullptr;
  ClassicalMeasureOptions o;
  if (opt) {
    o.T = opt->T;
    o.dt = opt->dt;
    o.rel_tol = opt->rel_tol;
    o.workers = opt->workers;
  }
  return guarded([&] { *out = new kamqm_measure{classical_measure(v->v, a, b, samples, seed, o)}; });
}

int kamqm_measure_quantum(const kamqm_potential* v, double hbar, double a, double b, int k_grid_size, int workers,
                          kamqm_measure** out) {
  KAMQM_REQUIRE(v && out, "null argument");
  KAMQM_REQUIRE(k_grid_size > 0, "k-grid size must be positive");
  *out = nullptr;
  return guarded([&] {
    const auto ks = k_grid(v->v.lattice(), k_grid_size, true);
    *out = new kamqm_measure{quantum_measure(v->v, hbar, a, b, ks, workers)};
  });
}

int kamqm_measure_create(int dimension, kamqm_measure** out) {
  KAMQM_REQUIRE(out, "null argument");
  *out = nullptr;
  if (dimension != 1 && dimension != 2) return record(ErrorCode::UnsupportedDimension, "dimension must be 1 or 2");
  return guarded([&] {
    *out = new kamqm_measure{};
    (*out)->m.dimension = dimension;
    (*out)->m.points.resize(dimension + 1, 0);
  });
}

int kamqm_measure_add(kamqm_measure* m, double weight, const double* point) {
  KAMQM_REQUIRE(m && point, "null argument");
  KAMQM_REQUIRE(std::isfinite(weight) && weight >= 0.0, "weight must be finite and nonnegative");
  return guarded([&] { m->m.add(weight, to_vec(point, m->m.dimension + 1)); });
}

void kamqm_measure_free(kamqm_measure* m) { delete m; }

size_t kamqm_measure_size(const kamqm_measure* m) { return m ? m->m.size() : 0; }
int kamqm_measure_dimension(const kamqm_measure* m) { return m ? m->m.dimension : 0; }
double kamqm_measure_mass(const kamqm_measure* m) { return m ? m->m.total_mass : 0.0; }
double kamqm_measure_unconverged_fraction(const kamqm_measure* m) { return m ? m->m.unconverged_fraction : 0.0; }

int kamqm_measure_atom(const kamqm_measure* m, size_t i, double* weight, double* point) {
  KAMQM_REQUIRE(m, "null measure");
  KAMQM_REQUIRE(i < m->m.size(), "atom index out of range");
  if (weight) *weight = m->m.weights[i];
  if (point) {
    for (Eigen::Index j = 0; j < m->m.points.rows(); ++j) point[j] = m->m.points(j, static_cast<Eigen::Index>(i));
  }
  return KAMQM_OK;
}

size_t kamqm_panel_size(int dimension) {
  if (dimension != 1 && dimension != 2) return 0;
  return TestFunctionPanel::standard(dimension).functions.size();
}

int kamqm_compare(const kamqm_measure* a, const kamqm_measure* b, double energy_scale, kamqm_comparison* out,
                  double* integrals_a, double* integrals_b) {
  KAMQM_REQUIRE(a && b && out, "null argument");
  return guarded([&] {
    const auto panel = TestFunctionPanel::standard(a->m.dimension);
    ComparisonReport r = weak_star_distance(a->m, b->m, panel, energy_scale);
    out->functions = panel.functions.size();
    out->discrepancy = r.discrepancy;
    out->mc_error = r.mc_error;
    out->wasserstein = r.wasserstein;
    out->wasserstein_coarsened = r.wasserstein_coarsened ? 1 : 0;
    out->mass_a = r.mass_a;
    out->mass_b = r.mass_b;
    for (std::size_t i = 0; i < panel.functions.size(); ++i) {
      if (integrals_a) integrals_a[i] = r.integrals_a[i];
      if (integrals_b) integrals_b[i] = r.integrals_b[i];
    }
  });
}

// ---- KAM

void kamqm_kam_options_init(kamqm_kam_options* opt) {
  if (!opt) return;
  NewtonOptions n;
  opt->c = 0.5;
  opt->gamma = 0.0;
  opt->tau = 0.0;
  opt->k_max = 0;
  opt->newton_cutoff = n.cutoff;
  opt->tol = n.tol;
  opt->max_iterations = n.max_iterations;
  opt->grid = 32;
  opt->workers = 0;
}

int kamqm_family_create(const kamqm_potential* v, double a, double b, const kamqm_kam_options* opt,
                        kamqm_family** out) {
  KAMQM_REQUIRE(v && out, "null argument");
  *out = nullptr;
  kamqm_kam_options o;
  kamqm_kam_options_init(&o);
  if (opt) o = *opt;
  return guarded([&] {
    const int d = v->v.dimension();
    const double E = 0.5 * (a + b);
    if (!(E > 0.0)) fail(ErrorCode::NonpositiveEnergy, "window centre must be positive");
    NewtonOptions n;
    n.cutoff = o.newton_cutoff;
    n.tol = o.tol;
    n.max_iterations = o.max_iterations;
    *out = new kamqm_family{TorusFamily(v->v, a, b, diophantine_from(o, d, E), n, o.grid, o.workers)};
  });
}

void kamqm_family_free(kamqm_family* f) { delete f; }

int kamqm_family_volumes(const kamqm_family* f, double* shell, double* kam, double* gamma) {
  KAMQM_REQUIRE(f, "null family");
  if (shell) *shell = f->family.shell_volume();
  if (kam) *kam = f->family.kam_volume();
  if (gamma) *gamma = f->family.params().gamma;
  return KAMQM_OK;
}

size_t kamqm_family_actions(const kamqm_family* f, size_t max_count, double* actions) {
  if (!f || !actions) return 0;
  const auto Ps = f->family.representative_actions(max_count);
  const int d = f->family.dimension();
  for (std::size_t i = 0; i < Ps.size(); ++i) {
    for (int j = 0; j < d; ++j) actions[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] = Ps[i][j];
  }
  return Ps.size();
}

int kamqm_family_distance(const kamqm_family* f, const double* P, double* distance) {
  KAMQM_REQUIRE(f && P && distance, "null argument");
  return guarded([&] { *distance = f->family.distance_to_accepted(to_vec(P, f->family.dimension())); });
}

int kamqm_torus_at(const kamqm_family* f, const double* P, kamqm_torus** out) {
  KAMQM_REQUIRE(f && P && out, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new kamqm_torus{f->family.torus_at(to_vec(P, f->family.dimension()))}; });
}

void kamqm_torus_free(kamqm_torus* t) { delete t; }

int kamqm_torus_info(const kamqm_torus* t, double* P, double* omega, double* K, double* residual, double* margin) {
  KAMQM_REQUIRE(t, "null torus");
  const auto d = t->t.P.size();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (P) P[j] = t->t.P[j];
    if (omega) omega[j] = t->t.omega[j];
  }
  if (K) *K = t->t.K;
  if (residual) *residual = t->t.residual;
  if (margin) *margin = t->t.margin;
  return KAMQM_OK;
}

size_t kamqm_torus_terms(const kamqm_torus* t) { return t ? t->t.S_po.size() : 0; }

int kamqm_torus_term(const kamqm_torus* t, size_t i, int* index, double* re, double* im) {
  KAMQM_REQUIRE(t, "null torus");
  KAMQM_REQUIRE(i < t->t.S_po.size(), "term index out of range");
  if (index) {
    auto n = t->t.S_po.index(i);
    for (std::size_t j = 0; j < n.size(); ++j) index[j] = n[j];
  }
  const cplx c = t->t.S_po.coefficient_at(i);
  if (re) *re = c.real();
  if (im) *im = c.imag();
  return KAMQM_OK;
}

// ---- quasimodes

void kamqm_quasimode_options_init(kamqm_quasimode_options* opt) {
  if (!opt) return;
  opt->order = 3;
  opt->alpha = 0.0;
  opt->workers = 0;
}

int kamqm_quasimodes_build(const kamqm_family* f, double hbar, const double* k, const kamqm_quasimode_options* opt,
                           kamqm_quasimodes** out) {
  KAMQM_REQUIRE(f && k && out, "null argument");
  *out = nullptr;
  kamqm_quasimode_options o;
  kamqm_quasimode_options_init(&o);
  if (opt) o = *opt;
  KAMQM_REQUIRE(o.order >= 0, "order must be nonnegative");
  return guarded([&] {
    const TorusFamily& fam = f->family;
    const int d = fam.dimension();
    const Vec kv = to_vec(k, d);
    const double alpha = o.alpha > 0.0 ? o.alpha : default_alpha(d, fam.params().tau);
    AdmissibleSet set = admissible_momenta(kv, hbar, alpha, fam);
    // Bands must reach past every E~ + hbar^2 window in [a, b].
    const double e_max = fam.b() + std::max(fam.b() - fam.a(), 0.1 * fam.b());
    BandSpectrum spec = solve_bands_below(fam.potential(), hbar, kv, e_max);
    QuasimodeFamily qf = assemble_family(fam, set, o.order, spec, o.workers);

    auto res = std::make_unique<kamqm_quasimodes>();
    res->admissible = set.members.size();
    res->skipped = std::move(qf.skipped);
    res->reasons = std::move(qf.reasons);
    for (const Quasimode& qm : qf.modes) {
      kamqm_quasimode_record r{};
      for (int j = 0; j < d; ++j) {
        r.label[j] = qm.label[static_cast<std::size_t>(j)];
        r.k[j] = qm.k[j];
      }
      r.hbar = qm.hbar;
      r.order = qm.order;
      r.energy = qm.energy;
      r.residual = qm.residual;
      r.transport_residual = qm.transport_residual;
      try {
        MatchReport m = residual_and_match(qm, spec);
        r.matched = m.nearest;
        r.matched_energy = m.nearest_energy;
        r.distance = m.distance;
        r.overlap = m.overlap;
        r.mu = m.mu;
        r.simple = m.simple ? 1 : 0;
        r.spectral_ok = m.spectral_ok ? 1 : 0;
        r.eq1_ok = m.eq1_ok ? 1 : 0;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::WindowUnresolved) throw;
        res->skipped.push_back(qm.label);
        res->reasons.push_back(e.what());
        continue;
      }
      res->records.push_back(r);
    }
    *out = res.release();
  });
}

void kamqm_quasimodes_free(kamqm_quasimodes* q) { delete q; }
size_t kamqm_quasimodes_admissible(const kamqm_quasimodes* q) { return q ? q->admissible : 0; }
size_t kamqm_quasimodes_count(const kamqm_quasimodes* q) { return q ? q->records.size() : 0; }
size_t kamqm_quasimodes_skipped(const kamqm_quasimodes* q) { return q ? q->skipped.size() : 0; }

int kamqm_quasimodes_get(const kamqm_quasimodes* q, size_t i, kamqm_quasimode_record* out) {
  KAMQM_REQUIRE(q && out, "null argument");
  KAMQM_REQUIRE(i < q->records.size(), "record index out of range");
  *out = q->records[i];
  return KAMQM_OK;
}

int kamqm_quasimodes_skipped_get(const kamqm_quasimodes* q, size_t i, int* label, const char** reason) {
  KAMQM_REQUIRE(q, "null quasimodes");
  KAMQM_REQUIRE(i < q->skipped.size(), "index out of range");
  if (label) std::copy(q->skipped[i].begin(), q->skipped[i].end(), label);
  if (reason) *reason = q->reasons[i].c_str();
  return KAMQM_OK;
}

// ---- sweep

void kamqm_sweep_options_init(kamqm_sweep_options* opt) {
  if (!opt) return;
  SweepOptions d;
  opt->delta = d.delta;
  opt->k_grid = d.k_grid;
  opt->samples = d.samples;
  opt->scale_samples = d.scale_samples ? 1 : 0;
  opt->seed = d.seed;
  kamqm_classical_options_init(&opt->classical);
  opt->workers = d.workers;
}

int kamqm_sweep_run(const kamqm_potential* v, const double* energies, size_t n_energies, const double* hbars,
                    const size_t* hbar_counts, const kamqm_sweep_options* opt, kamqm_sweep** out) {
  KAMQM_REQUIRE(v && energies && hbars && hbar_counts && out, "null argument");
  *out = nullptr;
  kamqm_sweep_options o;
  kamqm_sweep_options_init(&o);
  if (opt) o = *opt;
  return guarded([&] {
    std::vector<double> Es(energies, energies + n_energies);
    std::vector<std::vector<double>> hs;
    std::size_t at = 0;
    for (std::size_t i = 0; i < n_energies; ++i) {
      hs.emplace_back(hbars + at, hbars + at + hbar_counts[i]);
      at += hbar_counts[i];
    }
    SweepOptions so;
    so.delta = o.delta;
    so.k_grid = o.k_grid;
    so.samples = o.samples;
    so.scale_samples = o.scale_samples != 0;
    so.seed = o.seed;
    so.classical.T = o.classical.T;
    so.classical.dt = o.classical.dt;
    so.classical.rel_tol = o.classical.rel_tol;
    so.classical.workers = o.classical.workers;
    so.workers = o.workers;
    *out = new kamqm_sweep{high_energy_sweep(v->v, Es, hs, TestFunctionPanel::standard(v->v.dimension()), so)};
  });
}

void kamqm_sweep_free(kamqm_sweep* s) { delete s; }
size_t kamqm_sweep_cells(const kamqm_sweep* s) { return s ? s->r.cells.size() : 0; }

int kamqm_sweep_cell_get(const kamqm_sweep* s, size_t i, kamqm_sweep_cell* out) {
  KAMQM_REQUIRE(s && out, "null argument");
  KAMQM_REQUIRE(i < s->r.cells.size(), "cell index out of range");
  const SweepCell& c = s->r.cells[i];
  *out = {c.energy, c.hbar, c.discrepancy, c.mc_error, c.wasserstein, c.mass_q, c.mass_c, c.unconverged_fraction,
          c.status == "ok" ? 1 : 0};
  return KAMQM_OK;
}

int kamqm_sweep_summary(const kamqm_sweep* s, double* scaled_ratio, double* slope) {
  KAMQM_REQUIRE(s, "null sweep");
  if (scaled_ratio) *scaled_ratio = s->r.scaled_ratio;
  if (slope) *slope = s->r.slope;
  return KAMQM_OK;
}

int kamqm_sweep_write(const kamqm_sweep* s, const char* table_path, const char* plot_path) {
  KAMQM_REQUIRE(s, "null sweep");
  return guarded([&] {
    if (table_path) {
      std::ofstream f(table_path);
      if (!f) fail(ErrorCode::IoError, std::string("cannot write ") + table_path);
      write_sweep_table(f, s->r);
    }
    if (plot_path) {
      std::ofstream f(plot_path);
      if (!f) fail(ErrorCode::IoError, std::string("cannot write ") + plot_path);
      write_sweep_plot(f, s->r);
    }
  });
}

}  // extern "C"
