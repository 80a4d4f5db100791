// kamqm command-line driver. Links only the C API.
//
//   kamqm <bands|classical|kam|quasimode|compare|sweep> [--config FILE] [flags]
//
// Exit codes: 0 success, 1 domain error (named by the library's taxonomy),
// 2 config or flag error. A manifest.json is written to the output
// directory on every run.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "band_cache.hpp"
#include "kamqm.h"
#include "settings.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace kamqm_cli;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct DomainError : std::runtime_error {
  int status;
  DomainError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

void check(int status) {
  if (status != KAMQM_OK) throw DomainError(status, kamqm_last_error());
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using PotentialPtr = std::unique_ptr<kamqm_potential, Deleter<kamqm_potential, kamqm_potential_free>>;
using BandsPtr = std::unique_ptr<kamqm_bands, Deleter<kamqm_bands, kamqm_bands_free>>;
using MeasurePtr = std::unique_ptr<kamqm_measure, Deleter<kamqm_measure, kamqm_measure_free>>;
using FamilyPtr = std::unique_ptr<kamqm_family, Deleter<kamqm_family, kamqm_family_free>>;
using TorusPtr = std::unique_ptr<kamqm_torus, Deleter<kamqm_torus, kamqm_torus_free>>;
using QuasimodesPtr = std::unique_ptr<kamqm_quasimodes, Deleter<kamqm_quasimodes, kamqm_quasimodes_free>>;
using SweepPtr = std::unique_ptr<kamqm_sweep, Deleter<kamqm_sweep, kamqm_sweep_free>>;

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

const Flag kFlags[] = {
    {"--potential", "potential.source", "free | cosine | cosine2d | path to a potential file"},
    {"--strength", "potential.strength", "multiplier for a built-in potential"},
    {"--hbar", "run.hbar", "hbar values, comma separated"},
    {"--energy", "run.energy", "centre energy E of I = [(1-delta)E, (1+delta)E]"},
    {"--delta", "run.delta", "relative half width of the energy window, in (0, 1)"},
    {"--k", "run.k", "quasimomentum (d components, comma separated)"},
    {"--k-grid", "run.k_grid", "points per axis of the k-grid"},
    {"--seed", "run.seed", "seed for stochastic stages"},
    {"--workers", "run.workers", "worker threads (0: all cores)"},
    {"--output", "run.output", "output directory"},
    {"--bands", "bands.count", "number of bands per k"},
    {"--cutoff", "bands.cutoff", "plane-wave cutoff (0: automatic)"},
    {"--e-max", "bands.e_max", "all bands up to this energy instead of --bands"},
    {"--c", "kam.c", "gamma = c / sqrt(E)"},
    {"--gamma", "kam.gamma", "explicit scaled Diophantine constant"},
    {"--tau", "kam.tau", "Diophantine exponent (0: 2d + 1)"},
    {"--newton-cutoff", "kam.newton_cutoff", "Fourier cutoff of the torus Newton solver"},
    {"--tol", "kam.tol", "torus residual target"},
    {"--grid", "kam.grid", "action cells per axis (d = 2)"},
    {"--tori", "kam.tori", "tori written to the archive"},
    {"--order", "quasimode.order", "quasimode order N"},
    {"--alpha", "quasimode.alpha", "admissibility exponent (0: default)"},
    {"--samples", "classical.samples", "classical Monte Carlo samples"},
    {"--T", "classical.T", "Birkhoff averaging time"},
    {"--dt", "classical.dt", "leapfrog step"},
    {"--energies", "sweep.energies", "sweep energies, comma separated"},
    {"--sweep-hbar", "sweep.hbar", "hbar lists per energy, groups separated by '|'"},
    {"--sweep-samples", "sweep.samples", "classical samples at the first sweep energy"},
    {"--scale-samples", "sweep.scale_samples", "scale sweep samples with E (true/false)"},
};

double now() {
  using clock = std::chrono::steady_clock;
  static const auto t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

// ---- run state

struct Run {
  std::string command;
  Settings settings;
  fs::path output;
  json stages = json::object();
  json outputs = json::array();
  json cache = json::array();
  json results = json::object();
  PotentialPtr potential;
  int d = 1;

  std::ofstream open(const std::string& name) {
    fs::create_directories(output);
    std::ofstream f(output / name);
    if (!f) throw DomainError(KAMQM_IO_ERROR, "cannot write " + (output / name).string());
    f.precision(17);
    outputs.push_back(name);
    return f;
  }

  template <class Fn>
  void stage(const std::string& name, Fn&& fn) {
    const double t = now();
    fn();
    stages[name] = now() - t;
  }
};

// ---- validation

void require(bool ok, const std::string& invariant) {
  if (!ok) throw ConfigError(invariant);
}

std::vector<double> hbar_list(const Settings& s) {
  auto hs = s.numbers("run.hbar");
  require(!hs.empty(), "run.hbar must list at least one value");
  for (double h : hs) require(h > 0.0, "run.hbar: every hbar must be > 0");
  return hs;
}

struct Window {
  double E, delta, a, b;
};

Window energy_window(const Settings& s) {
  Window w{};
  w.E = s.number("run.energy");
  w.delta = s.number("run.delta");
  require(w.E > 0.0, "run.energy must be > 0");
  require(w.delta > 0.0 && w.delta < 1.0,
          "run.delta = " + s.text("run.delta") + " violates 0 < delta < 1 (I = [(1-delta)E, (1+delta)E])");
  w.a = (1.0 - w.delta) * w.E;
  w.b = (1.0 + w.delta) * w.E;
  return w;
}

std::uint64_t seed_of(const Settings& s) {
  require(s.present("run.seed"), "run.seed is mandatory for stochastic stages");
  return s.unsigned64("run.seed");
}

int positive_int(const Settings& s, const std::string& key) {
  const int n = s.integer(key);
  require(n > 0, key + " must be > 0");
  return n;
}

int workers_of(const Settings& s) {
  const int w = s.integer("run.workers");
  require(w >= 0, "run.workers must be >= 0");
  return w;
}

std::vector<double> k_of(const Run& run) {
  auto k = run.settings.numbers("run.k");
  if (k.size() == 1 && run.d == 2) k.push_back(k[0]);
  require(static_cast<int>(k.size()) == run.d, "run.k must have " + std::to_string(run.d) + " components");
  return k;
}

kamqm_classical_options classical_options(const Settings& s) {
  kamqm_classical_options o;
  kamqm_classical_options_init(&o);
  o.T = s.number("classical.T");
  o.dt = s.number("classical.dt");
  o.rel_tol = s.number("classical.rel_tol");
  o.workers = workers_of(s);
  require(o.T > 0.0, "classical.T must be > 0");
  require(o.dt > 0.0 && o.dt < o.T, "classical.dt must lie in (0, T)");
  require(o.rel_tol > 0.0, "classical.rel_tol must be > 0");
  return o;
}

kamqm_kam_options kam_options(const Settings& s) {
  kamqm_kam_options o;
  kamqm_kam_options_init(&o);
  o.c = s.number("kam.c");
  o.gamma = s.number("kam.gamma");
  o.tau = s.number("kam.tau");
  o.k_max = s.integer("kam.k_max");
  o.newton_cutoff = positive_int(s, "kam.newton_cutoff");
  o.tol = s.number("kam.tol");
  o.max_iterations = positive_int(s, "kam.max_iterations");
  o.grid = positive_int(s, "kam.grid");
  o.workers = workers_of(s);
  require(o.c > 0.0 || o.gamma > 0.0, "kam.c or kam.gamma must be > 0");
  require(o.gamma >= 0.0 && o.tau >= 0.0 && o.k_max >= 0, "kam.gamma, kam.tau, kam.k_max must be >= 0");
  require(o.tol > 0.0, "kam.tol must be > 0");
  return o;
}

void load_potential(Run& run) {
  const Settings& s = run.settings;
  const std::string src = s.text("potential.source");
  require(!src.empty(), "potential.source is required");
  kamqm_potential* p = nullptr;
  if (src == "free" || src == "cosine" || src == "cosine2d") {
    check(kamqm_potential_builtin(src.c_str(), s.number("potential.strength"), &p));
  } else {
    check(kamqm_potential_load(src.c_str(), &p));
  }
  run.potential.reset(p);
  run.d = kamqm_potential_dimension(p);
  char h[20];
  std::snprintf(h, sizeof h, "%016llx", static_cast<unsigned long long>(kamqm_potential_hash(p)));
  run.results["potential"] = {{"name", kamqm_potential_name(p)}, {"dimension", run.d}, {"hash", h}};
}

std::vector<std::vector<double>> grid_points(const Run& run, int n) {
  const std::size_t count = static_cast<std::size_t>(std::pow(n, run.d));
  std::vector<double> flat(count * static_cast<std::size_t>(run.d));
  check(kamqm_k_grid(run.potential.get(), n, flat.data(), flat.size()));
  std::vector<std::vector<double>> ks(count);
  for (std::size_t i = 0; i < count; ++i) {
    ks[i].assign(flat.begin() + static_cast<long>(i) * run.d, flat.begin() + static_cast<long>(i + 1) * run.d);
  }
  return ks;
}

// Band sweep over the k-grid, through the cache. e_max > 0 selects all bands
// below e_max; otherwise `count` bands at `cutoff`.
std::vector<BandRow> band_sweep(Run& run, double hbar, int k_grid, int count, double cutoff, double e_max) {
  const std::string cut = e_max > 0.0 ? "below:" + exact(e_max)
                                      : (cutoff > 0.0 ? exact(cutoff) : "auto") + ":bands=" + std::to_string(count);
  BandCache cache(run.output / "cache");
  const std::string key = BandCache::key(kamqm_potential_hash(run.potential.get()), hbar, cut, k_grid);
  if (auto rows = cache.load(key, run.d)) {
    std::cerr << "kamqm: band cache hit [" << key << "]\n";
    run.cache.push_back({{"key", key}, {"hit", true}});
    return *rows;
  }
  run.cache.push_back({{"key", key}, {"hit", false}});
  std::vector<BandRow> rows;
  std::vector<double> v(static_cast<std::size_t>(run.d));
  for (const auto& k : grid_points(run, k_grid)) {
    kamqm_bands* raw = nullptr;
    if (e_max > 0.0) {
      check(kamqm_bands_solve_below(run.potential.get(), hbar, k.data(), e_max, &raw));
    } else {
      check(kamqm_bands_solve(run.potential.get(), hbar, k.data(), cutoff, count, &raw));
    }
    BandsPtr bands(raw);
    for (int n = 0; n < kamqm_bands_count(raw); ++n) {
      BandRow r;
      r.hbar = hbar;
      r.k = k;
      r.n = n;
      check(kamqm_bands_get(raw, n, &r.energy, v.data(), &r.converged));
      r.velocity = v;
      rows.push_back(std::move(r));
    }
  }
  cache.store(key, run.d, rows);
  return rows;
}

void write_measure(std::ostream& out, const kamqm_measure* m) {
  const int d = kamqm_measure_dimension(m);
  out << "# weight energy";
  for (int j = 0; j < d; ++j) out << " v_" << j + 1;
  out << '\n';
  std::vector<double> point(static_cast<std::size_t>(d + 1));
  for (std::size_t i = 0; i < kamqm_measure_size(m); ++i) {
    double w = 0.0;
    check(kamqm_measure_atom(m, i, &w, point.data()));
    out << exact(w);
    for (double x : point) out << ' ' << exact(x);
    out << '\n';
  }
}

// ---- stages

void cmd_bands(Run& run) {
  const Settings& s = run.settings;
  const auto hs = hbar_list(s);
  const int k_grid = positive_int(s, "run.k_grid");
  const int count = positive_int(s, "bands.count");
  const double cutoff = s.number("bands.cutoff");
  require(cutoff >= 0.0, "bands.cutoff must be >= 0");
  double e_max = 0.0;
  if (s.present("bands.e_max")) {
    e_max = s.number("bands.e_max");
    require(e_max > 0.0, "bands.e_max must be > 0");
  }
  auto out = run.open("bands.csv");
  write_band_header(out, run.d);
  std::size_t total = 0, unconverged = 0;
  for (double h : hs) {
    std::vector<BandRow> rows;
    run.stage("bands hbar=" + exact(h), [&] { rows = band_sweep(run, h, k_grid, count, cutoff, e_max); });
    for (const BandRow& r : rows) {
      write_band_row(out, r);
      ++total;
      if (!r.converged) ++unconverged;
    }
  }
  run.results["bands"] = {{"rows", total}, {"unconverged", unconverged}};
}

void cmd_classical(Run& run) {
  const Settings& s = run.settings;
  const Window w = energy_window(s);
  const std::uint64_t seed = seed_of(s);
  const int samples = positive_int(s, "classical.samples");
  const auto opt = classical_options(s);
  kamqm_measure* raw = nullptr;
  run.stage("classical", [&] {
    check(kamqm_measure_classical(run.potential.get(), w.a, w.b, static_cast<std::size_t>(samples), seed, &opt, &raw));
  });
  MeasurePtr m(raw);
  auto out = run.open("measure_classical.txt");
  write_measure(out, raw);
  run.results["classical"] = {{"a", w.a},
                              {"b", w.b},
                              {"atoms", kamqm_measure_size(raw)},
                              {"mass", kamqm_measure_mass(raw)},
                              {"unconverged_fraction", kamqm_measure_unconverged_fraction(raw)}};
}

FamilyPtr make_family(Run& run, const Window& w) {
  const auto opt = kam_options(run.settings);
  kamqm_family* raw = nullptr;
  run.stage("kam family", [&] { check(kamqm_family_create(run.potential.get(), w.a, w.b, &opt, &raw)); });
  return FamilyPtr(raw);
}

void cmd_kam(Run& run) {
  const Settings& s = run.settings;
  const Window w = energy_window(s);
  const int n_tori = s.integer("kam.tori");
  require(n_tori >= 0, "kam.tori must be >= 0");
  FamilyPtr fam = make_family(run, w);
  double shell = 0.0, kam = 0.0, gamma = 0.0;
  check(kamqm_family_volumes(fam.get(), &shell, &kam, &gamma));
  {
    auto out = run.open("kam.csv");
    out << "a,b,gamma,shell_volume,kam_volume,fraction\n";
    out << exact(w.a) << ',' << exact(w.b) << ',' << exact(gamma) << ',' << exact(shell) << ',' << exact(kam) << ','
        << exact(shell > 0.0 ? kam / shell : 0.0) << '\n';
  }
  std::vector<double> actions(static_cast<std::size_t>(n_tori * run.d));
  const std::size_t found = kamqm_family_actions(fam.get(), static_cast<std::size_t>(n_tori), actions.data());
  auto out = run.open("tori.txt");
  out << "# per torus: P, omega, K, residual, margin, then S_po terms 'index.. re im'\n";
  std::vector<double> P(static_cast<std::size_t>(run.d)), omega(P.size());
  std::vector<int> index(P.size());
  run.stage("tori", [&] {
    for (std::size_t i = 0; i < found; ++i) {
      kamqm_torus* raw = nullptr;
      check(kamqm_torus_at(fam.get(), actions.data() + i * static_cast<std::size_t>(run.d), &raw));
      TorusPtr t(raw);
      double K = 0.0, residual = 0.0, margin = 0.0;
      check(kamqm_torus_info(raw, P.data(), omega.data(), &K, &residual, &margin));
      out << "torus " << i << "\nP";
      for (double x : P) out << ' ' << exact(x);
      out << "\nomega";
      for (double x : omega) out << ' ' << exact(x);
      out << "\nK " << exact(K) << "\nresidual " << exact(residual) << "\nmargin " << exact(margin) << "\nterms "
          << kamqm_torus_terms(raw) << '\n';
      for (std::size_t j = 0; j < kamqm_torus_terms(raw); ++j) {
        double re = 0.0, im = 0.0;
        check(kamqm_torus_term(raw, j, index.data(), &re, &im));
        for (int n : index) out << n << ' ';
        out << exact(re) << ' ' << exact(im) << '\n';
      }
    }
  });
  run.results["kam"] = {{"gamma", gamma}, {"shell_volume", shell}, {"kam_volume", kam}, {"tori", found}};
}

void cmd_quasimode(Run& run) {
  const Settings& s = run.settings;
  const Window w = energy_window(s);
  const auto hs = hbar_list(s);
  const auto k = k_of(run);
  kamqm_quasimode_options opt;
  kamqm_quasimode_options_init(&opt);
  opt.order = s.integer("quasimode.order");
  opt.alpha = s.number("quasimode.alpha");
  opt.workers = workers_of(s);
  require(opt.order >= 0, "quasimode.order must be >= 0");
  require(opt.alpha >= 0.0, "quasimode.alpha must be >= 0");
  FamilyPtr fam = make_family(run, w);

  auto out = run.open("quasimodes.csv");
  auto skipped = run.open("quasimodes_skipped.csv");
  out << "label";
  for (int j = 1; j < run.d; ++j) out << ",label" << j + 1;
  for (int j = 0; j < run.d; ++j) out << ",k" << j + 1;
  out << ",hbar,N,E,residual,matched,matched_E,distance,overlap,mu,simple,spectral_ok,eq1_ok,transport_residual\n";
  skipped << "hbar,label" << (run.d == 2 ? ",label2" : "") << ",reason\n";
  json summary = json::array();
  for (double h : hs) {
    kamqm_quasimodes* raw = nullptr;
    run.stage("quasimodes hbar=" + exact(h), [&] {
      check(kamqm_quasimodes_build(fam.get(), h, k.data(), &opt, &raw));
    });
    QuasimodesPtr q(raw);
    std::size_t spectral_ok = 0;
    for (std::size_t i = 0; i < kamqm_quasimodes_count(raw); ++i) {
      kamqm_quasimode_record r;
      check(kamqm_quasimodes_get(raw, i, &r));
      spectral_ok += static_cast<std::size_t>(r.spectral_ok);
      for (int j = 0; j < run.d; ++j) out << (j ? "," : "") << r.label[j];
      for (int j = 0; j < run.d; ++j) out << ',' << exact(r.k[j]);
      out << ',' << exact(r.hbar) << ',' << r.order << ',' << exact(r.energy) << ',' << exact(r.residual) << ','
          << r.matched << ',' << exact(r.matched_energy) << ',' << exact(r.distance) << ',' << exact(r.overlap)
          << ',' << exact(r.mu) << ',' << r.simple << ',' << r.spectral_ok << ',' << r.eq1_ok << ','
          << exact(r.transport_residual) << '\n';
    }
    std::vector<int> label(static_cast<std::size_t>(run.d));
    for (std::size_t i = 0; i < kamqm_quasimodes_skipped(raw); ++i) {
      const char* reason = nullptr;
      check(kamqm_quasimodes_skipped_get(raw, i, label.data(), &reason));
      skipped << exact(h);
      for (int l : label) skipped << ',' << l;
      std::string why = reason;
      for (char& c : why) {
        if (c == ',' || c == '\n') c = ';';
      }
      skipped << ',' << why << '\n';
    }
    summary.push_back({{"hbar", h},
                       {"admissible", kamqm_quasimodes_admissible(raw)},
                       {"built", kamqm_quasimodes_count(raw)},
                       {"skipped", kamqm_quasimodes_skipped(raw)},
                       {"spectral_ok", spectral_ok}});
  }
  run.results["quasimodes"] = summary;
}

void cmd_compare(Run& run) {
  const Settings& s = run.settings;
  const Window w = energy_window(s);
  const auto hs = hbar_list(s);
  const int k_grid = positive_int(s, "run.k_grid");
  const std::uint64_t seed = seed_of(s);
  const int samples = positive_int(s, "classical.samples");
  const auto copt = classical_options(s);

  kamqm_measure* raw = nullptr;
  run.stage("classical", [&] {
    check(kamqm_measure_classical(run.potential.get(), w.a, w.b, static_cast<std::size_t>(samples), seed, &copt,
                                  &raw));
  });
  MeasurePtr classical(raw);
  {
    auto out = run.open("measure_classical.txt");
    write_measure(out, raw);
  }
  double v_min = 0.0;
  check(kamqm_potential_range(run.potential.get(), &v_min, nullptr));

  const std::size_t nf = kamqm_panel_size(run.d);
  auto panel = run.open("compare_panel.csv");
  panel << "hbar,function,integral_q,integral_c,difference\n";
  auto summary_out = run.open("compare.csv");
  summary_out << "hbar,discrepancy,mc_error,within_2sigma,wasserstein,mass_q,mass_c\n";
  json summary = json::array();
  for (std::size_t hi = 0; hi < hs.size(); ++hi) {
    const double h = hs[hi];
    // nu^hbar from the (cached) band sweep below b.
    kamqm_measure* qraw = nullptr;
    check(kamqm_measure_create(run.d, &qraw));
    MeasurePtr quantum(qraw);
    if (w.b > v_min) {
      std::vector<BandRow> rows;
      run.stage("bands hbar=" + exact(h), [&] { rows = band_sweep(run, h, k_grid, 0, 0.0, w.b); });
      const double weight = std::pow(kTwoPi * h, run.d) / std::pow(static_cast<double>(k_grid), run.d);
      std::vector<double> point(static_cast<std::size_t>(run.d + 1));
      for (const BandRow& r : rows) {
        if (r.energy < w.a || r.energy > w.b) continue;
        point[0] = r.energy;
        std::copy(r.velocity.begin(), r.velocity.end(), point.begin() + 1);
        check(kamqm_measure_add(qraw, weight, point.data()));
      }
    }
    {
      auto out = run.open("measure_quantum_" + std::to_string(hi) + ".txt");
      write_measure(out, qraw);
    }
    kamqm_comparison c{};
    std::vector<double> iq(nf), ic(nf);
    run.stage("compare hbar=" + exact(h), [&] { check(kamqm_compare(qraw, raw, w.E, &c, iq.data(), ic.data())); });
    for (std::size_t f = 0; f < nf; ++f) {
      panel << exact(h) << ',' << f << ',' << exact(iq[f]) << ',' << exact(ic[f]) << ','
            << exact(std::abs(iq[f] - ic[f])) << '\n';
    }
    const bool floor = c.discrepancy <= 2.0 * c.mc_error;
    summary_out << exact(h) << ',' << exact(c.discrepancy) << ',' << exact(c.mc_error) << ',' << floor << ','
                << exact(c.wasserstein) << ',' << exact(c.mass_a) << ',' << exact(c.mass_b) << '\n';
    summary.push_back({{"hbar", h},
                       {"discrepancy", c.discrepancy},
                       {"mc_error", c.mc_error},
                       {"within_2sigma", floor},
                       {"wasserstein", c.wasserstein}});
  }
  run.results["compare"] = summary;
}

void cmd_sweep(Run& run) {
  const Settings& s = run.settings;
  const auto Es = s.numbers("sweep.energies");
  const auto groups = s.groups("sweep.hbar");
  require(!Es.empty(), "sweep.energies must list at least one energy");
  require(groups.size() == Es.size(), "sweep.hbar needs one '|'-separated group per energy");
  std::vector<double> flat;
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < Es.size(); ++i) {
    require(Es[i] > 0.0, "sweep.energies must be > 0");
    require(!groups[i].empty(), "sweep.hbar: empty group");
    for (double h : groups[i]) require(h > 0.0, "sweep.hbar values must be > 0");
    flat.insert(flat.end(), groups[i].begin(), groups[i].end());
    counts.push_back(groups[i].size());
  }
  kamqm_sweep_options opt;
  kamqm_sweep_options_init(&opt);
  opt.delta = energy_window(s).delta;
  opt.k_grid = positive_int(s, "run.k_grid");
  opt.samples = static_cast<std::size_t>(positive_int(s, "sweep.samples"));
  opt.scale_samples = s.flag("sweep.scale_samples") ? 1 : 0;
  opt.seed = seed_of(s);
  opt.classical = classical_options(s);
  opt.workers = workers_of(s);
  kamqm_sweep* raw = nullptr;
  run.stage("sweep", [&] {
    check(kamqm_sweep_run(run.potential.get(), Es.data(), Es.size(), flat.data(), counts.data(), &opt, &raw));
  });
  SweepPtr sweep(raw);
  fs::create_directories(run.output);
  check(kamqm_sweep_write(raw, (run.output / "sweep.txt").c_str(), (run.output / "sweep_plot.txt").c_str()));
  run.outputs.push_back("sweep.txt");
  run.outputs.push_back("sweep_plot.txt");
  double ratio = 0.0, slope = 0.0;
  check(kamqm_sweep_summary(raw, &ratio, &slope));
  run.results["sweep"] = {{"scaled_ratio", ratio}, {"slope", slope}};
}

// --output beats KAMQM_OUTPUT_DIR, which beats the config file.
fs::path output_dir(const Settings& s) {
  if (s.present("run.output") && s.origin("run.output") == "flag") return s.text("run.output");
  if (const char* env = std::getenv("KAMQM_OUTPUT_DIR"); env && *env) return env;
  if (s.present("run.output")) return s.text("run.output");
  return "kamqm_out";
}

void write_manifest(const Run& run, const std::vector<std::string>& argv, int code, const json& error) {
  json m;
  m["tool"] = "kamqm";
  m["command"] = run.command;
  m["argv"] = argv;
  m["exit_code"] = code;
  m["status"] = code == 0 ? "ok" : (code == 2 ? "config_error" : "domain_error");
  if (!error.is_null()) m["error"] = error;
  m["versions"] = {{"kamqm", kamqm_version()}, {"compiler", __VERSION__}, {"cli11", CLI11_VERSION},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  m["config"] = run.settings.echo();
  m["output_dir"] = run.output.string();
  m["timings_seconds"] = run.stages;
  m["cache"] = run.cache;
  m["outputs"] = run.outputs;
  m["results"] = run.results;
  std::error_code ec;
  fs::create_directories(run.output, ec);
  std::ofstream f(run.output / "manifest.json");
  if (f) {
    f << m.dump(2) << '\n';
  } else {
    std::cerr << "kamqm: cannot write manifest to " << run.output << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kamqm: Bloch bands, KAM tori, quasimodes and velocity distributions"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value config with [sections]");
  std::vector<std::string> flag_values(std::size(kFlags));
  for (std::size_t i = 0; i < std::size(kFlags); ++i) {
    app.add_option(kFlags[i].name, flag_values[i], std::string(kFlags[i].help) + " [" + kFlags[i].key + "]");
  }
  const char* commands[][2] = {
      {"bands", "band energies and group velocities over a k-grid (CSV)"},
      {"classical", "classical energy-velocity measure on the shell"},
      {"kam", "KAM volume fraction and a torus archive"},
      {"quasimode", "WKB quasimodes on KAM tori, matched to the band spectrum"},
      {"compare", "quantum vs classical velocity distributions on the test panel"},
      {"sweep", "high-energy sweep of the discrepancy"},
  };
  for (const auto& c : commands) app.add_subcommand(c[0], c[1])->fallthrough();

  Run run;
  std::vector<std::string> args(argv, argv + argc);
  int code = 0;
  json error;
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      throw ConfigError(e.what());
    }
    run.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) run.settings.load_file(config_path);
    for (std::size_t i = 0; i < std::size(kFlags); ++i) {
      if (app.count(kFlags[i].name) > 0) run.settings.set(kFlags[i].key, flag_values[i], "flag");
    }
    run.output = output_dir(run.settings);
    // Shared invariants are checked for every subcommand, before any work.
    energy_window(run.settings);
    hbar_list(run.settings);
    positive_int(run.settings, "run.k_grid");
    workers_of(run.settings);
    load_potential(run);
    if (run.command == "bands") cmd_bands(run);
    else if (run.command == "classical") cmd_classical(run);
    else if (run.command == "kam") cmd_kam(run);
    else if (run.command == "quasimode") cmd_quasimode(run);
    else if (run.command == "compare") cmd_compare(run);
    else cmd_sweep(run);
  } catch (const ConfigError& e) {
    code = 2;
    error = {{"name", "ConfigError"}, {"message", e.what()}};
    std::cerr << "kamqm: config error: " << e.what() << '\n';
  } catch (const DomainError& e) {
    code = 1;
    error = {{"name", kamqm_status_name(e.status)}, {"code", e.status}, {"message", e.what()}};
    std::cerr << "kamqm: " << e.what() << '\n';
  } catch (const std::exception& e) {
    code = 1;
    error = {{"name", "IoError"}, {"message", e.what()}};
    std::cerr << "kamqm: " << e.what() << '\n';
  }
  if (run.output.empty()) {
    try {
      run.output = output_dir(run.settings);
    } catch (const std::exception&) {
      run.output = "kamqm_out";
    }
  }
  write_manifest(run, args, code, error);
  return code;
}
