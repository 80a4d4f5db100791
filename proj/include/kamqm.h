/* kamqm: Bloch bands, KAM tori, WKB quasimodes and quantum/classical
 * velocity distributions for a particle in a periodic potential.
 *
 * Every fallible call returns a kamqm_status; on failure the output handle
 * is left NULL and kamqm_last_error() holds a message for the calling thread.
 * Handles are opaque and owned by the caller (free with the matching
 * *_free, which accepts NULL). Vectors in and out are plain double arrays of
 * the potential's dimension d (1 or 2).
 */
#ifndef KAMQM_H
#define KAMQM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KAMQM_API __declspec(dllexport)
#else
#define KAMQM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kamqm_status {
  KAMQM_OK = 0,
  KAMQM_SINGULAR_BASIS = 1,
  KAMQM_UNSUPPORTED_DIMENSION = 2,
  KAMQM_NONPOSITIVE_ENERGY = 3,
  KAMQM_INVALID_ARGUMENT = 4,
  KAMQM_PARSE_ERROR = 5,
  KAMQM_NON_HERMITIAN = 6,
  KAMQM_CUTOFF_TOO_SMALL = 7,
  KAMQM_EIGENSOLVER_FAILURE = 8,
  KAMQM_STEP_TOO_LARGE = 9,
  KAMQM_EMPTY_SHELL = 10,
  KAMQM_ENERGY_BELOW_SEPARATRIX = 11,
  KAMQM_SMALL_DIVISOR_BREAKDOWN = 12,
  KAMQM_NO_CONVERGENCE = 13,
  KAMQM_DEGENERATE_JACOBIAN = 14,
  KAMQM_GRID_TOO_COARSE = 15,
  KAMQM_WINDOW_UNRESOLVED = 16,
  KAMQM_EMPTY_OVERLAP = 17,
  KAMQM_IO_ERROR = 18,
  KAMQM_CONFIG_ERROR = 19,
  KAMQM_INTERNAL = 20
} kamqm_status;

KAMQM_API const char* kamqm_version(void);
/* "SingularBasis", "CutoffTooSmall", ...; "Unknown" outside the enum. */
KAMQM_API const char* kamqm_status_name(int status);
KAMQM_API const char* kamqm_last_error(void);

/* ---- potentials ------------------------------------------------------- */

typedef struct kamqm_potential kamqm_potential;

/* name: "free", "cosine" (d = 1) or "cosine2d"; V is scaled by strength. */
KAMQM_API int kamqm_potential_builtin(const char* name, double strength, kamqm_potential** out);
/* Text format documented in docs/formats.md. */
KAMQM_API int kamqm_potential_load(const char* path, kamqm_potential** out);
KAMQM_API int kamqm_potential_parse(const char* text, kamqm_potential** out);
KAMQM_API void kamqm_potential_free(kamqm_potential* v);

KAMQM_API int kamqm_potential_dimension(const kamqm_potential* v);
KAMQM_API uint64_t kamqm_potential_hash(const kamqm_potential* v);
KAMQM_API const char* kamqm_potential_name(const kamqm_potential* v);
KAMQM_API int kamqm_potential_range(const kamqm_potential* v, double* v_min, double* v_max);
KAMQM_API int kamqm_potential_value(const kamqm_potential* v, const double* q, double* value);

/* n^d offset Monkhorst points over the dual cell; k receives n^d * d values
 * and must hold `capacity` doubles. */
KAMQM_API int kamqm_k_grid(const kamqm_potential* v, int n, double* k, size_t capacity);

/* Liouville volume of {a <= H <= b}. */
KAMQM_API int kamqm_shell_volume(const kamqm_potential* v, double a, double b, double* volume);

/* ---- bands ------------------------------------------------------------ */

typedef struct kamqm_bands kamqm_bands;

/* Lowest n_bands bands of H(k) at the given plane-wave cutoff (in units of
 * the shortest dual vector). Fails with KAMQM_CUTOFF_TOO_SMALL when the
 * cutoff + 8 check moves a band by more than 1e-8 relative. cutoff <= 0
 * picks and grows the cutoff automatically. */
KAMQM_API int kamqm_bands_solve(const kamqm_potential* v, double hbar, const double* k, double cutoff, int n_bands,
                                kamqm_bands** out);
/* Every band with E_n <= e_max plus one above, cutoff chosen automatically. */
KAMQM_API int kamqm_bands_solve_below(const kamqm_potential* v, double hbar, const double* k, double e_max,
                                      kamqm_bands** out);
KAMQM_API void kamqm_bands_free(kamqm_bands* b);

KAMQM_API int kamqm_bands_count(const kamqm_bands* b);
KAMQM_API double kamqm_bands_cutoff(const kamqm_bands* b);
KAMQM_API size_t kamqm_bands_basis_size(const kamqm_bands* b);
/* Band n: energy, group velocity v_n = grad_k E_n / hbar (0 at degeneracies)
 * and the cutoff convergence flag. Any output may be NULL. */
KAMQM_API int kamqm_bands_get(const kamqm_bands* b, int n, double* energy, double* velocity, int* converged);

KAMQM_API int kamqm_weyl_count(const kamqm_potential* v, double hbar, const double* k, double a, double b,
                               int* count, double* prediction);

/* ---- measures in (energy, velocity) space ------------------------------ */

typedef struct kamqm_measure kamqm_measure;

typedef struct kamqm_classical_options {
  double T;       /* Birkhoff averaging time */
  double dt;      /* leapfrog step (halved on demand) */
  double rel_tol; /* velocity tolerance relative to sqrt(2 (E - V_min)) */
  int workers;    /* 0: hardware concurrency */
} kamqm_classical_options;

KAMQM_API void kamqm_classical_options_init(kamqm_classical_options* opt);

/* Liouville measure of the shell pushed to (H, asymptotic velocity). */
KAMQM_API int kamqm_measure_classical(const kamqm_potential* v, double a, double b, size_t samples, uint64_t seed,
                                      const kamqm_classical_options* opt, kamqm_measure** out);
/* Band atoms (E_n, v_n) with E_n in [a, b] over an n^d k-grid, each of
 * weight (2 pi hbar)^d / n^d. */
KAMQM_API int kamqm_measure_quantum(const kamqm_potential* v, double hbar, double a, double b, int k_grid,
                                    int workers, kamqm_measure** out);
KAMQM_API int kamqm_measure_create(int dimension, kamqm_measure** out);
KAMQM_API int kamqm_measure_add(kamqm_measure* m, double weight, const double* point);
KAMQM_API void kamqm_measure_free(kamqm_measure* m);

KAMQM_API size_t kamqm_measure_size(const kamqm_measure* m);
KAMQM_API int kamqm_measure_dimension(const kamqm_measure* m);
KAMQM_API double kamqm_measure_mass(const kamqm_measure* m);
KAMQM_API double kamqm_measure_unconverged_fraction(const kamqm_measure* m);
/* point receives d + 1 values, energy first. */
KAMQM_API int kamqm_measure_atom(const kamqm_measure* m, size_t i, double* weight, double* point);

typedef struct kamqm_comparison {
  size_t functions;
  double discrepancy; /* max over the panel of |integral_a - integral_b| */
  double mc_error;    /* max over the panel of the combined Monte Carlo sigma */
  double wasserstein; /* W1 of the normalized velocity marginals */
  int wasserstein_coarsened;
  double mass_a, mass_b;
} kamqm_comparison;

/* Number of test functions in the standard panel for dimension d. */
KAMQM_API size_t kamqm_panel_size(int dimension);
/* Panel integrals under ballistic scaling at energy_scale. integrals_a and
 * integrals_b may be NULL, else hold kamqm_panel_size(d) values. */
KAMQM_API int kamqm_compare(const kamqm_measure* a, const kamqm_measure* b, double energy_scale,
                            kamqm_comparison* out, double* integrals_a, double* integrals_b);

/* ---- KAM tori --------------------------------------------------------- */

typedef struct kamqm_kam_options {
  double c;           /* gamma = c / sqrt(E) when gamma <= 0 */
  double gamma;       /* scaled Diophantine constant; <= 0 for the default */
  double tau;         /* <= 0: 2 d + 1 */
  int k_max;          /* Diophantine test range */
  int newton_cutoff;  /* Fourier modes |n_j| <= newton_cutoff */
  double tol;         /* Newton residual target */
  int max_iterations;
  int grid;           /* d = 2 action cells per axis */
  int workers;
} kamqm_kam_options;

KAMQM_API void kamqm_kam_options_init(kamqm_kam_options* opt);

typedef struct kamqm_family kamqm_family;
typedef struct kamqm_torus kamqm_torus;

/* Accepted KAM tori in the window [a, b]. */
KAMQM_API int kamqm_family_create(const kamqm_potential* v, double a, double b, const kamqm_kam_options* opt,
                                  kamqm_family** out);
KAMQM_API void kamqm_family_free(kamqm_family* f);
/* Shell volume, accepted volume and the scaled gamma in use. */
KAMQM_API int kamqm_family_volumes(const kamqm_family* f, double* shell, double* kam, double* gamma);
/* Up to max_count actions spread over the accepted set, written as
 * count * d doubles; returns the count. */
KAMQM_API size_t kamqm_family_actions(const kamqm_family* f, size_t max_count, double* actions);
KAMQM_API int kamqm_family_distance(const kamqm_family* f, const double* P, double* distance);

KAMQM_API int kamqm_torus_at(const kamqm_family* f, const double* P, kamqm_torus** out);
KAMQM_API void kamqm_torus_free(kamqm_torus* t);
/* Any output may be NULL. */
KAMQM_API int kamqm_torus_info(const kamqm_torus* t, double* P, double* omega, double* K, double* residual,
                               double* margin);
KAMQM_API size_t kamqm_torus_terms(const kamqm_torus* t);
/* Term i of S_po: dual index (d ints) and coefficient. */
KAMQM_API int kamqm_torus_term(const kamqm_torus* t, size_t i, int* index, double* re, double* im);

/* ---- quasimodes ------------------------------------------------------- */

typedef struct kamqm_quasimode_options {
  int order;      /* N: amplitudes A_0..A_N */
  double alpha;   /* admissibility exponent; <= 0 for the default */
  int workers;
} kamqm_quasimode_options;

KAMQM_API void kamqm_quasimode_options_init(kamqm_quasimode_options* opt);

typedef struct kamqm_quasimode_record {
  int label[2];
  double k[2];
  double hbar;
  int order;
  double energy;             /* sum hbar^j E_j */
  double residual;           /* ||(H(k) - E) psi|| */
  double transport_residual;
  int matched;               /* nearest band index */
  double matched_energy;
  double distance;           /* |E_n - E| */
  double overlap;            /* |<psi_n, psi>| */
  double mu;                 /* gap from E to the rest of the spectrum */
  int simple;                /* one eigenvalue in E +- hbar^2 */
  int spectral_ok;           /* distance <= residual */
  int eq1_ok;                /* ||psi - psi_n|| <= 2 residual / mu */
} kamqm_quasimode_record;

typedef struct kamqm_quasimodes kamqm_quasimodes;

/* Quasimodes on every admissible action hbar (l* + k) of the family,
 * compared against the band spectrum of H(k). */
KAMQM_API int kamqm_quasimodes_build(const kamqm_family* f, double hbar, const double* k,
                                     const kamqm_quasimode_options* opt, kamqm_quasimodes** out);
KAMQM_API void kamqm_quasimodes_free(kamqm_quasimodes* q);
KAMQM_API size_t kamqm_quasimodes_admissible(const kamqm_quasimodes* q);
KAMQM_API size_t kamqm_quasimodes_count(const kamqm_quasimodes* q);
KAMQM_API int kamqm_quasimodes_get(const kamqm_quasimodes* q, size_t i, kamqm_quasimode_record* out);
KAMQM_API size_t kamqm_quasimodes_skipped(const kamqm_quasimodes* q);
/* Label (d ints) and reason of the i-th member without a quasimode. The
 * reason string lives as long as q. */
KAMQM_API int kamqm_quasimodes_skipped_get(const kamqm_quasimodes* q, size_t i, int* label, const char** reason);

/* ---- high-energy sweep ------------------------------------------------- */

typedef struct kamqm_sweep_options {
  double delta;        /* I = [(1 - delta) E, (1 + delta) E] */
  int k_grid;
  size_t samples;      /* classical samples (at the first energy) */
  int scale_samples;   /* nonzero: samples * E / E_0 at energy E */
  uint64_t seed;
  kamqm_classical_options classical;
  int workers;
} kamqm_sweep_options;

KAMQM_API void kamqm_sweep_options_init(kamqm_sweep_options* opt);

typedef struct kamqm_sweep_cell {
  double energy;
  double hbar;
  double discrepancy;
  double mc_error;
  double wasserstein;
  double mass_q;
  double mass_c;
  double unconverged_fraction;
  int ok;
} kamqm_sweep_cell;

typedef struct kamqm_sweep kamqm_sweep;

/* hbars holds hbar_counts[i] values for energy i, concatenated. */
KAMQM_API int kamqm_sweep_run(const kamqm_potential* v, const double* energies, size_t n_energies,
                              const double* hbars, const size_t* hbar_counts, const kamqm_sweep_options* opt,
                              kamqm_sweep** out);
KAMQM_API void kamqm_sweep_free(kamqm_sweep* s);
KAMQM_API size_t kamqm_sweep_cells(const kamqm_sweep* s);
KAMQM_API int kamqm_sweep_cell_get(const kamqm_sweep* s, size_t i, kamqm_sweep_cell* out);
/* max/min over E of discrepancy(E) sqrt(E), and the log-log slope. */
KAMQM_API int kamqm_sweep_summary(const kamqm_sweep* s, double* scaled_ratio, double* slope);
/* Table "E hbar discrepancy mass_q mass_c unconverged_fraction ..." and
 * plot columns; either path may be NULL. */
KAMQM_API int kamqm_sweep_write(const kamqm_sweep* s, const char* table_path, const char* plot_path);

#ifdef __cplusplus
}
#endif

#endif
