#ifndef ABC_H
#define ABC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AbcStatus {
  ABC_STATUS_OK = 0,
  ABC_STATUS_INVALID_ARGUMENT = 1,
  ABC_STATUS_DISCONNECTED = 2,
  ABC_STATUS_SHAPE = 3,
  ABC_STATUS_SPECTRAL = 4,
  ABC_STATUS_EXACT_CONSENSUS = 5,
  ABC_STATUS_DIVERGED = 6,
  ABC_STATUS_SINGULAR = 7,
  ABC_STATUS_ORACLE = 8,
  ABC_STATUS_PARSE = 9,
  ABC_STATUS_IO = 10,
  ABC_STATUS_JSON = 11,
  ABC_STATUS_NULL_POINTER = 12,
  /**
   * A Rust panic was caught at the boundary.
   */
  ABC_STATUS_PANIC = 13,
} AbcStatus;

typedef enum AbcWhich {
  ABC_WHICH_A = 0,
  ABC_WHICH_B = 1,
  ABC_WHICH_C = 2,
} AbcWhich;

typedef enum AbcAssumption {
  ABC_ASSUMPTION_LINEAR_G0 = 0,
  ABC_ASSUMPTION_LINEAR_G = 1,
  ABC_ASSUMPTION_SUBLINEAR_G0 = 2,
  ABC_ASSUMPTION_SUBLINEAR_PROX = 3,
} AbcAssumption;

typedef enum AbcRateMode {
  ABC_RATE_MODE_G0 = 0,
  ABC_RATE_MODE_G = 1,
} AbcRateMode;

typedef enum AbcVariant {
  ABC_VARIANT_ABC = 0,
  ABC_VARIANT_ELIMINATED = 1,
  ABC_VARIANT_SUBLINEAR_PROX = 2,
  ABC_VARIANT_UNDERLINE = 3,
} AbcVariant;

typedef enum AbcStopMetric {
  /**
   * Distance to the oracle solution; needs `x_star`.
   */
  ABC_STOP_METRIC_ERR_OPT = 0,
  ABC_STOP_METRIC_MERIT_AVG = 1,
  ABC_STOP_METRIC_MERIT_LAST = 2,
  /**
   * `‖Z^{k+1} − Z^k‖`; needs no oracle.
   */
  ABC_STOP_METRIC_FIXED_POINT = 3,
} AbcStopMetric;

typedef enum AbcOutcome {
  ABC_OUTCOME_CONVERGED = 0,
  ABC_OUTCOME_MAX_ITERS = 1,
  ABC_OUTCOME_DIVERGED = 2,
} AbcOutcome;

typedef struct AbcGossip AbcGossip;

typedef struct AbcGraph AbcGraph;

typedef struct AbcProblem AbcProblem;

typedef struct AbcRun AbcRun;

/**
 * A weight-matrix triple `(A, B, C)`.
 */
typedef struct AbcWeights AbcWeights;

typedef struct AbcSpectral {
  /**
   * `λ_max(W − J)`.
   */
  double rho_com;
  /**
   * `max |λ(W − J)|`.
   */
  double mixing_radius;
  double lambda_second;
  double lambda_min;
} AbcSpectral;

typedef struct AbcElasticNetParams {
  uint64_t seed;
  double omega;
  size_t m;
  size_t r;
  size_t d;
  double rho;
  double lambda;
  double sparsity;
  double noise_var;
} AbcElasticNetParams;

typedef struct AbcRate {
  double gamma;
  double gamma_star;
  double q_sq;
  double lambda_term;
  double optimization_term;
  double consensus_term;
  double delta;
  bool network_bound;
  bool feasible;
} AbcRate;

typedef struct AbcTradeoff {
  double rho_com;
  double rho_opt;
  size_t k_plain;
  size_t k_chebyshev;
  double theta;
  double c;
  double rho_c;
} AbcTradeoff;

typedef struct AbcStop {
  size_t max_iters;
  double tol;
  enum AbcStopMetric metric;
  bool run_to_cap;
} AbcStop;

/**
 * Optional columns are NaN when not recorded.
 */
typedef struct AbcTraceRow {
  size_t k;
  size_t grad_evals;
  size_t comm_rounds;
  double err_opt;
  double err_consensus;
  double merit;
  double objective;
} AbcTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *abc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *abc_version(void);

/**
 * Connected G(m, p) graph; resamples with seeds `seed, seed+1, …`.
 * `retries` may be NULL.
 *
 * # Safety
 * `out` must be writable; `retries` must be NULL or writable.
 */
enum AbcStatus abc_graph_erdos_renyi(size_t m,
                                     double p,
                                     uint64_t seed,
                                     size_t max_retries,
                                     struct AbcGraph **out,
                                     size_t *retries);

/**
 * `shape` is one of `path`, `ring`, `complete`, `star`.
 *
 * # Safety
 * `shape` must be a NUL-terminated string; `out` must be writable.
 */
enum AbcStatus abc_graph_named(const char *shape, size_t m, struct AbcGraph **out);

/**
 * Parses edge-list text: the node count on the first line, then one
 * 0-based `i j` pair per line.
 *
 * # Safety
 * `edges` must be a NUL-terminated string; `out` must be writable.
 */
enum AbcStatus abc_graph_from_edge_list(const char *edges, struct AbcGraph **out);

/**
 * Number of agents, or 0 for NULL.
 *
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t abc_graph_num_agents(const struct AbcGraph *g);

/**
 * Number of undirected edges, or 0 for NULL.
 *
 * # Safety
 * `g` must be NULL or a live graph handle.
 */
size_t abc_graph_num_edges(const struct AbcGraph *g);

/**
 * # Safety
 * `g` must be NULL or a handle not yet freed.
 */
void abc_graph_free(struct AbcGraph *g);

/**
 * Metropolis–Hastings weights; `lazy` returns `(I + W)/2`.
 *
 * # Safety
 * `g` must be a live graph handle; `out` must be writable.
 */
enum AbcStatus abc_gossip_metropolis(const struct AbcGraph *g, bool lazy, struct AbcGossip **out);

/**
 * `W^k` (`chebyshev = false`) or the Chebyshev filter `P_k(W)`.
 *
 * # Safety
 * `w` must be a live gossip handle; `out` must be writable.
 */
enum AbcStatus abc_gossip_filter(const struct AbcGossip *w,
                                 size_t k,
                                 bool chebyshev,
                                 struct AbcGossip **out);

/**
 * # Safety
 * `w` must be a live gossip handle; `out` must be writable.
 */
enum AbcStatus abc_gossip_spectral(const struct AbcGossip *w, struct AbcSpectral *out);

/**
 * Copies `W` row-major into `buf` (`len` must be `m·m`).
 *
 * # Safety
 * `w` must be a live gossip handle; `buf` must hold `len` doubles.
 */
enum AbcStatus abc_gossip_entries(const struct AbcGossip *w, double *buf, size_t len);

/**
 * # Safety
 * `w` must be NULL or a handle not yet freed.
 */
void abc_gossip_free(struct AbcGossip *w);

/**
 * Default elastic-net generator settings (`m = 50`, `d = 40`, …).
 */
struct AbcElasticNetParams abc_elastic_net_default_params(void);

/**
 * # Safety
 * `params` must point to a valid struct; `out` must be writable.
 */
enum AbcStatus abc_problem_elastic_net(const struct AbcElasticNetParams *params,
                                       struct AbcProblem **out);

/**
 * Logistic regression on Ionosphere; `path` NULL uses the bundled copy.
 * `lambda > 0` adds a network-wide `λ‖x‖₁`.
 *
 * # Safety
 * `path` must be NULL or a NUL-terminated string; `out` must be writable.
 */
enum AbcStatus abc_problem_logistic(const char *path,
                                    double alpha,
                                    size_t agents,
                                    size_t per_agent,
                                    double lambda,
                                    struct AbcProblem **out);

/**
 * # Safety
 * `p` must be a live problem handle; `m` and `d` must be writable.
 */
enum AbcStatus abc_problem_dims(const struct AbcProblem *p, size_t *m, size_t *d);

/**
 * `L = max_i L_i`, `μ = min_i μ_i`.
 *
 * # Safety
 * `p` must be a live problem handle; `l` and `mu` must be writable.
 */
enum AbcStatus abc_problem_constants(const struct AbcProblem *p, double *l, double *mu);

/**
 * # Safety
 * `p` must be NULL or a handle not yet freed.
 */
void abc_problem_free(struct AbcProblem *p);

/**
 * Centralized solution; `x_star` receives `d` values. `residual` may be NULL.
 *
 * # Safety
 * `p` must be a live problem handle; `x_star` must hold `len` doubles.
 */
enum AbcStatus abc_oracle_solve(const struct AbcProblem *p,
                                double tol,
                                size_t max_iters,
                                double *x_star,
                                size_t len,
                                double *residual);

/**
 * Builds a preset by name (`extra`, `nids`, `augdgm`, `diging`,
 * `jakovetic_b0[:b]`, `jakovetic_bw[:b]`, `mansoori:K`, `alghunaim:α`).
 * `gamma` is read only by presets that depend on it; pass NaN otherwise.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `w` a live gossip handle; `out`
 * writable.
 */
enum AbcStatus abc_weights_preset(const char *name,
                                  const struct AbcGossip *w,
                                  double gamma,
                                  struct AbcWeights **out);

/**
 * `A = B = F`, `C = I − F`, `D = I` for a filtered gossip matrix `F`.
 *
 * # Safety
 * `f` must be a live gossip handle; `out` must be writable.
 */
enum AbcStatus abc_weights_from_filter(const struct AbcGossip *f, struct AbcWeights **out);

/**
 * Copies `A`, `B` or `C` row-major (`len` must be `m·m`).
 *
 * # Safety
 * `wts` must be a live weights handle; `buf` must hold `len` doubles.
 */
enum AbcStatus abc_weights_matrix(const struct AbcWeights *wts,
                                  enum AbcWhich which,
                                  double *buf,
                                  size_t len);

/**
 * Checks an assumption set; `passed` receives the verdict. The clause-level
 * report is returned as JSON by [`abc_weights_validate_json`].
 *
 * # Safety
 * `wts` must be a live weights handle; `passed` must be writable.
 */
enum AbcStatus abc_weights_validate(const struct AbcWeights *wts,
                                    double gamma,
                                    double l,
                                    double mu,
                                    enum AbcAssumption mode,
                                    bool *passed);

/**
 * Clause-level validation report as a newly allocated JSON string; free it
 * with [`abc_string_free`].
 *
 * # Safety
 * `wts` must be a live weights handle; `out` must be writable.
 */
enum AbcStatus abc_weights_validate_json(const struct AbcWeights *wts,
                                         double gamma,
                                         double l,
                                         double mu,
                                         enum AbcAssumption mode,
                                         char **out);

/**
 * # Safety
 * `wts` must be NULL or a handle not yet freed.
 */
void abc_weights_free(struct AbcWeights *wts);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void abc_string_free(char *s);

/**
 * `γ*(D) = 2λ_min(D)/(L + μλ_min(D))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AbcStatus abc_gamma_star(double lambda_min_d, double l, double mu, double *out);

/**
 * Linear-rate certificate for the given weights and stepsize.
 *
 * # Safety
 * `wts` must be a live weights handle; `out` must be writable.
 */
enum AbcStatus abc_rate(const struct AbcWeights *wts,
                        double gamma,
                        double l,
                        double mu,
                        enum AbcRateMode mode,
                        struct AbcRate *out);

/**
 * Round counts for plain and Chebyshev-accelerated consensus.
 *
 * # Safety
 * `out` must be writable.
 */
enum AbcStatus abc_tradeoff(double rho_com, double kappa, struct AbcTradeoff *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum AbcStatus abc_predicted_marker(double kappa, double lambda_second, size_t *out);

/**
 * Runs the iteration from `Z⁰ = 0`. `x_star` (length `d`) may be NULL when
 * the stop metric is `FIXED_POINT`; with it, the error and merit columns
 * are recorded. A diverged run still returns a handle with `ABC_STATUS_OK`;
 * query [`abc_run_outcome`].
 *
 * # Safety
 * Handles must be live; `stop` must point to a valid struct; `x_star` must
 * be NULL or hold `x_star_len` doubles; `out` must be writable.
 */
enum AbcStatus abc_run(const struct AbcWeights *wts,
                       const struct AbcProblem *p,
                       double gamma,
                       enum AbcVariant variant,
                       const struct AbcStop *stop,
                       const double *x_star,
                       size_t x_star_len,
                       struct AbcRun **out);

/**
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
enum AbcStatus abc_run_outcome(const struct AbcRun *run, enum AbcOutcome *out);

/**
 * Iteration at which the tolerance was first met, or -1.
 *
 * # Safety
 * `run` must be NULL or a live run handle.
 */
int64_t abc_run_hit(const struct AbcRun *run);

/**
 * Number of recorded rows (iteration 0 included), or 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live run handle.
 */
size_t abc_run_num_rows(const struct AbcRun *run);

/**
 * # Safety
 * `run` must be a live run handle; `out` must be writable.
 */
enum AbcStatus abc_run_row(const struct AbcRun *run, size_t i, struct AbcTraceRow *out);

/**
 * Final `X` row-major (`len` must be `m·d`).
 *
 * # Safety
 * `run` must be a live run handle; `buf` must hold `len` doubles.
 */
enum AbcStatus abc_run_final_x(const struct AbcRun *run, double *buf, size_t len);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void abc_run_free(struct AbcRun *run);

/**
 * Runs an experiment from a JSON config and writes its CSVs and manifest to
 * `out_dir`. `diverged` may be NULL.
 *
 * # Safety
 * Strings must be NUL-terminated; `diverged` must be NULL or writable.
 */
enum AbcStatus abc_experiment_run(const char *config_json, const char *out_dir, bool *diverged);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABC_H */
