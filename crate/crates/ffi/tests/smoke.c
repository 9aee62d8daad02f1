#include <math.h>
#include <stdio.h>

#include "abc.h"

#define CHECK(call)                                                   \
  do {                                                                \
    AbcStatus s_ = (call);                                            \
    if (s_ != ABC_STATUS_OK) {                                        \
      fprintf(stderr, "%s: %d %s\n", #call, (int)s_,                  \
              abc_last_error_message());                              \
      return 1;                                                       \
    }                                                                 \
  } while (0)

int main(void) {
  AbcGraph *g = NULL;
  AbcGossip *w = NULL;
  AbcProblem *p = NULL;
  AbcWeights *wts = NULL;
  AbcRun *run = NULL;
  AbcElasticNetParams params = abc_elastic_net_default_params();
  AbcStop stop = {5000, 1e-8, ABC_STOP_METRIC_ERR_OPT, false};
  AbcOutcome outcome;
  AbcTraceRow row;
  double l, mu, x_star[4];
  size_t retries = 0;

  CHECK(abc_graph_erdos_renyi(10, 0.5, 7, 100, &g, &retries));
  CHECK(abc_gossip_metropolis(g, false, &w));
  params.m = 10;
  params.r = 5;
  params.d = 4;
  CHECK(abc_problem_elastic_net(&params, &p));
  CHECK(abc_problem_constants(p, &l, &mu));
  CHECK(abc_oracle_solve(p, 1e-12, 100000, x_star, 4, NULL));
  CHECK(abc_weights_preset("nids", w, NAN, &wts));
  CHECK(abc_run(wts, p, 2.0 / (l + mu), ABC_VARIANT_ABC, &stop, x_star, 4, &run));
  CHECK(abc_run_outcome(run, &outcome));
  CHECK(abc_run_row(run, abc_run_num_rows(run) - 1, &row));
  if (outcome != ABC_OUTCOME_CONVERGED || !(row.err_opt <= 1e-8)) {
    fprintf(stderr, "did not converge: err %g\n", row.err_opt);
    return 1;
  }
  if (abc_graph_named("hexagon", 4, &g) == ABC_STATUS_OK) return 1;
  printf("abc %s: converged in %zu iterations\n", abc_version(), row.k);

  abc_run_free(run);
  abc_weights_free(wts);
  abc_problem_free(p);
  abc_gossip_free(w);
  abc_graph_free(g);
  return 0;
}
