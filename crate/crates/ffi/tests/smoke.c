#include <math.h>
#include <stdio.h>
#include <string.h>

#include "pbnet.h"

#define CHECK(expr)                                                      \
  do {                                                                   \
    PbnetStatus s_ = (expr);                                             \
    if (s_ != PBNET_STATUS_OK) {                                         \
      char msg_[256];                                                    \
      pbnet_last_error_message(msg_, sizeof msg_);                       \
      fprintf(stderr, "%s failed (%d): %s\n", #expr, (int)s_, msg_);     \
      return 1;                                                          \
    }                                                                    \
  } while (0)

int main(void) {
  PbnetProblem *problem = NULL;
  PbnetParams *params = NULL;
  size_t m, n, layers, peak = 0;
  double x[10] = {0, 0, 0, 1.2, 0, 0, 0, 0, 0, 0};
  double xhat[10];
  double grad[70];
  double loss = -1.0;

  CHECK(pbnet_problem_from_json("{\"n_layers\": 40}", &problem));
  CHECK(pbnet_problem_dims(problem, &m, &n, &layers));
  if (m != 7 || n != 10 || layers != 40) return 2;
  CHECK(pbnet_params_init(problem, 3, &params));
  CHECK(pbnet_reconstruct(problem, params, x, n, xhat));
  CHECK(pbnet_sample_gradient(problem, params, x, n, PBNET_ENGINE_CHECKPOINT, 4,
                              &loss, grad, m * n, &peak));
  if (!(loss >= 0.0) || peak != 4) return 3;

  if (pbnet_problem_from_json("{\"m\": ", &problem) != PBNET_STATUS_CONFIG) return 4;
  if (pbnet_last_error_message(NULL, 0) == 0) return 5;

  pbnet_params_free(params);
  pbnet_problem_free(problem);
  printf("pbnet %s ok loss=%g\n", pbnet_version(), loss);
  return 0;
}
