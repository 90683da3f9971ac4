#ifndef ABPC_H
#define ABPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum AbpcStatus {
  ABPC_STATUS_OK = 0,
  ABPC_STATUS_NULL_POINTER = 1,
  ABPC_STATUS_INVALID_UTF8 = 2,
  ABPC_STATUS_CONFIG = 3,
  ABPC_STATUS_DIMENSION_MISMATCH = 4,
  ABPC_STATUS_NUMERICAL = 5,
  ABPC_STATUS_PANIC = 6,
} AbpcStatus;

// Opaque online controller.
typedef struct AbpcController AbpcController;

// Metrics of one closed-loop run over its control window.
typedef struct AbpcMetrics {
  double rmse;
  double iae;
  double tv_u;
  double peak_u;
  size_t window_start;
  size_t window_end;
  // Number of logged steps.
  size_t steps_run;
  // 1 when every configured step ran.
  uint8_t completed;
  // Step at which the run stopped, or 0.
  size_t failure_step;
} AbpcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *abpc_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *abpc_version(void);

// Builds a controller from a preset name or config path, optionally
// overriding the kernel (`unitary`, `linear`, `poly2`, `poly2x`, `rbf`;
// null keeps the configured one).
//
// # Safety
// `source` and a non-null `kernel` must be NUL-terminated strings; `out`
// must be writable.
enum AbpcStatus abpc_controller_from_preset(const char *source,
                                            const char *kernel,
                                            struct AbpcController **out);

// Builds a controller from TOML config text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum AbpcStatus abpc_controller_from_toml(const char *text, struct AbpcController **out);

// Releases a controller. Null is ignored.
//
// # Safety
// `h` must come from a constructor in this library and not be used again.
void abpc_controller_free(struct AbpcController *h);

// Output dimension `p`, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t abpc_controller_outputs(const struct AbpcController *h);

// Input dimension `m`, or 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t abpc_controller_inputs(const struct AbpcController *h);

// Records the applied input `u_k` (length `m`).
//
// # Safety
// `h` must be a live handle and `u` must point to `len` doubles.
enum AbpcStatus abpc_controller_push_input(struct AbpcController *h, const double *u, size_t len);

// Feeds the measured `y_k` (length `p`). When `yhat_prior` is non-null it
// receives the one-step prediction made before the update.
//
// # Safety
// `h` must be a live handle, `y` must point to `len` doubles and a
// non-null `yhat_prior` must have room for `p` doubles.
enum AbpcStatus abpc_controller_observe(struct AbpcController *h,
                                        const double *y,
                                        size_t len,
                                        double *yhat_prior);

// Computes `u_{k+1}` (written to `u_next`, length `m`) for a reference of
// length `p` held over the horizon. A non-null `cost` receives the optimal
// cost.
//
// # Safety
// `h` must be a live handle, `reference` must point to `ref_len` doubles,
// `u_next` must have room for `u_len` doubles and a non-null `cost` must
// be writable.
enum AbpcStatus abpc_controller_compute(struct AbpcController *h,
                                        const double *reference,
                                        size_t ref_len,
                                        double *u_next,
                                        size_t u_len,
                                        double *cost);

// Runs a preset (or config path) in closed loop and writes its metrics.
// `seed` and `kernel` may be null to keep the configured values. A run
// stopped by divergence or a numerical failure still returns `Ok` with
// `completed = 0`; metrics then cover the logged part of the window, or
// are NaN when nothing of it was logged.
//
// # Safety
// `source` and a non-null `kernel` must be NUL-terminated strings, a
// non-null `seed` must be readable and `out` must be writable.
enum AbpcStatus abpc_run_preset(const char *source,
                                const char *kernel,
                                const uint64_t *seed,
                                struct AbpcMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABPC_H */
