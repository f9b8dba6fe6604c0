#ifndef PINCH_ISAC_H
#define PINCH_ISAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PinchStatus {
  Ok = 0,
  NullArgument = 1,
  Utf8Error = 2,
  ParseError = 3,
  InvalidScenario = 4,
  Infeasible = 5,
  NumericalError = 6,
} PinchStatus;

/**
 * Opaque parsed scenario.
 */
typedef struct PinchScenario PinchScenario;

/**
 * Opaque optimization result.
 */
typedef struct PinchSolution PinchSolution;

/**
 * Optimizer knobs exposed over the ABI. `s_grid_len == 0` selects the
 * library default grid.
 */
typedef struct PinchRunOptions {
  uint64_t seed;
  uintptr_t mc_samples;
  double s_grid_lo;
  double s_grid_hi;
  uintptr_t s_grid_len;
  uintptr_t max_outer;
  double eps;
  bool select_by_mc;
} PinchRunOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Default options: seed 0, 100k Monte-Carlo samples, default grid.
 */
struct PinchRunOptions pinch_run_options_default(void);

/**
 * Message of the most recent failure on this thread, or NULL. The caller
 * owns the string and must pass it to `pinch_string_free`.
 */
char *pinch_last_error(void);

/**
 * Parse and validate a scenario JSON document.
 *
 * # Safety
 * `json` must be a valid NUL-terminated C string and `out` a valid
 * pointer; on `Ok` the caller owns the handle written to `*out`.
 */
enum PinchStatus pinch_scenario_parse(const char *json, struct PinchScenario **out);

/**
 * # Safety
 * `scenario` must be a handle from `pinch_scenario_parse`, not yet freed.
 */
void pinch_scenario_free(struct PinchScenario *scenario);

/**
 * Optimize one scheme ("proposed" or a baseline name) for a scenario.
 *
 * # Safety
 * `scenario` must be a live handle; `scheme` a NUL-terminated string or
 * NULL (meaning "proposed"); `options` a valid pointer or NULL for
 * defaults; `out` a valid pointer receiving an owned handle on `Ok`.
 */
enum PinchStatus pinch_optimize(const struct PinchScenario *scenario,
                                const char *scheme,
                                const struct PinchRunOptions *options,
                                struct PinchSolution **out);

/**
 * Monte-Carlo outage estimate of a solution (NaN for NULL).
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
double pinch_solution_mc_outage(const struct PinchSolution *solution);

/**
 * Minimized log Chernoff bound of a solution (NaN for NULL).
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
double pinch_solution_log_bound(const struct PinchSolution *solution);

/**
 * Full solution bundle as a JSON string (caller frees).
 *
 * # Safety
 * `solution` must be a live handle or NULL.
 */
char *pinch_solution_to_json(const struct PinchSolution *solution);

/**
 * # Safety
 * `solution` must be a handle from `pinch_optimize`, not yet freed.
 */
void pinch_solution_free(struct PinchSolution *solution);

/**
 * # Safety
 * `s` must be a string returned by this library, not yet freed.
 */
void pinch_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PINCH_ISAC_H */
