#ifndef FAKER_H
#define FAKER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FakerStatus {
  FAKER_STATUS_OK = 0,
  FAKER_STATUS_NULL_POINTER = -1,
  FAKER_STATUS_INVALID_UTF8 = -2,
  /**
   * The configuration JSON was malformed or failed validation.
   */
  FAKER_STATUS_CONFIG = -3,
  /**
   * The experiment or construction itself failed.
   */
  FAKER_STATUS_FAILED = -4,
  /**
   * The output buffer is shorter than required.
   */
  FAKER_STATUS_BUFFER_TOO_SMALL = -5,
  FAKER_STATUS_UNKNOWN_DEFENSE = -6,
  FAKER_STATUS_PANIC = -7,
} FakerStatus;

/**
 * A validated experiment configuration.
 */
typedef struct FakerConfig FakerConfig;

/**
 * Metrics of one finished experiment.
 */
typedef struct FakerReport FakerReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the calling thread's last failure, or null. Owned by the
 * library and valid until the thread's next call into it.
 */
const char *faker_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *faker_version(void);

/**
 * Parses and validates a configuration from JSON.
 *
 * # Safety
 *
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FakerStatus faker_config_from_json(const char *json, struct FakerConfig **out);

/**
 * Replaces the configuration's master seed.
 *
 * # Safety
 *
 * `config` must come from [`faker_config_from_json`].
 */
enum FakerStatus faker_config_set_seed(struct FakerConfig *config, uint64_t seed);

/**
 * The configuration as pretty JSON with every default filled in. Free the
 * string with [`faker_string_free`].
 *
 * # Safety
 *
 * `config` must come from [`faker_config_from_json`]; `out` must be writable.
 */
enum FakerStatus faker_config_to_json(const struct FakerConfig *config, char **out);

/**
 * # Safety
 *
 * `config` must be null or come from [`faker_config_from_json`], freed once.
 */
void faker_config_free(struct FakerConfig *config);

/**
 * Runs the configured experiment to completion.
 *
 * # Safety
 *
 * `config` must come from [`faker_config_from_json`]; `out` must be writable.
 */
enum FakerStatus faker_run(const struct FakerConfig *config, struct FakerReport **out);

/**
 * Error rate, success rate and attacker seconds per attacked round.
 * Any of the outputs may be null.
 *
 * # Safety
 *
 * `report` must come from [`faker_run`]; non-null outputs must be writable.
 */
enum FakerStatus faker_report_metrics(const struct FakerReport *report,
                                      double *er,
                                      double *sr,
                                      double *tc_seconds);

/**
 * Number of rounds the attack was active in.
 *
 * # Safety
 *
 * `report` must come from [`faker_run`]; `out` must be writable.
 */
enum FakerStatus faker_report_attacked_rounds(const struct FakerReport *report, size_t *out);

/**
 * The full report as JSON. Free the string with [`faker_string_free`].
 *
 * # Safety
 *
 * `report` must come from [`faker_run`]; `out` must be writable.
 */
enum FakerStatus faker_report_to_json(const struct FakerReport *report, char **out);

/**
 * # Safety
 *
 * `report` must be null or come from [`faker_run`], freed once.
 */
void faker_report_free(struct FakerReport *report);

/**
 * # Safety
 *
 * `s` must be null or a string returned by this library, freed once.
 */
void faker_string_free(char *s);

/**
 * Builds the poison against `defense` from the honest model `w` of length
 * `len`, with the parameters split into `groups` contiguous scalar groups.
 *
 * `w_g` is the previous global model, needed only by Krum; it may be null
 * otherwise. `n` and `m` are the client and attacker counts. The poisoned
 * model is written to `out`, which must hold `len` values.
 *
 * # Safety
 *
 * `defense` must be NUL-terminated. `w` and `out` must hold `len` values,
 * and `w_g` must be null or hold `len` values.
 */
enum FakerStatus faker_poison(const char *defense,
                              const double *w,
                              const double *w_g,
                              size_t len,
                              size_t groups,
                              size_t n,
                              size_t m,
                              uint64_t seed,
                              double *out,
                              size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAKER_H */
