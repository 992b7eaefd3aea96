#ifndef STRATPG_H
#define STRATPG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  STRATPG_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8, out-of-range index or unknown name.
   */
  STRATPG_STATUS_INVALID_ARGUMENT = 1,
  STRATPG_STATUS_CONFIG = 2,
  STRATPG_STATUS_NUMERIC = 3,
  STRATPG_STATUS_IO = 4,
  STRATPG_STATUS_FAILURE = 5,
  STRATPG_STATUS_PANIC = 6,
} StratpgStatus;

/**
 * Experiment configuration.
 */
typedef struct StratpgConfig StratpgConfig;

/**
 * Completed run of one method under one seed.
 */
typedef struct StratpgRun StratpgRun;

/**
 * Metrics of one epoch.
 */
typedef struct {
  size_t epoch;
  double policy_value;
  double pct_change;
  double move_;
  /**
   * NaN when the method has no behavior model.
   */
  double behavior_loss;
  uint64_t checksum;
} StratpgRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *stratpg_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *stratpg_version(void);

/**
 * Preset configuration for a scenario name such as `"synthetic"` or `"loan"`.
 *
 * # Safety
 * `scenario` is a nul-terminated string; `out` is writable.
 */
StratpgStatus stratpg_config_preset(const char *scenario, StratpgConfig **out);

/**
 * Parses a TOML configuration; missing keys come from the scenario preset.
 *
 * # Safety
 * `toml` is a nul-terminated string; `out` is writable.
 */
StratpgStatus stratpg_config_from_toml(const char *toml, StratpgConfig **out);

/**
 * Applies one `key=value` override. The configuration is unchanged on failure.
 *
 * # Safety
 * `config` comes from this library; `assignment` is a nul-terminated string.
 */
StratpgStatus stratpg_config_set(StratpgConfig *config, const char *assignment);

/**
 * Canonical TOML text of the configuration. Release it with [`stratpg_string_free`].
 *
 * # Safety
 * `config` comes from this library; `out` is writable.
 */
StratpgStatus stratpg_config_to_toml(const StratpgConfig *config, char **out);

/**
 * # Safety
 * `s` is null or was returned by this library and not yet freed.
 */
void stratpg_string_free(char *s);

/**
 * # Safety
 * `config` is null or was returned by this library and not yet freed.
 */
void stratpg_config_free(StratpgConfig *config);

/**
 * Runs one method (`"cutoff"`, `"vanilla"`, `"end2end"` or `"strategic"`)
 * under one seed to completion.
 *
 * # Safety
 * `config` comes from this library; `method` is a nul-terminated string; `out` is writable.
 */
StratpgStatus stratpg_run(const StratpgConfig *config,
                          const char *method,
                          uint64_t seed,
                          StratpgRun **out);

/**
 * Runs every configured (method, seed) pair and writes the result files to `out_dir`.
 *
 * # Safety
 * `config` comes from this library; `out_dir` is a nul-terminated string.
 */
StratpgStatus stratpg_run_experiment(const StratpgConfig *config, const char *out_dir);

/**
 * Number of epoch records in a run.
 *
 * # Safety
 * `run` comes from this library; `out` is writable.
 */
StratpgStatus stratpg_run_len(const StratpgRun *run, size_t *out);

/**
 * Record of epoch `index`.
 *
 * # Safety
 * `run` comes from this library; `out` is writable.
 */
StratpgStatus stratpg_run_record(const StratpgRun *run, size_t index, StratpgRecord *out);

/**
 * Best policy value over all epochs.
 *
 * # Safety
 * `run` comes from this library; `out` is writable.
 */
StratpgStatus stratpg_run_best_value(const StratpgRun *run, double *out);

/**
 * # Safety
 * `run` is null or was returned by this library and not yet freed.
 */
void stratpg_run_free(StratpgRun *run);

/**
 * Parameter count of a dense network with layer widths `dims[0..len]`.
 *
 * # Safety
 * `dims` points to `len` readable values; `out` is writable.
 */
StratpgStatus stratpg_param_count(const size_t *dims, size_t len, size_t *out);

/**
 * Runs a verification suite (`"gradients"`, `"lemma1"`, `"prop2"`,
 * `"counts"`, `"trend"` or `"all"`) and reports how many checks failed.
 *
 * # Safety
 * `suite` is a nul-terminated string; `failed` is writable.
 */
StratpgStatus stratpg_check(const char *suite, uint64_t seed, size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRATPG_H */
