#ifndef PME_LAB_H
#define PME_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PME_OK 0

#define PME_ERR_NULL 1

#define PME_ERR_INVALID 2

#define PME_ERR_CONFIG 3

#define PME_ERR_NUMERICAL 4

#define PME_ERR_IO 5

#define PME_ERR_UTF8 6

#define PME_ERR_BUFFER 7

#define PME_ERR_PANIC 8

/**
 * Opaque run configuration.
 */
typedef struct PmeConfig PmeConfig;

/**
 * Opaque finished run holding its in-memory artifacts.
 */
typedef struct PmeRun PmeRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pme_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must hold `len` writable bytes; `needed` may be null.
 */
int pme_last_error(char *buf, size_t len, size_t *needed);

/**
 * Parses a TOML configuration.
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
int pme_config_from_toml(const char *src, struct PmeConfig **out);

/**
 * Loads a named preset.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
int pme_config_preset(const char *name, struct PmeConfig **out);

/**
 * Serializes a configuration back to TOML.
 *
 * # Safety
 * `cfg` must come from this library; `buf` must hold `len` bytes.
 */
int pme_config_to_toml(const struct PmeConfig *cfg, char *buf, size_t len, size_t *needed);

/**
 * Releases a configuration; null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void pme_config_free(struct PmeConfig *cfg);

/**
 * Executes the configured experiment in memory.
 *
 * # Safety
 * `cfg` must come from this library and `out` be a valid pointer.
 */
int pme_run_execute(const struct PmeConfig *cfg, struct PmeRun **out);

/**
 * Writes 1 to `passed` when every enabled audit passed, else 0.
 *
 * # Safety
 * `run` must come from this library and `passed` be a valid pointer.
 */
int pme_run_passed(const struct PmeRun *run, int *passed);

/**
 * Copies the one-line run summary into `buf`.
 *
 * # Safety
 * `run` must come from this library; `buf` must hold `len` bytes.
 */
int pme_run_summary(const struct PmeRun *run, char *buf, size_t len, size_t *needed);

/**
 * Copies the artifact `name` (a CSV, JSON or text file) into `buf`.
 *
 * # Safety
 * `run` must come from this library, `name` be NUL-terminated, `buf` hold `len` bytes.
 */
int pme_run_artifact(const struct PmeRun *run,
                     const char *name,
                     char *buf,
                     size_t len,
                     size_t *needed);

/**
 * Writes the artifacts and `manifest.json` under `dir`.
 *
 * # Safety
 * Both handles must come from this library and `dir` be NUL-terminated.
 */
int pme_run_write(const struct PmeRun *run, const struct PmeConfig *cfg, const char *dir);

/**
 * Releases a run; null is ignored.
 *
 * # Safety
 * `run` must come from this library and not be used afterwards.
 */
void pme_run_free(struct PmeRun *run);

/**
 * Speed exponent `min{2, 1 + (d(q−1)+q)/(d(m−1)+q)}`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
int pme_lambda_q(double m, double q, uint32_t d, double *out);

/**
 * Writes 1 to `admissible` when `(q1, q2)` satisfies the theorem's hypotheses.
 * `theorem` is a code such as `"T2.1(i)"`; `q1`/`q2` may be `INFINITY`.
 *
 * # Safety
 * `theorem` must be NUL-terminated and `admissible` a valid pointer.
 */
int pme_theorem_admissible(const char *theorem,
                           double m,
                           double q,
                           uint32_t d,
                           double q1,
                           double q2,
                           int *admissible);

/**
 * `W_p` between two cell densities on `n` equal cells of `[lower, upper]`.
 * Both inputs are normalized to unit mass first.
 *
 * # Safety
 * `mu` and `nu` must point to `n` values each; `out` must be valid.
 */
int pme_wasserstein_1d(double lower,
                       double upper,
                       size_t n,
                       const double *mu,
                       const double *nu,
                       double p,
                       double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PME_LAB_H */
