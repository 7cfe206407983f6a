/*
 * pixelgen C API: pixel-space flow-matching diffusion toolkit.
 *
 * All state lives behind the opaque pxg_config handle. Command functions
 * return PXG_OK (0) on success or an error code; pxg_last_error() returns a
 * human-readable message for the most recent failure on this thread.
 */

#ifndef PIXELGEN_H
#define PIXELGEN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PXG_OK 0
#define PXG_ERR_CONFIG 2   /* bad configuration or user input */
#define PXG_ERR_NUMERIC 3  /* numerical failure (non-finite loss, failed check) */
#define PXG_ERR_IO 4       /* filesystem or malformed-file failure */
#define PXG_ERR_INTERNAL 5 /* contract violation inside the library */

typedef struct pxg_config pxg_config;

typedef struct pxg_metrics {
    double frechet;
    double precision;
    double recall;
    int32_t n_real;
    int32_t n_gen;
    int32_t k;
} pxg_metrics;

/* configuration ----------------------------------------------------------- */

pxg_config* pxg_config_new(void);
void pxg_config_free(pxg_config* cfg);

/* Parse a flat `key = value` file ('#' comments). */
int pxg_config_load_file(pxg_config* cfg, const char* path);

int pxg_config_set(pxg_config* cfg, const char* key, const char* value);

/* Copy the current value of `key` into buf; returns PXG_OK or an error. */
int pxg_config_get(const pxg_config* cfg, const char* key, char* buf, size_t buf_size);

/* 1 if the key was explicitly set (file or pxg_config_set), 0 if default,
 * negative on unknown key. */
int pxg_config_is_set(const pxg_config* cfg, const char* key);

/* Newline-separated list of every key with default and description. */
const char* pxg_config_help(void);

/* Number of known keys / key name by index (for iteration). */
size_t pxg_config_key_count(void);
const char* pxg_config_key_name(size_t index);

/* commands ----------------------------------------------------------------- */

/* Train per config; writes final.ckpt, ema.ckpt, metrics.csv and sample
 * grids into out_dir. */
int pxg_train(const pxg_config* cfg);

/* Load the EMA checkpoint named by `ckpt` and write a sample grid. */
int pxg_sample(const pxg_config* cfg);

/* Evaluate the checkpoint named by `ckpt`; fills *out and writes a CSV row
 * and text report into out_dir. */
int pxg_eval(const pxg_config* cfg, pxg_metrics* out);

/* Gradient finite-difference suite, solver-order suite, and invariant spot
 * checks (64-bit mode). Returns PXG_ERR_NUMERIC if any check fails. */
int pxg_check(const pxg_config* cfg);

/* diagnostics --------------------------------------------------------------- */

const char* pxg_last_error(void);
const char* pxg_version(void);

#ifdef __cplusplus
}
#endif

#endif /* PIXELGEN_H */
