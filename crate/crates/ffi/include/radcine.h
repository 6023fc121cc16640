#ifndef RADCINE_H
#define RADCINE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RadcineStatus {
  RADCINE_STATUS_OK = 0,
  RADCINE_STATUS_NULL_POINTER = 1,
  RADCINE_STATUS_INVALID_ARGUMENT = 2,
  RADCINE_STATUS_CONFIG = 3,
  RADCINE_STATUS_IO = 4,
  RADCINE_STATUS_NUMERICAL = 5,
  RADCINE_STATUS_PANIC = 6,
  RADCINE_STATUS_OTHER = 7,
} RadcineStatus;

// Opaque pipeline configuration.
typedef struct RadcineConfig RadcineConfig;

// Opaque NUFFT plan.
typedef struct RadcineNufft RadcineNufft;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *radcine_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes, 0 if none.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t radcine_last_error(char *buf, size_t len);

// Plans a NUFFT for an `n x n` image at `n_samples` k-space points given as
// `(ky, kx)` pairs in cycles per pixel.
//
// # Safety
// `coords` must hold `2 * n_samples` doubles; `out` must be a valid pointer.
enum RadcineStatus radcine_nufft_new(size_t n,
                                     const double *coords,
                                     size_t n_samples,
                                     double oversampling,
                                     size_t width,
                                     struct RadcineNufft **out);

// # Safety
// `plan` must come from [`radcine_nufft_new`] and not be used afterwards.
void radcine_nufft_free(struct RadcineNufft *plan);

// Image size and sample count of a plan.
//
// # Safety
// `plan` must be a live plan; the out pointers may be null.
enum RadcineStatus radcine_nufft_dims(const struct RadcineNufft *plan,
                                      size_t *n,
                                      size_t *n_samples);

// Forward transform of an `n x n` complex image into `n_samples` values.
//
// # Safety
// `image` holds `2 n^2` doubles and `samples` room for `2 n_samples`.
enum RadcineStatus radcine_nufft_forward(const struct RadcineNufft *plan,
                                         const double *image,
                                         double *samples);

// Adjoint transform; `weights` (one per sample) may be null.
//
// # Safety
// `samples` holds `2 n_samples` doubles, `weights` is null or holds
// `n_samples`, `image` has room for `2 n^2`.
enum RadcineStatus radcine_nufft_adjoint(const struct RadcineNufft *plan,
                                         const double *samples,
                                         const double *weights,
                                         double *image);

// Default pipeline configuration for an `n x n` phantom.
//
// # Safety
// `out` must be a valid pointer.
enum RadcineStatus radcine_config_new(size_t n, struct RadcineConfig **out);

// Reads a JSON or key-value configuration file.
//
// # Safety
// `path` is a NUL-terminated string; `out` must be a valid pointer.
enum RadcineStatus radcine_config_from_file(const char *path, struct RadcineConfig **out);

// # Safety
// `cfg` must be a live configuration.
enum RadcineStatus radcine_config_set_seed(struct RadcineConfig *cfg, uint64_t seed);

// Replaces the undersampling factors.
//
// # Safety
// `cfg` must be a live configuration and `r` hold `len` doubles.
enum RadcineStatus radcine_config_set_r_values(struct RadcineConfig *cfg,
                                               const double *r,
                                               size_t len);

// # Safety
// `cfg` must come from a `radcine_config_*` constructor and not be used afterwards.
void radcine_config_free(struct RadcineConfig *cfg);

// Runs every stage into `out_dir` and writes the report.
//
// # Safety
// `cfg` must be a live configuration and `out_dir` a NUL-terminated string.
enum RadcineStatus radcine_run_pipeline(const struct RadcineConfig *cfg, const char *out_dir);

// PSNR in dB of two real arrays of `len` values, peak taken from `reference`.
//
// # Safety
// Both arrays hold `len` doubles; `out` must be valid.
enum RadcineStatus radcine_psnr(const double *reference,
                                const double *rec,
                                size_t len,
                                double *out);

// SSIM of two `rows x cols` real images.
//
// # Safety
// Both arrays hold `rows * cols` doubles; `out` must be valid.
enum RadcineStatus radcine_ssim(const double *reference,
                                const double *rec,
                                size_t rows,
                                size_t cols,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADCINE_H */
