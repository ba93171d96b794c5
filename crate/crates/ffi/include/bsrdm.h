#ifndef BSRDM_H
#define BSRDM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsrdmStatus {
  BSRDM_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or out-of-range argument.
   */
  BSRDM_STATUS_INVALID_ARGUMENT = 1,
  BSRDM_STATUS_IO = 2,
  BSRDM_STATUS_DIMENSION = 3,
  BSRDM_STATUS_VALIDATION = 4,
  /**
   * The solver produced non-finite values.
   */
  BSRDM_STATUS_DIVERGENCE = 5,
  BSRDM_STATUS_DEGENERATE_KERNEL = 6,
  BSRDM_STATUS_INTERNAL = 7,
} BsrdmStatus;

/**
 * Image with `channels × height × width` values in [0, 1].
 */
typedef struct BsrdmImage BsrdmImage;

typedef struct BsrdmKernel BsrdmKernel;

/**
 * Solver settings. `patch == 0` means one shared noise variance for the
 * whole image; otherwise it is the odd side of the variance window.
 */
typedef struct BsrdmSolverConfig {
  uint32_t scale;
  double rho;
  double gamma;
  uint32_t patch;
  double lr_net;
  double lr_kernel;
  uint32_t langevin_steps;
  double langevin_delta;
  uint32_t iterations;
  uint64_t seed;
} BsrdmSolverConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *bsrdm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bsrdm_version(void);

/**
 * Copies `channels × height × width` values (channel-major) into a new image.
 *
 * # Safety
 * `data` must point to that many readable doubles; `out` must be writable.
 */
enum BsrdmStatus bsrdm_image_new(size_t channels,
                                 size_t height,
                                 size_t width,
                                 const double *data,
                                 struct BsrdmImage **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BsrdmStatus bsrdm_image_read_png(const char *path, struct BsrdmImage **out);

/**
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
enum BsrdmStatus bsrdm_image_write_png(const struct BsrdmImage *image, const char *path);

/**
 * # Safety
 * `image` must be a live handle; the output pointers must be writable.
 */
enum BsrdmStatus bsrdm_image_dims(const struct BsrdmImage *image,
                                  size_t *channels,
                                  size_t *height,
                                  size_t *width);

/**
 * Copies the image values into `dst`, which must hold exactly
 * `channels × height × width` doubles.
 *
 * # Safety
 * `image` must be a live handle; `dst` must be writable for `len` doubles.
 */
enum BsrdmStatus bsrdm_image_copy(const struct BsrdmImage *image, double *dst, size_t len);

/**
 * # Safety
 * `image` must come from this library and not be used afterwards. Null is ignored.
 */
void bsrdm_image_free(struct BsrdmImage *image);

/**
 * Kernel of side `2·radius + 1` from the Cholesky entries of its precision matrix.
 *
 * # Safety
 * `out` must be writable.
 */
enum BsrdmStatus bsrdm_kernel_generate(double q11,
                                       double q21,
                                       double q22,
                                       size_t radius,
                                       struct BsrdmKernel **out);

/**
 * # Safety
 * `kernel` must be a live handle.
 */
size_t bsrdm_kernel_side(const struct BsrdmKernel *kernel);

/**
 * Copies the `side × side` kernel values row by row into `dst`.
 *
 * # Safety
 * `kernel` must be a live handle; `dst` must be writable for `len` doubles.
 */
enum BsrdmStatus bsrdm_kernel_copy(const struct BsrdmKernel *kernel, double *dst, size_t len);

/**
 * # Safety
 * `kernel` must come from this library and not be used afterwards. Null is ignored.
 */
void bsrdm_kernel_free(struct BsrdmKernel *kernel);

struct BsrdmSolverConfig bsrdm_solver_config_default(void);

/**
 * Super-resolves `lr`, returning the HR estimate and the estimated kernel.
 * Either output pointer may be null if that result is not wanted.
 *
 * # Safety
 * `lr` and `config` must be valid; non-null outputs must be writable.
 */
enum BsrdmStatus bsrdm_super_resolve(const struct BsrdmImage *lr,
                                     const struct BsrdmSolverConfig *config,
                                     struct BsrdmImage **hr_out,
                                     struct BsrdmKernel **kernel_out);

/**
 * Degrades `hr` according to a JSON degradation spec (the `degradation`
 * object of the CLI run config; `"{}"` selects the defaults).
 *
 * # Safety
 * `hr` must be a live handle, `spec_json` a NUL-terminated string and `out` writable.
 */
enum BsrdmStatus bsrdm_degrade(const struct BsrdmImage *hr,
                               const char *spec_json,
                               struct BsrdmImage **out);

/**
 * PSNR on luminance in dB, excluding `crop_border` pixels per side.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum BsrdmStatus bsrdm_psnr(const struct BsrdmImage *a,
                            const struct BsrdmImage *b,
                            size_t crop_border,
                            double *out);

/**
 * SSIM on luminance, excluding `crop_border` pixels per side.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum BsrdmStatus bsrdm_ssim(const struct BsrdmImage *a,
                            const struct BsrdmImage *b,
                            size_t crop_border,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSRDM_H */
