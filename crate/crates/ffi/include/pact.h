#ifndef PACT_H
#define PACT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PactStatus {
  PACT_STATUS_OK = 0,
  PACT_STATUS_NULL_POINTER = 1,
  PACT_STATUS_INVALID_UTF8 = 2,
  PACT_STATUS_CONFIG = 3,
  PACT_STATUS_DOMAIN = 4,
  PACT_STATUS_FORMAT = 5,
  PACT_STATUS_NUMERICAL = 6,
  PACT_STATUS_IO = 7,
  PACT_STATUS_BUFFER_SIZE = 8,
  PACT_STATUS_PANIC = 9,
} PactStatus;

/**
 * Resolved run configuration.
 */
typedef struct PactConfig PactConfig;

/**
 * Two-dimensional raster with its grid geometry.
 */
typedef struct PactRaster PactRaster;

/**
 * Recorded channel data from a transducer ring.
 */
typedef struct PactSignals PactSignals;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread, or null.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *pact_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pact_version(void);

/**
 * Sound speed of pure water (m/s) at `celsius`.
 *
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum PactStatus pact_water_sos(double celsius, double *out);

/**
 * Build a configuration from an optional TOML document (null for defaults).
 *
 * # Safety
 * `toml` must be null or a NUL-terminated string; `out` must be valid.
 */
enum PactStatus pact_config_new(const char *toml, struct PactConfig **out);

/**
 * Override one key; `value` is parsed as a TOML value.
 *
 * # Safety
 * `cfg` must come from `pact_config_new`; strings must be NUL-terminated.
 */
enum PactStatus pact_config_set(struct PactConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must be null or come from `pact_config_new`, and is not used again.
 */
void pact_config_free(struct PactConfig *cfg);

/**
 * Raster of `width` by `height` pixels at `pitch` mm, centered on the
 * origin and filled with `fill`.
 *
 * # Safety
 * `out` must be valid.
 */
enum PactStatus pact_raster_new(size_t width,
                                size_t height,
                                double pitch,
                                double fill,
                                struct PactRaster **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum PactStatus pact_raster_load(const char *path, struct PactRaster **out);

/**
 * # Safety
 * `raster` must be a live handle; `path` must be NUL-terminated.
 */
enum PactStatus pact_raster_save(const struct PactRaster *raster, const char *path);

/**
 * Width, height and pitch of a raster; any out-pointer may be null.
 *
 * # Safety
 * `raster` must be a live handle; non-null out-pointers must be valid.
 */
enum PactStatus pact_raster_shape(const struct PactRaster *raster,
                                  size_t *width,
                                  size_t *height,
                                  double *pitch);

/**
 * Copy the row-major pixel values into `buf`, which must hold exactly
 * `width * height` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum PactStatus pact_raster_read(const struct PactRaster *raster, double *buf, size_t len);

/**
 * Overwrite the pixel values from `buf` (row-major, `width * height`).
 *
 * # Safety
 * `buf` must point to `len` readable doubles.
 */
enum PactStatus pact_raster_write(struct PactRaster *raster, const double *buf, size_t len);

/**
 * # Safety
 * `raster` must be null or a live handle, and is not used again.
 */
void pact_raster_free(struct PactRaster *raster);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum PactStatus pact_signals_load(const char *path, struct PactSignals **out);

/**
 * # Safety
 * `signals` must be a live handle; `path` must be NUL-terminated.
 */
enum PactStatus pact_signals_save(const struct PactSignals *signals, const char *path);

/**
 * Channel count and samples per channel; either out-pointer may be null.
 *
 * # Safety
 * `signals` must be a live handle; non-null out-pointers must be valid.
 */
enum PactStatus pact_signals_shape(const struct PactSignals *signals,
                                   size_t *channels,
                                   size_t *samples);

/**
 * # Safety
 * `signals` must be null or a live handle, and is not used again.
 */
void pact_signals_free(struct PactSignals *signals);

/**
 * Generate the configured built-in phantom and simulate its signals.
 * `pressure` and `sos` may be null when those rasters are not wanted.
 *
 * # Safety
 * `cfg` must be a live handle; out-pointers must be valid or null as noted.
 */
enum PactStatus pact_simulate(const struct PactConfig *cfg,
                              struct PactSignals **signals,
                              struct PactRaster **pressure,
                              struct PactRaster **sos);

/**
 * Delay-and-sum image on the configured grid at uniform SOS `v0` (m/s)
 * and extra delay `delay` (mm).
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum PactStatus pact_das(const struct PactConfig *cfg,
                         const struct PactSignals *signals,
                         double v0,
                         double delay,
                         struct PactRaster **out);

/**
 * Multichannel deconvolution of the configured DAS stack with a known SOS map.
 *
 * # Safety
 * Handles must be live; `out` must be valid.
 */
enum PactStatus pact_deconvolve(const struct PactConfig *cfg,
                                const struct PactSignals *signals,
                                const struct PactRaster *sos,
                                struct PactRaster **out);

/**
 * Joint reconstruction of the image and the SOS map. `sos` may be null.
 *
 * # Safety
 * Handles must be live; `image` must be valid, `sos` valid or null.
 */
enum PactStatus pact_joint_reconstruct(const struct PactConfig *cfg,
                                       const struct PactSignals *signals,
                                       struct PactRaster **image,
                                       struct PactRaster **sos);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACT_H */
