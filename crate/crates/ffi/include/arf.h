#ifndef ARF_H
#define ARF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  ARF_STATUS_OK = 0,
  ARF_STATUS_NULL_POINTER = 1,
  ARF_STATUS_INVALID_ARGUMENT = 2,
  ARF_STATUS_INVALID_STATE = 3,
  ARF_STATUS_IO = 4,
  ARF_STATUS_FORMAT = 5,
  ARF_STATUS_NON_FINITE = 6,
  ARF_STATUS_PANIC = 7,
} ArfStatus;

/**
 * Opaque affine color transform.
 */
typedef struct ArfColorTransform ArfColorTransform;

/**
 * Opaque voxel radiance field.
 */
typedef struct ArfGrid ArfGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library from the same thread.
 */
const char *arf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *arf_version(void);

/**
 * Reads a grid checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
ArfStatus arf_grid_load(const char *path, ArfGrid **out);

/**
 * Grid of `dims` voxels filling the cube `[-half_extent, half_extent]³`
 * with constant density and color.
 *
 * # Safety
 * `dims` and `rgb` must point to three values and `out` must be writable.
 */
ArfStatus arf_grid_new(const size_t *dims,
                       double half_extent,
                       float density,
                       const float *rgb,
                       ArfGrid **out);

/**
 * Writes a grid checkpoint.
 *
 * # Safety
 * `grid` must come from this library and `path` be a NUL-terminated string.
 */
ArfStatus arf_grid_save(const ArfGrid *grid, const char *path);

/**
 * Voxel counts along x, y and z.
 *
 * # Safety
 * `grid` must come from this library and `out` point to three writable values.
 */
ArfStatus arf_grid_dims(const ArfGrid *grid, size_t *out);

/**
 * Renders a `width × height` view from `eye` towards `target` (world up
 * +y, vertical field of view `fov_y` in radians) into `out_rgb`, which
 * must hold `width · height · 3` floats. The default step of the grid is
 * used.
 *
 * # Safety
 * `grid` must come from this library, `eye`, `target` and `bg` must point to
 * three floats and `out_rgb` to `out_len` writable floats.
 */
ArfStatus arf_grid_render(const ArfGrid *grid,
                          const float *eye,
                          const float *target,
                          size_t width,
                          size_t height,
                          float fov_y,
                          const float *bg,
                          float *out_rgb,
                          size_t out_len);

/**
 * Releases a grid; null is ignored.
 *
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void arf_grid_free(ArfGrid *grid);

/**
 * Solves the affine map taking the color statistics of `content_pixels`
 * RGB triples to those of `style_pixels` triples.
 *
 * # Safety
 * The pixel pointers must hold `3 · count` floats each and `out` must be
 * writable.
 */
ArfStatus arf_color_transform_solve(const float *content_rgb,
                                    size_t content_pixels,
                                    const float *style_rgb,
                                    size_t style_pixels,
                                    ArfColorTransform **out);

/**
 * Maps `count` RGB triples in place, clipping to `[0, 1]`.
 *
 * # Safety
 * `t` must come from this library and `rgb` hold `3 · count` floats.
 */
ArfStatus arf_color_transform_apply(const ArfColorTransform *t, float *rgb, size_t count);

/**
 * Copies the row-major 3×3 matrix into `a` and the offset into `b`.
 *
 * # Safety
 * `t` must come from this library, `a` hold 9 and `b` 3 writable doubles.
 */
ArfStatus arf_color_transform_coefficients(const ArfColorTransform *t, double *a, double *b);

/**
 * Releases a transform; null is ignored.
 *
 * # Safety
 * `t` must come from this library and not be used afterwards.
 */
void arf_color_transform_free(ArfColorTransform *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARF_H */
