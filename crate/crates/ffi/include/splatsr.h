#ifndef SPLATSR_H
#define SPLATSR_H

#include <stddef.h>
#include <stdint.h>

typedef enum SplatsrFilter {
  SPLATSR_FILTER_NEAREST = 0,
  SPLATSR_FILTER_BILINEAR = 1,
  SPLATSR_FILTER_BICUBIC = 2,
  SPLATSR_FILTER_LANCZOS3 = 3,
} SplatsrFilter;

typedef enum SplatsrStatus {
  SPLATSR_STATUS_OK = 0,
  SPLATSR_STATUS_NULL_ARGUMENT = 1,
  SPLATSR_STATUS_INVALID_ARGUMENT = 2,
  SPLATSR_STATUS_BUFFER_TOO_SMALL = 3,
  SPLATSR_STATUS_IO = 4,
  SPLATSR_STATUS_PARSE = 5,
  SPLATSR_STATUS_DIMENSION = 6,
  SPLATSR_STATUS_DEGENERATE = 7,
  SPLATSR_STATUS_PANIC = 8,
} SplatsrStatus;

// Opaque scene handle.
typedef struct SplatsrScene SplatsrScene;

// Pinhole camera; the pose maps camera to world and the camera looks down +z.
typedef struct SplatsrCamera {
  double quaternion_wxyz[4];
  double translation[3];
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} SplatsrCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *splatsr_last_error(void);

// Loads a binary little-endian splat PLY into `*out`; free it with `splatsr_scene_free`.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SplatsrStatus splatsr_scene_load(const char *path, struct SplatsrScene **out);

// # Safety
// `scene` must come from `splatsr_scene_load`; `path` must be nul-terminated.
enum SplatsrStatus splatsr_scene_save(const struct SplatsrScene *scene, const char *path);

// Number of splats, 0 for a null handle.
//
// # Safety
// `scene` must be null or come from `splatsr_scene_load`.
size_t splatsr_scene_len(const struct SplatsrScene *scene);

// # Safety
// `scene` must be null or come from `splatsr_scene_load`, and is invalid afterwards.
void splatsr_scene_free(struct SplatsrScene *scene);

// Renders into `out`, which must hold `width * height * 3` doubles.
//
// # Safety
// `camera` and `background` (3 doubles) must be valid; `out` must hold `out_len` doubles.
enum SplatsrStatus splatsr_render(const struct SplatsrScene *scene,
                                  const struct SplatsrCamera *camera,
                                  const double *background,
                                  double *out,
                                  size_t out_len);

// PSNR in dB, capped at 99 for identical images.
//
// # Safety
// `a` and `b` must hold `width * height * 3` doubles; `out` must be valid.
enum SplatsrStatus splatsr_psnr(const double *a,
                                const double *b,
                                uint32_t width,
                                uint32_t height,
                                double *out);

// Mean SSIM over valid 11x11 windows; both sides must be at least 11 pixels.
//
// # Safety
// `a` and `b` must hold `width * height * 3` doubles; `out` must be valid.
enum SplatsrStatus splatsr_ssim(const double *a,
                                const double *b,
                                uint32_t width,
                                uint32_t height,
                                double *out);

// Upsamples by an integer factor into `out` of `(factor * width) * (factor * height) * 3` doubles.
//
// # Safety
// `src` must hold `width * height * 3` doubles and `out` `out_len` doubles.
enum SplatsrStatus splatsr_upsample(const double *src,
                                    uint32_t width,
                                    uint32_t height,
                                    enum SplatsrFilter filter,
                                    uint32_t factor,
                                    double *out,
                                    size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLATSR_H */
