#ifndef MOTIONSEG_H
#define MOTIONSEG_H

#include <stddef.h>
#include <stdint.h>

// Result code of every call.
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_ARGUMENT = 2,
  MS_STATUS_SHAPE_MISMATCH = 3,
  MS_STATUS_INSUFFICIENT_DATA = 4,
  MS_STATUS_ESTIMATION_FAILED = 5,
  MS_STATUS_DEGENERATE_SAMPLE = 6,
  MS_STATUS_EVENT_ORDER = 7,
  MS_STATUS_EVENT_OUT_OF_BOUNDS = 8,
  MS_STATUS_FORMAT = 9,
  MS_STATUS_CONFIG = 10,
  MS_STATUS_IO = 11,
  MS_STATUS_PANIC = 12,
  MS_STATUS_INTERNAL = 13,
} MsStatus;

// Outcome of labeling one slice.
typedef enum MsSliceStatus {
  MS_SLICE_STATUS_ACCEPTED = 0,
  MS_SLICE_STATUS_REJECTED = 1,
  MS_SLICE_STATUS_FAILED = 2,
} MsSliceStatus;

typedef enum MsRejection {
  MS_REJECTION_NONE = 0,
  MS_REJECTION_TOTAL_VARIANCE_TOO_HIGH = 1,
  MS_REJECTION_TOTAL_VARIANCE_TOO_LOW = 2,
  MS_REJECTION_SEPARATION_TOO_LOW = 3,
} MsRejection;

// Opaque pipeline handle: configuration plus camera intrinsics.
typedef struct MsPipeline MsPipeline;

// Camera twist and consensus statistics.
typedef struct MsEgomotion {
  // `v_x, v_y, v_z` (depth units per second) then `ω_x, ω_y, ω_z` (rad/s).
  double twist[6];
  uint64_t inlier_count;
  uint64_t candidate_count;
  uint64_t iterations;
  // Mean flow residual over inliers, pixels per slice.
  double mean_inlier_residual;
} MsEgomotion;

typedef struct MsSliceResult {
  enum MsSliceStatus status;
  // Valid unless `status` is failed.
  struct MsEgomotion egomotion;
  // Decision fields are NaN when no decision was reached.
  double threshold;
  double total_variance;
  double between_class_variance;
  enum MsRejection rejection;
} MsSliceResult;

typedef struct MsEvent {
  // Seconds.
  double t;
  uint16_t x;
  uint16_t y;
  // `+1` or `-1`.
  int8_t p;
} MsEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ms_version(void);

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call on the same thread.
const char *ms_last_error(void);

// Calibrated image motion `(ẋ, ẏ)` of a static point at depth `z` under
// the camera twist `twist[6]`.
//
// # Safety
// `twist` must point to 6 doubles and `out` to 2 writable doubles.
enum MsStatus ms_rigid_flow_at(double x, double y, double z, const double *twist, double *out);

// Pipeline with default settings for a `width × height` sensor. Intrinsics
// default to a centered pinhole until set.
//
// # Safety
// `out` must be writable. Release the handle with [`ms_pipeline_free`].
enum MsStatus ms_pipeline_new(uint32_t width, uint32_t height, struct MsPipeline **out);

// Pipeline configured from a TOML file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum MsStatus ms_pipeline_load(const char *path,
                               uint32_t width,
                               uint32_t height,
                               struct MsPipeline **out);

// Sets one configuration key, e.g. `("ransac.seed", "7")`. The value uses
// TOML literal syntax. Intrinsics keys are applied immediately.
//
// # Safety
// `p` must be a live handle; `key` and `value` NUL-terminated strings.
enum MsStatus ms_pipeline_set(struct MsPipeline *p, const char *key, const char *value);

// # Safety
// `p` must be a handle from this library or NULL; it is invalid afterwards.
void ms_pipeline_free(struct MsPipeline *p);

// Robust camera twist from one slice of flow (pixels per `dt` seconds)
// and depth. `inlier_mask` may be NULL; otherwise it receives 1 for
// consensus pixels and 0 elsewhere.
//
// # Safety
// `u`, `v`, `depth` must hold `width × height` floats, `inlier_mask` (if
// not NULL) as many bytes, and `out` must be writable.
enum MsStatus ms_estimate_egomotion(const struct MsPipeline *p,
                                    const float *u,
                                    const float *v,
                                    const float *depth,
                                    double dt,
                                    struct MsEgomotion *out,
                                    uint8_t *inlier_mask);

// Full labeling of one slice. `mask` receives 0 (background), 1 (moving
// object) or 255 (invalid); rejected and failed slices are all 255.
// A rejected slice still returns OK with `result.status` set; a failed one
// returns the underlying error code.
//
// # Safety
// `u`, `v`, `depth` must hold `width × height` floats, `mask` as many
// writable bytes, and `result` must be writable.
enum MsStatus ms_label_slice(const struct MsPipeline *p,
                             const float *u,
                             const float *v,
                             const float *depth,
                             double dt,
                             uint8_t *mask,
                             struct MsSliceResult *result);

// Event volume of the events in `[t_start, t_end)` with the configured
// number of bins. `out` receives `bins × height × width` floats, bin-major.
//
// # Safety
// `events` must hold `count` records (may be NULL when `count == 0`) and
// `out` must hold `out_len` writable floats.
enum MsStatus ms_event_volume(const struct MsPipeline *p,
                              const struct MsEvent *events,
                              uintptr_t count,
                              double t_start,
                              double t_end,
                              float *out,
                              uintptr_t out_len);

// IoU of `pred` against `gt`, restricted to pixels where `events` is set.
// All three are `width × height` byte masks (nonzero = set). When no
// masked pixel belongs to either mask, `has_object` is 0 and `iou` NaN.
//
// # Safety
// The masks must hold `width × height` bytes; `iou` and `has_object`
// must be writable.
enum MsStatus ms_event_masked_iou(const uint8_t *gt,
                                  const uint8_t *pred,
                                  const uint8_t *events,
                                  uint32_t width,
                                  uint32_t height,
                                  double *iou,
                                  int32_t *has_object);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTIONSEG_H */
