/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#ifndef LEGSCAN_H
#define LEGSCAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  /**
   * LFE segmentation with peak finding; checkpoint from `train-seg`.
   */
  LEGSCAN_DETECTOR_KIND_LFE_PEAKS = 0,
  /**
   * LFE-PPN; checkpoint from `train-ppn`.
   */
  LEGSCAN_DETECTOR_KIND_LFE_PPN = 1,
} LegscanDetectorKind;

/**
 * Result of every fallible call.
 */
typedef enum {
  LEGSCAN_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  LEGSCAN_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of its domain (bad UTF-8, bad sensor layout, ...).
   */
  LEGSCAN_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A file could not be read.
   */
  LEGSCAN_STATUS_IO = 3,
  /**
   * A file was readable but not a valid dataset or checkpoint.
   */
  LEGSCAN_STATUS_FORMAT = 4,
  /**
   * The detector rejected the scan.
   */
  LEGSCAN_STATUS_DETECTOR = 5,
  /**
   * An index was past the end.
   */
  LEGSCAN_STATUS_OUT_OF_RANGE = 6,
  /**
   * The output buffer is smaller than required.
   */
  LEGSCAN_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * The evaluated view has no ground truth.
   */
  LEGSCAN_STATUS_NO_GROUND_TRUTH = 8,
  /**
   * An internal panic was caught.
   */
  LEGSCAN_STATUS_PANIC = 99,
} LegscanStatus;

/**
 * A loaded dataset.
 */
typedef struct LegscanDataset LegscanDataset;

/**
 * Detections of one scan.
 */
typedef struct LegscanDetections LegscanDetections;

/**
 * A loaded detector.
 */
typedef struct LegscanDetector LegscanDetector;

/**
 * Angular layout of a scan: beam `i` points at
 * `angle_min + i * angle_increment` radians.
 */
typedef struct {
  size_t num_points;
  double angle_min;
  double angle_increment;
  double range_max;
  double frequency;
} LegscanSensorMeta;

/**
 * A detected person center in meters (x forward, y left) with its score.
 */
typedef struct {
  double x;
  double y;
  double score;
} LegscanDetection;

/**
 * Benchmark summaries in [0, 1].
 */
typedef struct {
  double ap;
  double peak_f1;
  double eer;
} LegscanMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *legscan_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *legscan_last_error(void);

/**
 * Opens an HDF5 dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
LegscanStatus legscan_dataset_open(const char *path, LegscanDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a handle from [`legscan_dataset_open`] not yet freed.
 */
void legscan_dataset_free(LegscanDataset *ds);

/**
 * Number of scans.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid pointer.
 */
LegscanStatus legscan_dataset_len(const LegscanDataset *ds, size_t *out);

/**
 * Sensor layout of the dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` a valid pointer.
 */
LegscanStatus legscan_dataset_meta(const LegscanDataset *ds, LegscanSensorMeta *out);

/**
 * Copies the ranges of scan `index` into `ranges` (invalid beams are
 * `+inf`). `capacity` must be at least the sensor's `num_points`.
 *
 * # Safety
 * `ds` must be a live dataset handle and `ranges` valid for `capacity`
 * writes.
 */
LegscanStatus legscan_dataset_scan(const LegscanDataset *ds,
                                   size_t index,
                                   double *ranges,
                                   size_t capacity);

/**
 * Loads a detector checkpoint. LFE-Peaks uses the default peak parameters.
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated string and `out` a valid pointer.
 */
LegscanStatus legscan_detector_load(LegscanDetectorKind kind,
                                    const char *checkpoint,
                                    LegscanDetector **out);

/**
 * # Safety
 * `det` must be NULL or a handle from [`legscan_detector_load`] not yet
 * freed.
 */
void legscan_detector_free(LegscanDetector *det);

/**
 * Detects people in one scan of `num_ranges` ranges laid out as `meta`.
 * Negative or NaN ranges are rejected; `+inf` marks a beam without return.
 *
 * # Safety
 * `det` must be a live detector handle, `meta` and `out` valid pointers
 * and `ranges` valid for `num_ranges` reads.
 */
LegscanStatus legscan_detect(const LegscanDetector *det,
                             const LegscanSensorMeta *meta,
                             const double *ranges,
                             size_t num_ranges,
                             LegscanDetections **out);

/**
 * Number of detections; 0 for NULL.
 *
 * # Safety
 * `d` must be NULL or a live detections handle.
 */
size_t legscan_detections_len(const LegscanDetections *d);

/**
 * # Safety
 * `d` must be a live detections handle and `out` a valid pointer.
 */
LegscanStatus legscan_detections_get(const LegscanDetections *d,
                                     size_t index,
                                     LegscanDetection *out);

/**
 * # Safety
 * `d` must be NULL or a handle from [`legscan_detect`] not yet freed.
 */
void legscan_detections_free(LegscanDetections *d);

/**
 * Runs the detector over the annotated validation scans and scores it at
 * association distance `distance` meters.
 *
 * # Safety
 * `det` and `ds` must be live handles and `out` a valid pointer.
 */
LegscanStatus legscan_evaluate(const LegscanDetector *det,
                               const LegscanDataset *ds,
                               double distance,
                               LegscanMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEGSCAN_H */
