//! C ABI over the legscan detectors and benchmark.
//!
//! Handles are opaque pointers created by `*_open` / `*_load` / `legscan_detect`
//! and released with the matching `*_free`; freeing NULL is a no-op. Every
//! fallible call returns a [`LegscanStatus`] and, on failure, stores a
//! message readable with [`legscan_last_error`] on the same thread.
//!
//! Panics never cross the boundary; they are reported as
//! `LEGSCAN_STATUS_PANIC`. Handles are not thread-safe to free concurrently,
//! but a detector may be used for detection from several threads at once.

use legscan::dataset::{benchmark_views, load_dataset, Dataset, DatasetError};
use legscan::detector::Detector;
use legscan::eval::{evaluate, EvalError};
use legscan::geometry::{LaserScan, PersonCircle, SensorMeta};
use legscan::lfe::{LfePeaksDetector, PeakParams};
use legscan::ppn::PpnDetector;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegscanStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// An argument was out of its domain (bad UTF-8, bad sensor layout, ...).
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was readable but not a valid dataset or checkpoint.
    Format = 4,
    /// The detector rejected the scan.
    Detector = 5,
    /// An index was past the end.
    OutOfRange = 6,
    /// The output buffer is smaller than required.
    BufferTooSmall = 7,
    /// The evaluated view has no ground truth.
    NoGroundTruth = 8,
    /// An internal panic was caught.
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegscanDetectorKind {
    /// LFE segmentation with peak finding; checkpoint from `train-seg`.
    LfePeaks = 0,
    /// LFE-PPN; checkpoint from `train-ppn`.
    LfePpn = 1,
}

/// Angular layout of a scan: beam `i` points at
/// `angle_min + i * angle_increment` radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegscanSensorMeta {
    pub num_points: usize,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub frequency: f64,
}

/// A detected person center in meters (x forward, y left) with its score.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegscanDetection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Benchmark summaries in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegscanMetrics {
    pub ap: f64,
    pub peak_f1: f64,
    pub eer: f64,
}

/// A loaded dataset.
pub struct LegscanDataset {
    inner: Dataset,
}

/// A loaded detector.
pub struct LegscanDetector {
    inner: Box<dyn Detector>,
}

/// Detections of one scan.
pub struct LegscanDetections {
    items: Vec<LegscanDetection>,
}

impl From<SensorMeta> for LegscanSensorMeta {
    fn from(m: SensorMeta) -> Self {
        Self {
            num_points: m.num_points,
            angle_min: m.angle_min,
            angle_increment: m.angle_increment,
            range_max: m.range_max,
            frequency: m.frequency,
        }
    }
}

impl From<LegscanSensorMeta> for SensorMeta {
    fn from(m: LegscanSensorMeta) -> Self {
        Self {
            num_points: m.num_points,
            angle_min: m.angle_min,
            angle_increment: m.angle_increment,
            range_max: m.range_max,
            frequency: m.frequency,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl ToString) {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("NUL bytes removed"));
}

struct Failure(LegscanStatus, String);

fn fail<T>(status: LegscanStatus, message: impl ToString) -> Result<T, Failure> {
    Err(Failure(status, message.to_string()))
}

fn dataset_status(e: &DatasetError) -> LegscanStatus {
    match e {
        DatasetError::Io(_) => LegscanStatus::Io,
        DatasetError::IndexOutOfBounds { .. } => LegscanStatus::OutOfRange,
        _ => LegscanStatus::Format,
    }
}

/// Runs `f`, converting failures and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LegscanStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LegscanStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            LegscanStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(LegscanStatus::NullPointer, format!("{what} is NULL"));
    }
    Ok(())
}

/// # Safety
/// `p` must be NULL or a NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(e) => fail(LegscanStatus::InvalidArgument, format!("path is not UTF-8: {e}")),
    }
}

fn check_readable(path: &std::path::Path) -> Result<(), Failure> {
    if let Err(e) = std::fs::File::open(path) {
        return fail(LegscanStatus::Io, format!("{}: {e}", path.display()));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn legscan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn legscan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens an HDF5 dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_dataset_open(path: *const c_char, out: *mut *mut LegscanDataset) -> LegscanStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        check_readable(&path)?;
        let inner = load_dataset(&path).map_err(|e| Failure(dataset_status(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(LegscanDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`legscan_dataset_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn legscan_dataset_free(ds: *mut LegscanDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of scans.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_dataset_len(ds: *const LegscanDataset, out: *mut usize) -> LegscanStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        non_null(out, "out")?;
        *out = (*ds).inner.len();
        Ok(())
    })
}

/// Sensor layout of the dataset.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_dataset_meta(ds: *const LegscanDataset, out: *mut LegscanSensorMeta) -> LegscanStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        non_null(out, "out")?;
        *out = (*ds).inner.meta.into();
        Ok(())
    })
}

/// Copies the ranges of scan `index` into `ranges` (invalid beams are
/// `+inf`). `capacity` must be at least the sensor's `num_points`.
///
/// # Safety
/// `ds` must be a live dataset handle and `ranges` valid for `capacity`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn legscan_dataset_scan(
    ds: *const LegscanDataset,
    index: usize,
    ranges: *mut f64,
    capacity: usize,
) -> LegscanStatus {
    guard(|| {
        non_null(ds, "dataset")?;
        non_null(ranges, "ranges")?;
        let ds = &(*ds).inner;
        let scan = ds.scan(index).map_err(|e| Failure(dataset_status(&e), e.to_string()))?;
        if capacity < scan.len() {
            return fail(
                LegscanStatus::BufferTooSmall,
                format!("buffer holds {capacity} ranges, scan has {}", scan.len()),
            );
        }
        std::slice::from_raw_parts_mut(ranges, scan.len()).copy_from_slice(&scan.ranges);
        Ok(())
    })
}

/// Loads a detector checkpoint. LFE-Peaks uses the default peak parameters.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_detector_load(
    kind: LegscanDetectorKind,
    checkpoint: *const c_char,
    out: *mut *mut LegscanDetector,
) -> LegscanStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(checkpoint)?;
        check_readable(&path)?;
        let inner: Box<dyn Detector> = match kind {
            LegscanDetectorKind::LfePeaks => Box::new(
                LfePeaksDetector::load(&path, PeakParams::default()).map_err(|e| Failure(LegscanStatus::Format, e.to_string()))?,
            ),
            LegscanDetectorKind::LfePpn => {
                Box::new(PpnDetector::load(&path).map_err(|e| Failure(LegscanStatus::Format, e.to_string()))?)
            }
        };
        *out = Box::into_raw(Box::new(LegscanDetector { inner }));
        Ok(())
    })
}

/// # Safety
/// `det` must be NULL or a handle from [`legscan_detector_load`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn legscan_detector_free(det: *mut LegscanDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Detects people in one scan of `num_ranges` ranges laid out as `meta`.
/// Negative or NaN ranges are rejected; `+inf` marks a beam without return.
///
/// # Safety
/// `det` must be a live detector handle, `meta` and `out` valid pointers
/// and `ranges` valid for `num_ranges` reads.
#[no_mangle]
pub unsafe extern "C" fn legscan_detect(
    det: *const LegscanDetector,
    meta: *const LegscanSensorMeta,
    ranges: *const f64,
    num_ranges: usize,
    out: *mut *mut LegscanDetections,
) -> LegscanStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        non_null(det, "detector")?;
        non_null(meta, "meta")?;
        non_null(ranges, "ranges")?;
        let ranges = std::slice::from_raw_parts(ranges, num_ranges).to_vec();
        let scan = LaserScan::new(ranges, 0.0, (*meta).into())
            .map_err(|e| Failure(LegscanStatus::InvalidArgument, e.to_string()))?;
        let circles = (*det)
            .inner
            .detect(&scan)
            .map_err(|e| Failure(LegscanStatus::Detector, e.to_string()))?;
        *out = Box::into_raw(Box::new(LegscanDetections {
            items: circles.iter().map(detection).collect(),
        }));
        Ok(())
    })
}

fn detection(c: &PersonCircle) -> LegscanDetection {
    LegscanDetection {
        x: c.x,
        y: c.y,
        score: c.confidence(),
    }
}

/// Number of detections; 0 for NULL.
///
/// # Safety
/// `d` must be NULL or a live detections handle.
#[no_mangle]
pub unsafe extern "C" fn legscan_detections_len(d: *const LegscanDetections) -> usize {
    if d.is_null() {
        0
    } else {
        let items = &(*d).items;
        items.len()
    }
}

/// # Safety
/// `d` must be a live detections handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_detections_get(
    d: *const LegscanDetections,
    index: usize,
    out: *mut LegscanDetection,
) -> LegscanStatus {
    guard(|| {
        non_null(d, "detections")?;
        non_null(out, "out")?;
        let items = &(*d).items;
        match items.get(index) {
            Some(item) => {
                *out = *item;
                Ok(())
            }
            None => fail(LegscanStatus::OutOfRange, format!("detection {index} of {}", items.len())),
        }
    })
}

/// # Safety
/// `d` must be NULL or a handle from [`legscan_detect`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn legscan_detections_free(d: *mut LegscanDetections) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Runs the detector over the annotated validation scans and scores it at
/// association distance `distance` meters.
///
/// # Safety
/// `det` and `ds` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn legscan_evaluate(
    det: *const LegscanDetector,
    ds: *const LegscanDataset,
    distance: f64,
    out: *mut LegscanMetrics,
) -> LegscanStatus {
    guard(|| {
        non_null(det, "detector")?;
        non_null(ds, "dataset")?;
        non_null(out, "out")?;
        if !(distance > 0.0 && distance.is_finite()) {
            return fail(LegscanStatus::InvalidArgument, format!("association distance {distance}"));
        }
        let ds = &(*ds).inner;
        let (_, val) = benchmark_views(ds).map_err(|e| Failure(dataset_status(&e), e.to_string()))?;
        let report = evaluate((*det).inner.as_ref(), ds, &val, &[distance]).map_err(|e| {
            let status = match &e {
                EvalError::NoGroundTruth => LegscanStatus::NoGroundTruth,
                EvalError::Detector(_) => LegscanStatus::Detector,
                EvalError::Dataset(d) => dataset_status(d),
                _ => LegscanStatus::Format,
            };
            Failure(status, e.to_string())
        })?;
        let r = &report.results[0];
        *out = LegscanMetrics {
            ap: r.ap,
            peak_f1: r.peak_f1,
            eer: r.eer,
        };
        Ok(())
    })
}
