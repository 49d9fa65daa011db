//! The C ABI exercised from Rust, plus a syntax check of the generated
//! header with the system C compiler.

use legscan::dataset::save_dataset;
use legscan::geometry::SensorMeta;
use legscan::lfe::{LfeConfig, SegModel};
use legscan::ppn::{PpnConfig, PpnModel};
use legscan::synth::{generate_dataset, SynthConfig};
use legscan_ffi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(legscan_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_lfe() -> LfeConfig {
    LfeConfig {
        channels: [4, 4, 4],
        ..LfeConfig::toy()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    dataset: CString,
    seg: CString,
    ppn: CString,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&SynthConfig { scans: 30, ..SynthConfig::default() }, 2).unwrap();
    let dp = dir.path().join("d.h5");
    save_dataset(&ds, &dp).unwrap();
    let sp = dir.path().join("seg.json");
    SegModel::new(&tiny_lfe()).save(&sp).unwrap();
    let pp = dir.path().join("ppn.json");
    PpnModel::new(&PpnConfig { lfe: tiny_lfe(), hidden: 4, ..PpnConfig::default() }).save(&pp).unwrap();
    Fixture {
        dataset: cstr(&dp),
        seg: cstr(&sp),
        ppn: cstr(&pp),
        _dir: dir,
    }
}

#[test]
fn dataset_round_trip_through_the_abi() {
    let f = fixture();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(legscan_dataset_open(f.dataset.as_ptr(), &mut ds), LegscanStatus::Ok);
        let mut n = 0usize;
        assert_eq!(legscan_dataset_len(ds, &mut n), LegscanStatus::Ok);
        assert_eq!(n, 30);
        let mut meta = std::mem::zeroed::<LegscanSensorMeta>();
        assert_eq!(legscan_dataset_meta(ds, &mut meta), LegscanStatus::Ok);
        assert_eq!(SensorMeta::from(meta), SensorMeta::frog());

        let mut buf = vec![0.0; 720];
        assert_eq!(legscan_dataset_scan(ds, 3, buf.as_mut_ptr(), buf.len()), LegscanStatus::Ok);
        assert!(buf.iter().all(|r| *r > 0.0));
        assert_eq!(legscan_dataset_scan(ds, 3, buf.as_mut_ptr(), 719), LegscanStatus::BufferTooSmall);
        assert_eq!(legscan_dataset_scan(ds, 30, buf.as_mut_ptr(), 720), LegscanStatus::OutOfRange);
        assert!(last_error().contains("out of bounds"));
        legscan_dataset_free(ds);
    }
}

#[test]
fn detectors_through_the_abi() {
    let f = fixture();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(legscan_dataset_open(f.dataset.as_ptr(), &mut ds), LegscanStatus::Ok);
        let mut ranges = vec![0.0; 720];
        assert_eq!(legscan_dataset_scan(ds, 0, ranges.as_mut_ptr(), 720), LegscanStatus::Ok);
        let meta = LegscanSensorMeta::from(SensorMeta::frog());
        for (kind, path) in [(LegscanDetectorKind::LfePeaks, &f.seg), (LegscanDetectorKind::LfePpn, &f.ppn)] {
            let mut det = ptr::null_mut();
            assert_eq!(legscan_detector_load(kind, path.as_ptr(), &mut det), LegscanStatus::Ok, "{}", last_error());
            let mut dets = ptr::null_mut();
            assert_eq!(legscan_detect(det, &meta, ranges.as_ptr(), 720, &mut dets), LegscanStatus::Ok);
            let n = legscan_detections_len(dets);
            let mut d = LegscanDetection { x: 0.0, y: 0.0, score: 0.0 };
            for i in 0..n {
                assert_eq!(legscan_detections_get(dets, i, &mut d), LegscanStatus::Ok);
                assert!(d.x.is_finite() && d.y.is_finite() && (0.0..=1.0).contains(&d.score));
            }
            assert_eq!(legscan_detections_get(dets, n, &mut d), LegscanStatus::OutOfRange);
            legscan_detections_free(dets);

            // scan length not divisible by 6
            let bad = LegscanSensorMeta { num_points: 719, ..meta };
            assert_eq!(legscan_detect(det, &bad, ranges.as_ptr(), 719, &mut dets), LegscanStatus::Detector);
            assert!(dets.is_null());
            // ranges disagree with the layout
            assert_eq!(legscan_detect(det, &meta, ranges.as_ptr(), 600, &mut dets), LegscanStatus::InvalidArgument);

            let mut m = LegscanMetrics::default();
            assert_eq!(legscan_evaluate(det, ds, 0.5, &mut m), LegscanStatus::Ok, "{}", last_error());
            for v in [m.ap, m.peak_f1, m.eer] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert_eq!(legscan_evaluate(det, ds, -1.0, &mut m), LegscanStatus::InvalidArgument);
            legscan_detector_free(det);
        }
        legscan_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    let f = fixture();
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/d.h5").unwrap();
        assert_eq!(legscan_dataset_open(missing.as_ptr(), &mut ds), LegscanStatus::Io);
        assert!(ds.is_null());
        assert!(last_error().contains("/nonexistent/d.h5"));
        assert_eq!(legscan_dataset_open(ptr::null(), &mut ds), LegscanStatus::NullPointer);
        assert_eq!(legscan_dataset_open(f.seg.as_ptr(), &mut ds), LegscanStatus::Format);

        let mut det = ptr::null_mut();
        // a segmentation checkpoint is not a PPN checkpoint
        assert_eq!(legscan_detector_load(LegscanDetectorKind::LfePpn, f.seg.as_ptr(), &mut det), LegscanStatus::Format);
        assert!(det.is_null());
        assert_eq!(legscan_detector_load(LegscanDetectorKind::LfePeaks, missing.as_ptr(), &mut det), LegscanStatus::Io);

        let mut n = 0usize;
        assert_eq!(legscan_dataset_len(ptr::null(), &mut n), LegscanStatus::NullPointer);
        assert_eq!(legscan_detections_len(ptr::null()), 0);
        legscan_dataset_free(ptr::null_mut());
        legscan_detector_free(ptr::null_mut());
        legscan_detections_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(legscan_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn header_is_valid_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/legscan.h")).unwrap();
    for name in [
        "legscan_dataset_open",
        "legscan_detect",
        "legscan_evaluate",
        "legscan_last_error",
        "typedef struct LegscanDetector LegscanDetector",
        "LEGSCAN_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"legscan.h\"\nint main(void) {\n  LegscanDataset *ds = 0;\n  LegscanStatus s = legscan_dataset_open(\"x.h5\", &ds);\n  return s == LEGSCAN_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .output();
    match out {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("no C compiler available, skipping syntax check: {e}"),
    }
}
