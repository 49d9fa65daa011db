//! HDF5 reader/writer for the dataset layout.
//!
//! Array names and element types are fixed: `scans (N, P) f32`,
//! `timestamps (N) f64`, `circles (M, 6) f32`, `circle_idx (N) u32`,
//! `circle_num (N) u32` and the optional `split (N) u8`. Sensor metadata is
//! stored as scalar attributes on the root group; files without them are
//! read as a 180 degree fan.

use super::{Dataset, DatasetError};
use crate::geometry::{SensorMeta, INVALID_RANGE_SENTINEL};
use hdf5::types::{FloatSize, IntSize, TypeDescriptor};
use hdf5::{File, H5Type};
use std::path::Path;

const META_ATTRS: [&str; 4] = ["angle_min", "angle_increment", "range_max", "frequency"];

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path)?;

    let scans_ds = open(&file, path, "scans")?;
    check_type(&scans_ds, "scans", TypeDescriptor::Float(FloatSize::U4))?;
    let shape = scans_ds.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(DatasetError::Shape {
            name: "scans",
            got: shape,
            expected: "(N, P) with P >= 2".into(),
        });
    }
    let (n, p) = (shape[0], shape[1]);

    let meta = read_meta(&file, p)?;
    let mut scans: Vec<f32> = scans_ds.read_raw()?;
    for r in &mut scans {
        if *r >= INVALID_RANGE_SENTINEL {
            *r = f32::INFINITY;
        }
    }

    let timestamps: Vec<f64> = read_1d(&file, path, "timestamps", n, TypeDescriptor::Float(FloatSize::U8))?;
    let circle_idx: Vec<u32> = read_1d(&file, path, "circle_idx", n, TypeDescriptor::Unsigned(IntSize::U4))?;
    let circle_num: Vec<u32> = read_1d(&file, path, "circle_num", n, TypeDescriptor::Unsigned(IntSize::U4))?;

    let circles_ds = open(&file, path, "circles")?;
    check_type(&circles_ds, "circles", TypeDescriptor::Float(FloatSize::U4))?;
    let cshape = circles_ds.shape();
    if cshape.len() != 2 || cshape[1] != 6 {
        return Err(DatasetError::Shape {
            name: "circles",
            got: cshape,
            expected: "(M, 6)".into(),
        });
    }
    let flat: Vec<f32> = circles_ds.read_raw()?;
    let circles = flat
        .chunks_exact(6)
        .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
        .collect();

    let split = if file.link_exists("split") {
        Some(read_1d(&file, path, "split", n, TypeDescriptor::Unsigned(IntSize::U1))?)
    } else {
        None
    };

    let ds = Dataset {
        meta,
        scans,
        timestamps,
        circles,
        circle_idx,
        circle_num,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    ds.validate()?;
    let file = File::create(path.as_ref())?;
    let n = ds.len();
    let p = ds.meta.num_points;

    for (name, value) in META_ATTRS.iter().zip([
        ds.meta.angle_min,
        ds.meta.angle_increment,
        ds.meta.range_max,
        ds.meta.frequency,
    ]) {
        file.new_attr::<f64>().create(*name)?.write_scalar(&value)?;
    }

    let on_disk: Vec<f32> = ds
        .scans
        .iter()
        .map(|&r| if r.is_finite() { r } else { INVALID_RANGE_SENTINEL })
        .collect();
    write(&file, "scans", &on_disk, &[n, p])?;
    write(&file, "timestamps", &ds.timestamps, &[n])?;
    let flat: Vec<f32> = ds.circles.iter().flatten().copied().collect();
    write(&file, "circles", &flat, &[ds.circles.len(), 6])?;
    write(&file, "circle_idx", &ds.circle_idx, &[n])?;
    write(&file, "circle_num", &ds.circle_num, &[n])?;
    if let Some(split) = &ds.split {
        write(&file, "split", split, &[n])?;
    }
    file.flush()?;
    Ok(())
}

fn write<T: H5Type>(file: &File, name: &str, data: &[T], shape: &[usize]) -> Result<(), DatasetError> {
    let ds = file.new_dataset::<T>().no_chunk().shape(shape).create(name)?;
    if !data.is_empty() {
        ds.write_raw(data)?;
    }
    Ok(())
}

fn open(file: &File, path: &Path, name: &'static str) -> Result<hdf5::Dataset, DatasetError> {
    if !file.link_exists(name) {
        return Err(DatasetError::MissingArray {
            path: path.to_path_buf(),
            name,
        });
    }
    Ok(file.dataset(name)?)
}

fn check_type(ds: &hdf5::Dataset, name: &'static str, want: TypeDescriptor) -> Result<(), DatasetError> {
    let got = ds.dtype()?.to_descriptor()?;
    if got != want {
        return Err(DatasetError::Shape {
            name,
            got: ds.shape(),
            expected: format!("element type {want}, found {got}"),
        });
    }
    Ok(())
}

fn read_1d<T: H5Type>(
    file: &File,
    path: &Path,
    name: &'static str,
    n: usize,
    want: TypeDescriptor,
) -> Result<Vec<T>, DatasetError> {
    let ds = open(file, path, name)?;
    check_type(&ds, name, want)?;
    let shape = ds.shape();
    if shape != [n] {
        return Err(DatasetError::Shape {
            name,
            got: shape,
            expected: format!("({n})"),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    Ok(ds.read_raw()?)
}

fn read_meta(file: &File, num_points: usize) -> Result<SensorMeta, DatasetError> {
    let mut meta = SensorMeta::half_fan(num_points);
    if META_ATTRS.iter().all(|a| file.attr(a).is_ok()) {
        meta.angle_min = file.attr("angle_min")?.read_scalar()?;
        meta.angle_increment = file.attr("angle_increment")?.read_scalar()?;
        meta.range_max = file.attr("range_max")?.read_scalar()?;
        meta.frequency = file.attr("frequency")?.read_scalar()?;
    }
    Ok(meta)
}
