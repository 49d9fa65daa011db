//! Annotation export/import shared by the dataset tools and the annotation
//! service.
//!
//! JSON documents look like
//!
//! ```json
//! {"schema_version": 1, "num_scans": 2, "num_points": 720,
//!  "records": [{"scan_index": 0, "timestamp": 1.5, "person_id": 3,
//!               "x": 2.0, "y": 0.1, "radius": 0.35}],
//!  "point_classes": [{"scan_index": 0, "timestamp": 1.5, "classes": "0001110..."}]}
//! ```
//!
//! `person_id` is omitted when unknown and `point_classes` may be empty.
//! Point classes are one digit per beam: 0 background, 1 person (2 and 3
//! are reserved). The CSV form is the records table
//! (`schema_version,scan_index,timestamp,person_id,x,y,radius`), optionally
//! followed by a blank line and a `scan_index,timestamp,classes` table.

use super::{Dataset, DatasetError, Frame};
use crate::geometry::PersonCircle;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(DatasetError::Format(format!("unknown export format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub scan_index: usize,
    pub timestamp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<u32>,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePointClasses {
    pub scan_index: usize,
    pub timestamp: f64,
    /// One ASCII digit per beam.
    pub classes: String,
}

impl FramePointClasses {
    pub fn new(scan_index: usize, timestamp: f64, classes: &[u8]) -> Self {
        Self {
            scan_index,
            timestamp,
            classes: classes.iter().map(|&c| char::from(b'0' + c.min(9))).collect(),
        }
    }

    pub fn to_vec(&self) -> Result<Vec<u8>, DatasetError> {
        self.classes
            .bytes()
            .map(|b| match b {
                b'0'..=b'3' => Ok(b - b'0'),
                _ => Err(DatasetError::Format(format!(
                    "invalid point class `{}` in scan {}",
                    b as char, self.scan_index
                ))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub num_scans: usize,
    #[serde(default)]
    pub num_points: usize,
    pub records: Vec<AnnotationRecord>,
    #[serde(default)]
    pub point_classes: Vec<FramePointClasses>,
}

impl AnnotationDocument {
    pub fn new(num_scans: usize, num_points: usize) -> Self {
        Self {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            num_scans,
            num_points,
            records: Vec::new(),
            point_classes: Vec::new(),
        }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut doc = Self::new(ds.len(), ds.meta.num_points);
        for i in 0..ds.len() {
            let start = ds.circle_idx[i] as usize;
            let end = start + ds.circle_num[i] as usize;
            for row in &ds.circles[start..end] {
                doc.records.push(AnnotationRecord {
                    scan_index: i,
                    timestamp: ds.timestamps[i],
                    person_id: None,
                    x: row[0] as f64,
                    y: row[1] as f64,
                    radius: row[2] as f64,
                });
            }
        }
        doc
    }

    /// Circles grouped per scan, in record order.
    pub fn circles_per_scan(&self, num_scans: usize) -> Result<Vec<Vec<PersonCircle>>, DatasetError> {
        let mut out = vec![Vec::new(); num_scans];
        for rec in &self.records {
            let slot = out.get_mut(rec.scan_index).ok_or(DatasetError::IndexOutOfBounds {
                index: rec.scan_index,
                len: num_scans,
            })?;
            let mut c = PersonCircle::at(rec.x, rec.y, rec.radius);
            c.person_id = rec.person_id;
            slot.push(c);
        }
        Ok(out)
    }

    /// A copy of `ds` whose annotations are replaced by this document's.
    pub fn apply_to(&self, ds: &Dataset) -> Result<Dataset, DatasetError> {
        let per_scan = self.circles_per_scan(ds.len())?;
        let mut out = Dataset::empty(ds.meta);
        for (i, circles) in per_scan.into_iter().enumerate() {
            out.push_frame(&Frame {
                ranges: ds.ranges(i).iter().map(|&r| r as f64).collect(),
                timestamp: ds.timestamps[i],
                circles,
            })?;
        }
        out.split = ds.split.clone();
        out.validate()?;
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    schema_version: u32,
    scan_index: usize,
    timestamp: f64,
    person_id: Option<u32>,
    x: f64,
    y: f64,
    radius: f64,
}

pub fn render_annotations(doc: &AnnotationDocument, format: ExportFormat) -> Result<String, DatasetError> {
    match format {
        ExportFormat::Json => Ok(serde_json::to_string_pretty(doc)?),
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(["schema_version", "scan_index", "timestamp", "person_id", "x", "y", "radius"])?;
            for r in &doc.records {
                w.serialize(CsvRecord {
                    schema_version: doc.schema_version,
                    scan_index: r.scan_index,
                    timestamp: r.timestamp,
                    person_id: r.person_id,
                    x: r.x,
                    y: r.y,
                    radius: r.radius,
                })?;
            }
            let mut text = into_string(w)?;
            if !doc.point_classes.is_empty() {
                let mut w = csv::Writer::from_writer(Vec::new());
                for pc in &doc.point_classes {
                    w.serialize(pc)?;
                }
                text.push('\n');
                text.push_str(&into_string(w)?);
            }
            Ok(text)
        }
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, DatasetError> {
    let bytes = w
        .into_inner()
        .map_err(|e| DatasetError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| DatasetError::Format(e.to_string()))
}

pub fn parse_annotations(text: &str, format: ExportFormat) -> Result<AnnotationDocument, DatasetError> {
    let doc = match format {
        ExportFormat::Json => serde_json::from_str::<AnnotationDocument>(text)?,
        ExportFormat::Csv => {
            let (records_part, classes_part) = match text.find("\n\n") {
                Some(pos) => (&text[..pos + 1], Some(&text[pos + 2..])),
                None => (text, None),
            };
            let mut doc = AnnotationDocument::new(0, 0);
            let mut reader = csv::Reader::from_reader(records_part.as_bytes());
            let header = reader.headers()?.clone();
            if header.get(0) != Some("schema_version") {
                return Err(DatasetError::Format("missing schema_version column".into()));
            }
            for row in reader.deserialize() {
                let row: CsvRecord = row?;
                doc.schema_version = row.schema_version;
                doc.num_scans = doc.num_scans.max(row.scan_index + 1);
                doc.records.push(AnnotationRecord {
                    scan_index: row.scan_index,
                    timestamp: row.timestamp,
                    person_id: row.person_id,
                    x: row.x,
                    y: row.y,
                    radius: row.radius,
                });
            }
            if let Some(part) = classes_part {
                let mut reader = csv::Reader::from_reader(part.as_bytes());
                for row in reader.deserialize() {
                    let pc: FramePointClasses = row?;
                    doc.num_scans = doc.num_scans.max(pc.scan_index + 1);
                    doc.num_points = pc.classes.len();
                    doc.point_classes.push(pc);
                }
            }
            doc
        }
    };
    if doc.schema_version != ANNOTATION_SCHEMA_VERSION {
        return Err(DatasetError::Format(format!(
            "unsupported schema_version {}",
            doc.schema_version
        )));
    }
    Ok(doc)
}

pub fn export_annotations(ds: &Dataset, format: ExportFormat, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let text = render_annotations(&AnnotationDocument::from_dataset(ds), format)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn import_annotations(path: impl AsRef<Path>, format: ExportFormat) -> Result<AnnotationDocument, DatasetError> {
    parse_annotations(&std::fs::read_to_string(path)?, format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle_from_center, SensorMeta};

    fn two_scans() -> Dataset {
        let meta = SensorMeta::half_fan(4);
        Dataset::from_frames(
            meta,
            [(1.0, 2.0, 0.3), (3.0, -1.0, 0.25)].iter().enumerate().map(|(i, &(x, y, r))| Frame {
                ranges: vec![2.0; 4],
                timestamp: 100.0 + i as f64 * 0.025,
                circles: vec![circle_from_center(x, y, r).unwrap()],
            }),
        )
        .unwrap()
    }

    #[test]
    fn one_record_per_circle() {
        let doc = AnnotationDocument::from_dataset(&two_scans());
        assert_eq!(doc.records.len(), 2);
        assert_eq!(doc.records[1].scan_index, 1);
        let csv = render_annotations(&doc, ExportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("schema_version,scan_index,timestamp,person_id,x,y,radius\n"));
    }

    #[test]
    fn json_reimport_matches_at_f32_precision() {
        let ds = two_scans();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        export_annotations(&ds, ExportFormat::Json, &path).unwrap();
        let doc = import_annotations(&path, ExportFormat::Json).unwrap();
        let back = doc.apply_to(&ds).unwrap();
        for (a, b) in ds.circles.iter().zip(&back.circles) {
            for k in 0..6 {
                assert!((a[k] - b[k]).abs() <= 2.0 * f32::EPSILON * a[k].abs().max(1.0), "{a:?} vs {b:?}");
            }
        }
        assert_eq!(back.circle_num, ds.circle_num);
    }

    #[test]
    fn csv_round_trip_with_classes() {
        let mut doc = AnnotationDocument::from_dataset(&two_scans());
        doc.records[0].person_id = Some(7);
        doc.point_classes.push(FramePointClasses::new(0, 100.0, &[0, 1, 1, 0]));
        doc.point_classes.push(FramePointClasses::new(1, 100.025, &[0, 0, 0, 1]));
        let text = render_annotations(&doc, ExportFormat::Csv).unwrap();
        let back = parse_annotations(&text, ExportFormat::Csv).unwrap();
        assert_eq!(back.records, doc.records);
        assert_eq!(back.point_classes, doc.point_classes);
        assert_eq!(back.point_classes[0].to_vec().unwrap(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn empty_dataset_gives_valid_documents() {
        let ds = Dataset::empty(SensorMeta::frog());
        let doc = AnnotationDocument::from_dataset(&ds);
        let json = render_annotations(&doc, ExportFormat::Json).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["records"].as_array().unwrap().len(), 0);
        let csv = render_annotations(&doc, ExportFormat::Csv).unwrap();
        assert_eq!(csv, "schema_version,scan_index,timestamp,person_id,x,y,radius\n");
        assert!(parse_annotations(&csv, ExportFormat::Csv).unwrap().records.is_empty());
    }

    #[test]
    fn rejects_unknown_schema() {
        let text = r#"{"schema_version": 9, "records": []}"#;
        assert!(matches!(parse_annotations(text, ExportFormat::Json), Err(DatasetError::Format(_))));
    }
}
