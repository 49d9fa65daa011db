//! People detection for knee-high 2D laser range finders.
//!
//! The crate covers the whole stack: scan geometry and the HDF5 dataset
//! layout, a deterministic scan simulator, a small 1D neural-network engine,
//! the LFE backbone with its segmentation and peak-finding post-processor,
//! the polar-anchor People Proposal Network, the precision/recall benchmark
//! protocol, and the backend of the semi-automatic annotation tool.

pub mod dataset;
pub mod eval;
pub mod annotate;
pub mod detector;
pub mod geometry;
pub mod lfe;
pub mod nn;
pub mod ppn;
pub mod synth;
#[doc(hidden)]
pub mod testkit;

pub use geometry::{
    center_distance, circle_from_center, polar_to_cartesian, LaserScan, PersonCircle, Point2D,
    SensorMeta,
};
