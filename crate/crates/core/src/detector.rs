//! Common interface of the person detectors.

use crate::geometry::{LaserScan, PersonCircle};
use crate::nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("scan length {0} is not divisible by 6")]
    Length(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

/// A detector turns one scan into scored person circles. Implementations
/// hold frozen weights and may be shared across threads.
pub trait Detector: Send + Sync {
    fn name(&self) -> &'static str;

    fn detect(&self, scan: &LaserScan) -> Result<Vec<PersonCircle>, DetectorError>;
}

pub fn check_length(len: usize) -> Result<(), DetectorError> {
    if len == 0 || !len.is_multiple_of(6) {
        return Err(DetectorError::Length(len));
    }
    Ok(())
}
