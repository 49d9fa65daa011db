//! Laser Feature Extractor backbone, its segmentation decoder, and the
//! peak-based detector built on the segmentation output.
//!
//! The backbone has three residual blocks at full, half and sixth
//! resolution. Each block runs three separable convolutions with kernels
//! 9, 7 and 5, every one followed by ReLU, batch norm and dropout, and adds
//! the block input to the result (through a 1x1 projection when the channel
//! count changes). Blocks listed in `aggregator_blocks` append the global
//! maximum of the first depthwise output to every position before its
//! pointwise step.
//!
//! Input is the range vector divided by `range_max` and clamped to
//! `[0, 1]`, with invalid beams at 1.0.

mod peaks;

pub use peaks::{find_regions, regions_to_detections, LfePeaksDetector, PeakDetection, PeakParams, Region, NOMINAL_RADIUS};

use crate::dataset::{benchmark_views, Dataset, DatasetError};
use crate::detector::{check_length, DetectorError};
use crate::geometry::{LaserScan, PersonCircle, Point2D};
use crate::nn::{
    train_loop, Checkpoint, ConvUnit, Graph, History, NnError, NodeId, ParamStore, Pointwise, Tensor1D, TrainConfig,
    Trainable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const KERNELS: [usize; 3] = [9, 7, 5];
/// Pooling applied before blocks 2 and 3; cumulative factors 1, 2, 6.
pub const POOL_FACTORS: [usize; 2] = [2, 3];
pub const SEG_CHECKPOINT_KIND: &str = "lfe-seg";

#[derive(Debug, Error)]
pub enum LfeError {
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("the training view is empty")]
    EmptyTrainingView,
    #[error("the validation view is empty")]
    EmptyValidationView,
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    WrongCheckpoint { expected: String, found: String },
    #[error("checkpoint config: {0}")]
    Config(String),
}

impl From<serde_json::Error> for LfeError {
    fn from(e: serde_json::Error) -> Self {
        LfeError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfeConfig {
    pub channels: [usize; 3],
    pub dropout: f64,
    /// 1-based block numbers carrying the global aggregator.
    pub aggregator_blocks: Vec<usize>,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl Default for LfeConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 96],
            dropout: 0.1,
            aggregator_blocks: vec![2, 3],
            seed: 0,
        }
    }
}

impl LfeConfig {
    pub fn toy() -> Self {
        Self {
            channels: [16, 32, 48],
            ..Self::default()
        }
    }
}

/// One residual block.
#[derive(Debug, Clone)]
pub struct LfeBlock {
    pub units: [ConvUnit; 3],
    pub projection: Option<Pointwise>,
}

impl LfeBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        aggregator: bool,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let units = [0, 1, 2].map(|i| {
            let cin = if i == 0 { in_channels } else { out_channels };
            ConvUnit::new(
                store,
                &format!("{name}.c{i}"),
                cin,
                out_channels,
                KERNELS[i],
                aggregator && i == 0,
                dropout,
                rng,
            )
        });
        let projection =
            (in_channels != out_channels).then(|| Pointwise::new(store, &format!("{name}.proj"), in_channels, out_channels, rng));
        Self { units, projection }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let mut h = x;
        for unit in &self.units {
            h = unit.forward(g, store, h)?;
        }
        let skip = match &self.projection {
            Some(p) => p.forward(g, store, x)?,
            None => x,
        };
        g.add(h, skip)
    }
}

/// Feature maps at lengths L, L/2 and L/6.
#[derive(Debug, Clone, Copy)]
pub struct LfeFeatures {
    pub full: NodeId,
    pub half: NodeId,
    pub sixth: NodeId,
}

#[derive(Debug, Clone)]
pub struct Lfe {
    pub config: LfeConfig,
    pub blocks: [LfeBlock; 3],
}

impl Lfe {
    /// Registers the backbone parameters under `lfe.`.
    pub fn new(store: &mut ParamStore, config: &LfeConfig, rng: &mut ChaCha8Rng) -> Self {
        let c = config.channels;
        let inputs = [1, c[0], c[1]];
        let blocks = [0, 1, 2].map(|i| {
            LfeBlock::new(
                store,
                &format!("lfe.b{i}"),
                inputs[i],
                c[i],
                config.aggregator_blocks.contains(&(i + 1)),
                config.dropout,
                rng,
            )
        });
        Self {
            config: config.clone(),
            blocks,
        }
    }

    /// `x` is `(batch, 1, L)` with L divisible by 6.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<LfeFeatures, DetectorError> {
        check_length(g.value(x).len)?;
        let full = self.blocks[0].forward(g, store, x)?;
        let p = g.max_pool(full, POOL_FACTORS[0])?;
        let half = self.blocks[1].forward(g, store, p)?;
        let p = g.max_pool(half, POOL_FACTORS[1])?;
        let sixth = self.blocks[2].forward(g, store, p)?;
        Ok(LfeFeatures { full, half, sixth })
    }
}

/// Network input for one scan.
pub fn scan_input(scan: &LaserScan) -> Vec<f64> {
    scan.normalized()
}

/// Class 1 for beams whose point lies inside any ground-truth circle.
pub fn point_labels(scan: &LaserScan, circles: &[PersonCircle]) -> Vec<f64> {
    (0..scan.len())
        .map(|i| match scan.point(i) {
            Some(p) if circles.iter().any(|c| c.contains(&p)) => 1.0,
            _ => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub input: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn segmentation_samples(ds: &Dataset, indices: &[usize]) -> Result<Vec<SegSample>, DatasetError> {
    indices
        .iter()
        .map(|&i| {
            let scan = ds.scan(i)?;
            let circles = ds.annotations(i)?;
            Ok(SegSample {
                input: scan_input(&scan),
                labels: point_labels(&scan, &circles),
            })
        })
        .collect()
}

/// Backbone plus the mirrored decoder that predicts one probability per
/// beam.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub config: LfeConfig,
    pub store: ParamStore,
    pub lfe: Lfe,
    pub dec_half: ConvUnit,
    pub dec_full: ConvUnit,
    pub head: Pointwise,
}

impl SegModel {
    pub fn new(config: &LfeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let lfe = Lfe::new(&mut store, config, &mut rng);
        let c = config.channels;
        let dec_half = ConvUnit::new(&mut store, "seg.up1", c[2] + c[1], c[1], 7, false, config.dropout, &mut rng);
        let dec_full = ConvUnit::new(&mut store, "seg.up0", c[1] + c[0], c[0], 9, false, config.dropout, &mut rng);
        let head = Pointwise::new(&mut store, "seg.head", c[0], 1, &mut rng);
        Self {
            config: config.clone(),
            store,
            lfe,
            dec_half,
            dec_full,
            head,
        }
    }

    /// Probabilities `(batch, 1, L)` for a `(batch, 1, L)` input node.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, DetectorError> {
        let s = &self.store;
        let f = self.lfe.forward(g, s, x)?;
        let up = g.upsample(f.sixth, POOL_FACTORS[1])?;
        let cat = g.concat(&[up, f.half])?;
        let d = self.dec_half.forward(g, s, cat)?;
        let up = g.upsample(d, POOL_FACTORS[0])?;
        let cat = g.concat(&[up, f.full])?;
        let d = self.dec_full.forward(g, s, cat)?;
        let logits = self.head.forward(g, s, d)?;
        Ok(g.sigmoid(logits)?)
    }

    /// Per-beam probabilities for a batch of normalized inputs.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>, DetectorError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let l = inputs[0].len();
        let data: Vec<f64> = inputs.iter().flat_map(|v| v.iter().copied()).collect();
        let mut g = Graph::inference();
        let x = g.input(Tensor1D::from_vec(inputs.len(), 1, l, data)?)?;
        let p = self.forward(&mut g, x)?;
        Ok(g.value(p).data.chunks(l).map(<[f64]>::to_vec).collect())
    }

    pub fn predict_scan(&self, scan: &LaserScan) -> Result<Vec<f64>, DetectorError> {
        let input = scan_input(scan);
        Ok(self.predict(&[&input])?.remove(0))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            SEG_CHECKPOINT_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, LfeError> {
        if ckpt.kind != SEG_CHECKPOINT_KIND {
            return Err(LfeError::WrongCheckpoint {
                expected: SEG_CHECKPOINT_KIND.into(),
                found: ckpt.kind.clone(),
            });
        }
        let config: LfeConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Self::new(&config);
        model.store.load_all(&ckpt.store())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LfeError> {
        Ok(self.checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LfeError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `(bce + dice) / 2` of a probability node against per-point labels.
pub fn seg_loss(g: &mut Graph, probs: NodeId, labels: &[f64]) -> Result<NodeId, NnError> {
    let bce = g.bce(probs, labels)?;
    let dice = g.dice(probs, labels)?;
    let sum = g.add(bce, dice)?;
    g.scale(sum, 0.5)
}

fn stack_inputs(batch: &[&[f64]]) -> Result<Tensor1D, NnError> {
    let l = batch.first().map_or(0, |v| v.len());
    if batch.iter().any(|v| v.len() != l) {
        return Err(NnError::Shape("batch mixes scan lengths".into()));
    }
    let data = batch.iter().flat_map(|v| v.iter().copied()).collect();
    Tensor1D::from_vec(batch.len(), 1, l, data)
}

fn detector_to_nn(e: DetectorError) -> NnError {
    match e {
        DetectorError::Nn(e) => e,
        other => NnError::Shape(other.to_string()),
    }
}

impl Trainable for SegModel {
    type Sample = SegSample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&SegSample]) -> Result<NodeId, NnError> {
        let inputs: Vec<&[f64]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let labels: Vec<f64> = batch.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let x = g.input(stack_inputs(&inputs)?)?;
        let p = self.forward(g, x).map_err(detector_to_nn)?;
        seg_loss(g, p, &labels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct SegTrainConfig {
    pub model: LfeConfig,
    pub train: TrainConfig,
}


/// Trains on the annotated training view and early-stops on the
/// validation view.
pub fn train_segmentation(ds: &Dataset, config: &SegTrainConfig) -> Result<(SegModel, History), LfeError> {
    check_length(ds.meta.num_points)?;
    let (train_idx, val_idx) = benchmark_views(ds)?;
    if train_idx.is_empty() {
        return Err(LfeError::EmptyTrainingView);
    }
    if val_idx.is_empty() {
        return Err(LfeError::EmptyValidationView);
    }
    let train = segmentation_samples(ds, &train_idx)?;
    let val = segmentation_samples(ds, &val_idx)?;
    let mut model = SegModel::new(&config.model);
    let history = train_loop(&mut model, &train, &val, &config.train)?;
    Ok((model, history))
}

/// Point-class F1 of thresholded probabilities against labels.
pub fn point_f1(probs: &[f64], labels: &[f64], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in probs.iter().zip(labels) {
        match (p >= threshold, t >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return if fp == 0 && fneg == 0 { 1.0 } else { 0.0 };
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

/// Cartesian points of `scan` for the given beams, skipping invalid ones.
pub(crate) fn member_points(scan: &LaserScan, range: std::ops::RangeInclusive<usize>) -> Vec<(usize, Point2D)> {
    range.filter_map(|i| scan.point(i).map(|p| (i, p))).collect()
}
