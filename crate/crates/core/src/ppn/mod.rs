//! People Proposal Network: a polar anchor head on top of the LFE backbone.
//!
//! The full and half resolution feature maps are max-pooled to one value
//! per sector and concatenated with the sixth resolution map. One
//! separable convolution (kernel 3, ReLU, batch norm, dropout) and a biased
//! 1x1 convolution then emit `3 * M` channels per sector: for level `m`,
//! channel `3m` is the objectness logit and `3m + 1`, `3m + 2` are the
//! distance and arc offsets.

mod anchors;

pub use anchors::{assign_targets, build_anchor_grid, AnchorConfig, AnchorError, AnchorGrid, AnchorTargets, SECTOR_BEAMS};

use crate::dataset::{annotated_indices, benchmark_views, Dataset, DatasetError};
use crate::detector::{check_length, Detector, DetectorError};
use crate::geometry::{LaserScan, PersonCircle, Point2D, SensorMeta};
use crate::lfe::{scan_input, Lfe, LfeConfig, LfeError, SegModel, NOMINAL_RADIUS, POOL_FACTORS};
use crate::nn::{
    train_loop, AdamWConfig, Checkpoint, ConvUnit, Graph, History, L1Reduction, NnError, NodeId, ParamStore, Pointwise,
    Tensor1D, TrainConfig, Trainable,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::path::Path;
use thiserror::Error;

pub const PPN_CHECKPOINT_KIND: &str = "lfe-ppn";

#[derive(Debug, Error)]
pub enum PpnError {
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Lfe(#[from] LfeError),
    #[error("the training view is empty")]
    EmptyTrainingView,
    #[error("the validation view is empty")]
    EmptyValidationView,
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    WrongCheckpoint { expected: String, found: String },
    #[error("checkpoint config: {0}")]
    Config(String),
}

impl From<serde_json::Error> for PpnError {
    fn from(e: serde_json::Error) -> Self {
        PpnError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpnConfig {
    pub lfe: LfeConfig,
    pub anchors: AnchorConfig,
    /// Channels of the separable convolution in the head.
    pub hidden: usize,
    pub nms_distance: f64,
    pub score_threshold: f64,
}

impl Default for PpnConfig {
    fn default() -> Self {
        Self {
            lfe: LfeConfig::default(),
            anchors: AnchorConfig::default(),
            hidden: 64,
            nms_distance: 0.5,
            score_threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PpnHead {
    pub conv: ConvUnit,
    pub out: Pointwise,
    pub levels: usize,
}

impl PpnHead {
    pub fn new(store: &mut ParamStore, channels: [usize; 3], hidden: usize, levels: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let cin = channels.iter().sum();
        Self {
            conv: ConvUnit::new(store, "ppn.conv", cin, hidden, 3, false, dropout, rng),
            out: Pointwise::new(store, "ppn.out", hidden, 3 * levels, rng),
            levels,
        }
    }

    /// `(batch, 3M, L/6)` raw outputs.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, full: NodeId, half: NodeId, sixth: NodeId) -> Result<NodeId, NnError> {
        let a = g.max_pool(full, POOL_FACTORS[0] * POOL_FACTORS[1])?;
        let b = g.max_pool(half, POOL_FACTORS[1])?;
        let cat = g.concat(&[a, b, sixth])?;
        let h = self.conv.forward(g, store, cat)?;
        self.out.forward(g, store, h)
    }
}

/// Channel lists of the three output kinds, each in level order.
pub fn output_channels(levels: usize) -> [Vec<usize>; 3] {
    [0, 1, 2].map(|k| (0..levels).map(|m| 3 * m + k).collect())
}

/// Per-scan training targets flattened to `m * sectors + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpnSample {
    pub input: Vec<f64>,
    pub targets: AnchorTargets,
}

/// The loss terms of one batch, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct PpnLoss {
    pub cls: NodeId,
    pub reg: Option<NodeId>,
    pub total: NodeId,
}

/// Per batch element: `(mean bce + dice) / 2` over every anchor plus the
/// smooth-L1 sum over the `2 N+` offsets of positive anchors divided by
/// `N+`; the regression term is absent when `N+ = 0`. Averaged over the
/// batch. `out` is `(batch, 3M, sectors)`.
pub fn ppn_loss(g: &mut Graph, out: NodeId, targets: &[&AnchorTargets]) -> Result<PpnLoss, NnError> {
    let (b, c, s) = g.value(out).shape();
    if c % 3 != 0 || b != targets.len() {
        return Err(NnError::Shape(format!("ppn output {:?} for {} targets", (b, c, s), targets.len())));
    }
    let levels = c / 3;
    if targets.iter().any(|t| t.labels.len() != levels * s) {
        return Err(NnError::Shape("targets do not match the anchor grid".into()));
    }
    let [logit_ch, dd_ch, dl_ch] = output_channels(levels);
    let logits = g.select_channels(out, &logit_ch)?;
    let probs = g.sigmoid(logits)?;
    let labels: Vec<f64> = targets.iter().flat_map(|t| t.labels.iter().copied()).collect();
    let bce = g.bce(probs, &labels)?;
    let dice = g.dice(probs, &labels)?;
    let both = g.add(bce, dice)?;
    let cls = g.scale(both, 0.5)?;

    let n_pos: Vec<f64> = targets.iter().map(|t| t.n_pos as f64).collect();
    if n_pos.iter().all(|&n| n == 0.0) {
        return Ok(PpnLoss { cls, reg: None, total: cls });
    }
    let mut reg_ch = dd_ch;
    reg_ch.extend(dl_ch);
    let offsets = g.select_channels(out, &reg_ch)?;
    let mut goal = Vec::with_capacity(2 * labels.len());
    let mut mask = Vec::with_capacity(2 * labels.len());
    for t in targets {
        goal.extend(&t.dd);
        goal.extend(&t.dl);
        for _ in 0..2 {
            mask.extend(t.assigned.iter().map(Option::is_some));
        }
    }
    let reg = g.smooth_l1(offsets, &goal, &mask, L1Reduction::PerSample(n_pos))?;
    let total = g.add(cls, reg)?;
    Ok(PpnLoss {
        cls,
        reg: Some(reg),
        total,
    })
}

/// A decoded anchor prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub circle: PersonCircle,
    pub sector: usize,
    pub level: usize,
}

impl Proposal {
    pub fn score(&self) -> f64 {
        self.circle.confidence()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Decoded {
    pub proposals: Vec<Proposal>,
    /// Anchors above the threshold whose decoded range was not positive.
    pub discarded: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Turns one scan's raw output `(3M, sectors)` into proposals with score
/// at least `score_threshold`.
pub fn decode(out: &[f64], grid: &AnchorGrid, score_threshold: f64) -> Result<Decoded, NnError> {
    let s = grid.sectors;
    if out.len() != 3 * grid.levels * s {
        return Err(NnError::Shape(format!("{} outputs for a grid of {} anchors", out.len(), grid.len())));
    }
    let mut decoded = Decoded::default();
    for m in 0..grid.levels {
        for sector in 0..s {
            let score = sigmoid(out[3 * m * s + sector]);
            if score < score_threshold {
                continue;
            }
            let dd = out[(3 * m + 1) * s + sector];
            let dl = out[(3 * m + 2) * s + sector];
            match grid.decode(grid.index(sector, m), dd, dl) {
                Some(p) => decoded.proposals.push(Proposal {
                    circle: PersonCircle::at(p.x, p.y, NOMINAL_RADIUS).with_score(score),
                    sector,
                    level: m,
                }),
                None => decoded.discarded += 1,
            }
        }
    }
    Ok(decoded)
}

fn nms_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.score()
        .partial_cmp(&a.score())
        .unwrap_or(Ordering::Equal)
        .then(a.sector.cmp(&b.sector))
        .then(a.level.cmp(&b.level))
}

/// Greedy suppression by center distance: highest score first (ties by
/// sector, then level), keeping a proposal only if it is at least
/// `distance` from everything kept so far.
pub fn nms(proposals: &[Proposal], distance: f64) -> Vec<Proposal> {
    let mut sorted: Vec<&Proposal> = proposals.iter().collect();
    sorted.sort_by(|a, b| nms_order(a, b));
    let mut kept: Vec<Proposal> = Vec::new();
    let d2 = distance * distance;
    for p in sorted {
        let c = p.circle.center();
        let clear = kept.iter().all(|k| {
            let q = k.circle.center();
            let (dx, dy) = (c.x - q.x, c.y - q.y);
            dx * dx + dy * dy >= d2
        });
        if clear {
            kept.push(p.clone());
        }
    }
    kept
}

#[derive(Debug, Clone)]
pub struct PpnModel {
    pub config: PpnConfig,
    pub store: ParamStore,
    pub lfe: Lfe,
    pub head: PpnHead,
}

impl PpnModel {
    pub fn new(config: &PpnConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.lfe.seed);
        let mut store = ParamStore::new();
        let lfe = Lfe::new(&mut store, &config.lfe, &mut rng);
        let head = PpnHead::new(
            &mut store,
            config.lfe.channels,
            config.hidden,
            config.anchors.anchors_per_sector,
            config.lfe.dropout,
            &mut rng,
        );
        Self {
            config: config.clone(),
            store,
            lfe,
            head,
        }
    }

    /// Copies the backbone weights of a trained segmentation model.
    pub fn from_backbone(config: &PpnConfig, backbone: &SegModel) -> Result<Self, PpnError> {
        let config = PpnConfig {
            lfe: backbone.config.clone(),
            ..config.clone()
        };
        let mut model = Self::new(&config);
        model.store.load_prefix(&backbone.store, "lfe.")?;
        Ok(model)
    }

    pub fn grid(&self, meta: &SensorMeta) -> Result<AnchorGrid, AnchorError> {
        AnchorGrid::from_config(meta, &self.config.anchors)
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId, DetectorError> {
        let f = self.lfe.forward(g, &self.store, x)?;
        Ok(self.head.forward(g, &self.store, f.full, f.half, f.sixth)?)
    }

    /// Raw outputs `(3M, sectors)` per input.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>, DetectorError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference();
        let x = g.input(stack_inputs(inputs)?)?;
        let out = self.forward(&mut g, x)?;
        let per = g.value(out).numel() / inputs.len();
        Ok(g.value(out).data.chunks(per).map(<[f64]>::to_vec).collect())
    }

    /// Proposals of one scan before suppression.
    pub fn propose(&self, scan: &LaserScan) -> Result<Decoded, PpnError> {
        check_length(scan.len())?;
        let grid = self.grid(&scan.meta)?;
        let out = self.predict(&[&scan_input(scan)])?.remove(0);
        Ok(decode(&out, &grid, self.config.score_threshold)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            PPN_CHECKPOINT_KIND,
            serde_json::to_value(&self.config).expect("config serializes"),
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PpnError> {
        if ckpt.kind != PPN_CHECKPOINT_KIND {
            return Err(PpnError::WrongCheckpoint {
                expected: PPN_CHECKPOINT_KIND.into(),
                found: ckpt.kind.clone(),
            });
        }
        let config: PpnConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Self::new(&config);
        model.store.load_all(&ckpt.store())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PpnError> {
        Ok(self.checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PpnError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn stack_inputs(batch: &[&[f64]]) -> Result<Tensor1D, NnError> {
    let l = batch.first().map_or(0, |v| v.len());
    if batch.iter().any(|v| v.len() != l) {
        return Err(NnError::Shape("batch mixes scan lengths".into()));
    }
    Tensor1D::from_vec(batch.len(), 1, l, batch.iter().flat_map(|v| v.iter().copied()).collect())
}

impl Trainable for PpnModel {
    type Sample = PpnSample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&PpnSample]) -> Result<NodeId, NnError> {
        let inputs: Vec<&[f64]> = batch.iter().map(|s| s.input.as_slice()).collect();
        let x = g.input(stack_inputs(&inputs)?)?;
        let out = self.forward(g, x).map_err(|e| match e {
            DetectorError::Nn(e) => e,
            other => NnError::Shape(other.to_string()),
        })?;
        let targets: Vec<&AnchorTargets> = batch.iter().map(|s| &s.targets).collect();
        Ok(ppn_loss(g, out, &targets)?.total)
    }
}

pub fn ppn_samples(ds: &Dataset, indices: &[usize], grid: &AnchorGrid, tau: f64) -> Result<Vec<PpnSample>, DatasetError> {
    indices
        .iter()
        .map(|&i| {
            let scan = ds.scan(i)?;
            let gt = ds.annotations(i)?;
            Ok(PpnSample {
                input: scan_input(&scan),
                targets: assign_targets(grid, &gt, tau),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpnTrainConfig {
    pub model: PpnConfig,
    pub train: TrainConfig,
    /// Keep the backbone weights fixed and train only the head.
    pub freeze_backbone: bool,
}

impl Default for PpnTrainConfig {
    fn default() -> Self {
        Self {
            model: PpnConfig::default(),
            train: TrainConfig {
                epochs: 150,
                batch_size: 4,
                patience: 20,
                min_delta: 1e-3,
                optim: AdamWConfig {
                    lr: 1e-4,
                    weight_decay: 4e-4,
                    ..AdamWConfig::default()
                },
                seed: 0,
            },
            freeze_backbone: false,
        }
    }
}

/// Fine-tunes backbone and head jointly, starting from the backbone of a
/// trained segmentation model. The backbone's config replaces
/// `config.model.lfe`.
pub fn train_ppn(ds: &Dataset, backbone: &SegModel, config: &PpnTrainConfig) -> Result<(PpnModel, History), PpnError> {
    check_length(ds.meta.num_points)?;
    let mut model = PpnModel::from_backbone(&config.model, backbone)?;
    if config.freeze_backbone {
        model.store.set_trainable("lfe.", false);
    }
    let grid = model.grid(&ds.meta)?;
    let (train_idx, val_idx) = benchmark_views(ds)?;
    if train_idx.is_empty() {
        return Err(PpnError::EmptyTrainingView);
    }
    if val_idx.is_empty() {
        return Err(PpnError::EmptyValidationView);
    }
    let tau = config.model.anchors.tau;
    let train = ppn_samples(ds, &train_idx, &grid, tau)?;
    let val = ppn_samples(ds, &val_idx, &grid, tau)?;
    let history = train_loop(&mut model, &train, &val, &config.train)?;
    Ok((model, history))
}

/// Moments of the regression targets over every positive anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub positives: usize,
    pub mean_dd: f64,
    pub std_dd: f64,
    pub mean_dl: f64,
    pub std_dl: f64,
}

/// Target statistics over all annotated scans of `ds`.
pub fn regression_statistics(ds: &Dataset, grid: &AnchorGrid, tau: f64) -> Result<RegressionStats, DatasetError> {
    let (mut dd, mut dl) = (Vec::new(), Vec::new());
    for i in annotated_indices(ds) {
        let t = assign_targets(grid, &ds.annotations(i)?, tau);
        for a in 0..grid.len() {
            if t.is_positive(a) {
                dd.push(t.dd[a]);
                dl.push(t.dl[a]);
            }
        }
    }
    let moments = |v: &[f64]| {
        if v.is_empty() {
            return (0.0, 0.0);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
    };
    let (mean_dd, std_dd) = moments(&dd);
    let (mean_dl, std_dl) = moments(&dl);
    Ok(RegressionStats {
        positives: dd.len(),
        mean_dd,
        std_dd,
        mean_dl,
        std_dl,
    })
}

/// The LFE-PPN detector: decode, then suppress.
#[derive(Debug, Clone)]
pub struct PpnDetector {
    pub model: PpnModel,
}

impl PpnDetector {
    pub fn new(model: PpnModel) -> Self {
        Self { model }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PpnError> {
        Ok(Self::new(PpnModel::load(path)?))
    }
}

impl Detector for PpnDetector {
    fn name(&self) -> &'static str {
        "lfe-ppn"
    }

    fn detect(&self, scan: &LaserScan) -> Result<Vec<PersonCircle>, DetectorError> {
        check_length(scan.len())?;
        let grid = self.model.grid(&scan.meta).map_err(|e| DetectorError::Config(e.to_string()))?;
        let out = self.model.predict(&[&scan_input(scan)])?.remove(0);
        let decoded = decode(&out, &grid, self.model.config.score_threshold)?;
        Ok(nms(&decoded.proposals, self.model.config.nms_distance)
            .into_iter()
            .map(|p| p.circle)
            .collect())
    }
}

/// Anchor center nearest to `p`, by brute force.
pub fn nearest_anchor(grid: &AnchorGrid, p: &Point2D) -> (usize, f64) {
    (0..grid.len())
        .map(|a| (a, grid.anchor(a).distance(p)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}
