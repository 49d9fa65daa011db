//! Mini-batch training with early stopping.

use super::graph::{apply_stat_updates, Graph, NodeId};
use super::optim::{AdamW, AdamWConfig};
use super::params::ParamStore;
use super::NnError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BN_MOMENTUM: f64 = 0.1;

/// A model that can score a mini-batch.
pub trait Trainable {
    type Sample;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Records the forward pass of `batch` into `g` and returns the scalar
    /// loss node.
    fn batch_loss(&self, g: &mut Graph, batch: &[&Self::Sample]) -> Result<NodeId, NnError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub optim: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            patience: 20,
            min_delta: 1e-3,
            optim: AdamWConfig {
                lr: 1e-3,
                weight_decay: 4e-3,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept, 1-based.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// The stopping rule. An epoch improves when its validation loss is below
/// the previous epoch's by more than `min_delta`; the first epoch always
/// improves. Training stops after `patience` consecutive epochs without
/// improvement, and the weights of the last improving epoch are kept.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    previous: Option<f64>,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            previous: None,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = match self.previous {
            None => true,
            Some(prev) => val_loss < prev - self.min_delta,
        };
        self.previous = Some(val_loss);
        if improved {
            self.best_epoch = Some(epoch);
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean loss over `data` with an inference graph.
pub fn evaluate_loss<M: Trainable>(model: &M, data: &[M::Sample], batch_size: usize) -> Result<f64, NnError> {
    let refs: Vec<&M::Sample> = data.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(batch_size.max(1)) {
        let mut g = Graph::inference();
        let loss = model.batch_loss(&mut g, chunk)?;
        total += g.value(loss).data[0] * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains until the epoch limit or the stopping rule fires, then restores
/// the weights of the best epoch.
pub fn train_loop<M: Trainable>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    config: &TrainConfig,
) -> Result<History, NnError> {
    train_loop_with(model, train, val, config, |_, _| {})
}

/// [`train_loop`] with a hook called after every epoch, before the stopping
/// rule is applied.
pub fn train_loop_with<M: Trainable, F: FnMut(&M, &EpochRecord)>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<History, NnError> {
    let mut history = History::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyData);
    }
    let mut opt = AdamW::new(config.optim);
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.params().snapshot();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for (bi, idx) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<&M::Sample> = idx.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::training(mix(mix(config.seed, epoch as u64), bi as u64 + 1));
            let loss = model.batch_loss(&mut g, &batch)?;
            let value = g.value(loss).data[0];
            if !value.is_finite() {
                return Err(NnError::Diverged { epoch, batch: bi, loss: value });
            }
            let grads = g.backward(loss)?;
            let updates = g.take_stat_updates();
            let store = model.params_mut();
            opt.step(store, grads.params());
            apply_stat_updates(store, &updates, BN_MOMENTUM);
            train_total += value * batch.len() as f64;
        }
        let train_loss = train_total / train.len() as f64;
        let val_loss = evaluate_loss(model, val, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(NnError::Diverged { epoch, batch: 0, loss: val_loss });
        }
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(model, &record);
        history.epochs.push(record);
        match stopper.update(epoch, val_loss) {
            StopDecision::Improved => best = model.params().snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().restore(&best);
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor1D;
    use rand::Rng;

    #[test]
    fn stopping_rule_hand_trace() {
        let mut s = EarlyStopping::new(2, 1e-3);
        assert_eq!(s.update(1, 1.0), StopDecision::Improved);
        assert_eq!(s.update(2, 0.999), StopDecision::Continue);
        assert_eq!(s.update(3, 0.9985), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(1));
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2, 0.01);
        s.update(1, 1.0);
        assert_eq!(s.update(2, 1.0), StopDecision::Continue);
        assert_eq!(s.update(3, 0.5), StopDecision::Improved);
        assert_eq!(s.update(4, 0.5), StopDecision::Continue);
        assert_eq!(s.update(5, 0.6), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(3));
    }

    /// y = w x + b fitted with mean squared error written through the
    /// smooth-L1 op on small residuals.
    struct Line {
        store: ParamStore,
        w: crate::nn::ParamId,
    }

    impl Trainable for Line {
        type Sample = (f64, f64);
        fn params(&self) -> &ParamStore {
            &self.store
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
        fn batch_loss(&self, g: &mut Graph, batch: &[&(f64, f64)]) -> Result<NodeId, NnError> {
            let xs: Vec<f64> = batch.iter().map(|s| s.0).collect();
            let ts: Vec<f64> = batch.iter().map(|s| s.1).collect();
            let x = g.input(Tensor1D::from_vec(1, 1, xs.len(), xs)?)?;
            let w = g.param(&self.store, self.w);
            let y = g.pointwise(x, w, None)?;
            g.smooth_l1(y, &ts, &vec![true; ts.len()], crate::nn::L1Reduction::Mean)
        }
    }

    fn line_data(seed: u64, n: usize) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x = rng.gen_range(-1.0..1.0);
                (x, 0.7 * x)
            })
            .collect()
    }

    fn line() -> Line {
        let mut store = ParamStore::new();
        let w = store.add("w", &[1, 1], vec![-1.0]);
        Line { store, w }
    }

    #[test]
    fn zero_epochs_keeps_weights() {
        let mut m = line();
        let h = train_loop(&mut m, &line_data(1, 10), &line_data(2, 10), &TrainConfig {
            epochs: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(m.store.values(m.w), &[-1.0]);
    }

    #[test]
    fn learns_and_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 8,
            patience: 5,
            min_delta: 0.0,
            optim: AdamWConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..Default::default()
            },
            seed: 3,
        };
        let run = || {
            let mut m = line();
            let h = train_loop(&mut m, &line_data(1, 64), &line_data(2, 16), &cfg).unwrap();
            (h, m.store.values(m.w)[0])
        };
        let (h1, w1) = run();
        let (h2, w2) = run();
        assert_eq!(h1, h2);
        assert_eq!(w1.to_bits(), w2.to_bits());
        assert!((w1 - 0.7).abs() < 0.05, "w = {w1}");
        assert!(h1.epochs.last().unwrap().val_loss < h1.epochs[0].val_loss);
    }

    #[test]
    fn empty_data_is_rejected() {
        let mut m = line();
        assert!(train_loop(&mut m, &[], &line_data(2, 4), &TrainConfig::default()).is_err());
    }
}
