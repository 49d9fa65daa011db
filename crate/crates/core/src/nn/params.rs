//! Named parameter storage and the checkpoint container.
//!
//! Checkpoints are JSON documents:
//!
//! ```json
//! {"format": "legscan-checkpoint", "version": 1, "kind": "lfe-seg",
//!  "config": {...},
//!  "params": [{"name": "lfe.b0.c0.dw", "shape": [16, 9], "trainable": true,
//!              "buffer": false, "values": [...]}]}
//! ```
//!
//! Values are 64-bit floats and round-trip exactly. `config` is the model
//! configuration of whoever wrote the file; `kind` tells loaders which
//! model it belongs to.

use super::NnError;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "legscan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Running statistics and other state that is never trained.
    pub buffer: bool,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, param: Param) -> ParamId {
        assert!(
            !self.by_name.contains_key(&param.name),
            "duplicate parameter name {}",
            param.name
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        id
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.insert(Param {
            name: name.into(),
            shape: shape.to_vec(),
            trainable: true,
            buffer: false,
            values,
        })
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        self.insert(Param {
            name: name.into(),
            shape: shape.to_vec(),
            trainable: false,
            buffer: true,
            values,
        })
    }

    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, shape, values)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.values.len())
            .sum()
    }

    /// Freezes or unfreezes every non-buffer parameter whose name starts
    /// with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| !p.buffer && p.name.starts_with(prefix)) {
            p.trainable = trainable;
        }
    }

    /// Copies values of every parameter of `other` whose name starts with
    /// `prefix` into the same-named parameter here. Returns how many were
    /// copied.
    pub fn load_prefix(&mut self, other: &ParamStore, prefix: &str) -> Result<usize, NnError> {
        let mut copied = 0;
        for p in other.params.iter().filter(|p| p.name.starts_with(prefix)) {
            let id = self
                .find(&p.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown parameter {}", p.name)))?;
            let dst = &mut self.params[id.0];
            if dst.shape != p.shape {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name, dst.shape, p.shape
                )));
            }
            dst.values.copy_from_slice(&p.values);
            copied += 1;
        }
        Ok(copied)
    }

    /// Replaces every value from a store with identical layout.
    pub fn load_all(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                other.len(),
                self.len()
            )));
        }
        let copied = self.load_prefix(other, "")?;
        debug_assert_eq!(copied, self.len());
        Ok(())
    }

    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.values.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.values.copy_from_slice(v);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub params: Vec<Param>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value, store: &ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config,
            params: store.params.clone(),
        }
    }

    pub fn store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.insert(p.clone());
        }
        store
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("not a checkpoint: format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        for p in &ckpt.params {
            if p.shape.iter().product::<usize>() != p.values.len() {
                return Err(NnError::Checkpoint(format!("parameter {} has inconsistent shape", p.name)));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.add_normal("a.w", &[3, 4], 0.7, &mut rng);
        store.add_buffer("a.mean", &[3], vec![0.1, 1.0 / 3.0, -2.5e-17]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::new("test", serde_json::json!({"k": 1}), &store).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.store(), store);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        std::fs::write(&path, r#"{"format":"other","version":1,"kind":"","config":null,"params":[]}"#).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn prefix_freeze_and_load() {
        let mut a = ParamStore::new();
        a.add("lfe.w", &[2], vec![1.0, 2.0]);
        a.add("head.w", &[1], vec![3.0]);
        a.add_buffer("lfe.bn.mean", &[1], vec![0.0]);
        a.set_trainable("lfe.", false);
        assert!(!a.get(ParamId(0)).trainable);
        assert!(a.get(ParamId(1)).trainable);
        assert!(a.get(ParamId(2)).buffer);

        let mut b = a.clone();
        b.values_mut(ParamId(0)).copy_from_slice(&[5.0, 6.0]);
        b.values_mut(ParamId(1))[0] = 9.0;
        assert_eq!(a.load_prefix(&b, "lfe.").unwrap(), 2);
        assert_eq!(a.values(ParamId(0)), &[5.0, 6.0]);
        assert_eq!(a.values(ParamId(1)), &[3.0]);
    }
}
