//! Parameter storage addressed by layer path, and the Nadam optimiser.

use crate::error::{invalid, Result};
use crate::graph::Gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// One named array. Normalisation running statistics are stored as
/// non-trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub path: String,
    pub dims: [usize; 4],
    pub values: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    FanIn(usize),
    Const(f64),
}

/// Arrays are created on first use, in a fixed order, from a seeded stream.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { entries: Vec::new(), index: HashMap::new(), rng: ChaCha8Rng::seed_from_u64(seed), frozen: false }
    }

    /// Store restored from saved entries; unknown paths are then an error.
    pub fn from_entries(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut store = Self::new(0);
        for e in entries {
            if e.values.len() != e.dims.iter().product::<usize>() {
                return invalid(format!("{}: {} values for dims {:?}", e.path, e.values.len(), e.dims));
            }
            if store.index.insert(e.path.clone(), store.entries.len()).is_some() {
                return invalid(format!("duplicate parameter path {}", e.path));
            }
            store.entries.push(e);
        }
        store.frozen = true;
        Ok(store)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Slot of `path`, creating it when the store is not frozen.
    pub fn get_or_init(&mut self, path: &str, dims: [usize; 4], init: Init, trainable: bool) -> Result<usize> {
        if let Some(&slot) = self.index.get(path) {
            if self.entries[slot].dims != dims {
                return invalid(format!("{path}: stored dims {:?}, requested {:?}", self.entries[slot].dims, dims));
            }
            return Ok(slot);
        }
        if self.frozen {
            return invalid(format!("parameter {path} missing from store"));
        }
        let n: usize = dims.iter().product();
        let values = match init {
            Init::FanIn(fan_in) => {
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-limit..limit)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        self.index.insert(path.to_string(), self.entries.len());
        self.entries.push(ParamEntry { path: path.to_string(), dims, values, trainable });
        Ok(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry {
        &self.entries[slot]
    }

    pub fn values_mut(&mut self, slot: usize) -> &mut Vec<f64> {
        &mut self.entries[slot].values
    }

    pub fn slot(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn get(&self, path: &str) -> Option<&ParamEntry> {
        self.slot(path).map(|s| &self.entries[s])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut ParamEntry> {
        self.slot(path).map(|s| &mut self.entries[s])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sum of trainable array lengths.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.values.len()).sum()
    }
}

/// Nesterov-accelerated Adam (Dozat), no momentum schedule.
#[derive(Debug, Clone)]
pub struct Nadam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Nadam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Nadam {
    /// One update of every trainable array; arrays without a gradient see 0.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t + 1);
        let c1_now = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for slot in 0..store.len() {
            if self.m.len() <= slot {
                let n = store.entry(slot).values.len();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
            if !store.entry(slot).trainable {
                continue;
            }
            let g = grads.param(slot);
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            let values = store.values_mut(slot);
            for i in 0..values.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = b1 * m[i] / c1 + (1.0 - b1) * gi / c1_now;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// `lr · decay^epoch`.
pub fn learning_rate(initial: f64, decay: f64, epoch: usize) -> f64 {
    initial * decay.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_at_epoch_twenty() {
        let lr = learning_rate(1e-3, 0.99, 20);
        assert!((lr - 8.179e-4).abs() < 5e-8, "{lr}");
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = ParamStore::new(4);
        let mut b = ParamStore::new(4);
        let sa = a.get_or_init("w", [3, 3, 2, 4], Init::FanIn(18), true).unwrap();
        let sb = b.get_or_init("w", [3, 3, 2, 4], Init::FanIn(18), true).unwrap();
        assert_eq!(a.entry(sa).values, b.entry(sb).values);
        let limit = (6.0f64 / 18.0).sqrt();
        assert!(a.entry(sa).values.iter().all(|v| v.abs() <= limit));
        assert!(a.get_or_init("w", [1, 1, 1, 1], Init::Const(0.0), true).is_err());
        a.freeze();
        assert!(a.get_or_init("other", [1, 1, 1, 1], Init::Const(0.0), true).is_err());
    }
}
