//! Stratified batching, soft-target cross-entropy training and inference
//! helpers.

use crate::augment::{elastic, flip_lr, flip_ud, DisplacementField};
use crate::error::{invalid, NetError, Result};
use crate::graph::Graph;
use crate::model::{forward_graph, Network};
use crate::params::{learning_rate, Nadam};
use crate::tensor::Tensor4;
use endoseg_core::evalmetrics::dice;
use endoseg_core::imgcore::ProbMap;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which target map a network learns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Edge,
    Body,
    Blob,
    Roi,
}

impl Role {
    pub fn default_epochs(self) -> usize {
        match self {
            Role::Edge => 200,
            _ => 100,
        }
    }

    pub fn default_lr_decay(self) -> f64 {
        match self {
            Role::Edge => 0.99,
            _ => 0.97,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Edge => "edge",
            Role::Body => "body",
            Role::Blob => "blob",
            Role::Roi => "roi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub role: Role,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Guttae images per batch from each complexity level.
    pub guttae_per_level: usize,
    pub flips: bool,
    pub elastic_probability: f64,
    pub elastic_grid: usize,
    pub elastic_sd: f64,
    /// Defaults to one pass worth of batches over the dataset.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_role(role: Role) -> Self {
        Self {
            role,
            initial_lr: 1e-3,
            lr_decay: role.default_lr_decay(),
            epochs: role.default_epochs(),
            batch_size: 15,
            guttae_per_level: 2,
            flips: true,
            elastic_probability: 0.5,
            elastic_grid: 4,
            elastic_sd: 6.0,
            steps_per_epoch: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || 3 * self.guttae_per_level > self.batch_size {
            return invalid("batch_size must be positive and hold the guttae quota");
        }
        if !(self.initial_lr >= 0.0 && self.lr_decay > 0.0) {
            return invalid("learning rate must be non-negative and decay positive");
        }
        if !(0.0..=1.0).contains(&self.elastic_probability) || self.elastic_sd < 0.0 {
            return invalid("elastic settings out of range");
        }
        Ok(())
    }
}

/// Complexity level from the total grade: low 1–2, medium 3–4, high 5–6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Low,
    Medium,
    High,
}

impl Complexity {
    pub fn from_grade(total_grade: u8) -> Self {
        match total_grade {
            0..=2 => Complexity::Low,
            3..=4 => Complexity::Medium,
            _ => Complexity::High,
        }
    }
}

/// Image with values in [0, 1], its soft target and grading.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub image: ProbMap,
    pub target: ProbMap,
    pub has_guttae: bool,
    pub total_grade: u8,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor4,
    /// Two-channel distribution `(1 - t, t)`.
    pub targets: Tensor4,
}

/// Stacks maps into a `[n, h, w, 1]` tensor.
pub fn maps_to_tensor(maps: &[&ProbMap]) -> Result<Tensor4> {
    let Some(first) = maps.first() else {
        return invalid("no maps");
    };
    let mut data = Vec::with_capacity(maps.len() * first.data.len());
    for m in maps {
        if !m.same_shape(first) {
            return invalid("maps differ in size");
        }
        data.extend_from_slice(&m.data);
    }
    Tensor4::from_vec([maps.len(), first.height, first.width, 1], data)
}

/// Two-channel target tensor `(1 - t, t)`.
pub fn targets_to_tensor(maps: &[&ProbMap]) -> Result<Tensor4> {
    let t = maps_to_tensor(maps)?;
    let mut data = Vec::with_capacity(2 * t.len());
    for v in &t.data {
        let v = v.clamp(0.0, 1.0);
        data.push(1.0 - v);
        data.push(v);
    }
    Tensor4::from_vec([t.dims[0], t.dims[1], t.dims[2], 2], data)
}

/// Indices of one batch: `guttae_per_level` guttae images from each
/// complexity level where the level has them, the rest uniformly from the
/// other images, without repetition while possible.
pub fn batch_indices<R: Rng + ?Sized>(data: &[TrainSample], cfg: &TrainConfig, rng: &mut R) -> Result<Vec<usize>> {
    if data.is_empty() {
        return invalid("empty dataset");
    }
    let mut chosen = Vec::with_capacity(cfg.batch_size);
    for level in [Complexity::Low, Complexity::Medium, Complexity::High] {
        let pool: Vec<usize> =
            (0..data.len()).filter(|&i| data[i].has_guttae && Complexity::from_grade(data[i].total_grade) == level).collect();
        let k = cfg.guttae_per_level.min(pool.len());
        chosen.extend(sample(rng, pool.len(), k).into_iter().map(|j| pool[j]));
    }
    // fill from images outside the guttae subgroup first
    for guttae in [false, true] {
        let rest: Vec<usize> = (0..data.len()).filter(|&i| data[i].has_guttae == guttae && !chosen.contains(&i)).collect();
        let take = (cfg.batch_size - chosen.len()).min(rest.len());
        chosen.extend(sample(rng, rest.len(), take).into_iter().map(|j| rest[j]));
    }
    while chosen.len() < cfg.batch_size {
        chosen.push(rng.random_range(0..data.len()));
    }
    Ok(chosen)
}

/// Draws a batch and augments every image together with its target.
pub fn make_batch<R: Rng + ?Sized>(data: &[TrainSample], cfg: &TrainConfig, rng: &mut R) -> Result<Batch> {
    let indices = batch_indices(data, cfg, rng)?;
    let mut images = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &i in &indices {
        let (mut im, mut t) = (data[i].image.clone(), data[i].target.clone());
        if cfg.flips {
            if rng.random::<bool>() {
                im = flip_lr(&im);
                t = flip_lr(&t);
            }
            if rng.random::<bool>() {
                im = flip_ud(&im);
                t = flip_ud(&t);
            }
        }
        if cfg.elastic_probability > 0.0 && rng.random::<f64>() < cfg.elastic_probability {
            let f = DisplacementField::random(cfg.elastic_grid, cfg.elastic_sd, rng);
            im = elastic(&im, &f);
            t = elastic(&t, &f);
        }
        images.push(im);
        targets.push(t);
    }
    Ok(Batch {
        images: maps_to_tensor(&images.iter().collect::<Vec<_>>())?,
        targets: targets_to_tensor(&targets.iter().collect::<Vec<_>>())?,
        indices,
    })
}

/// Forward, backward and one Nadam update. Returns the batch loss.
pub fn train_step(net: &mut Network, opt: &mut Nadam, batch: &Batch, lr: f64, dropout_seed: u64) -> Result<f64> {
    let grads = {
        let mut g = Graph::new(&mut net.params, true, dropout_seed);
        let x = g.input(batch.images.clone());
        let (p, _) = forward_graph(&net.config, &mut g, x)?;
        let loss = g.cross_entropy(p, batch.targets.clone());
        g.check()?;
        let l = g.value(loss).data[0];
        if !l.is_finite() {
            return Err(NetError::NonFinite("loss".into()));
        }
        (g.backward(loss), l)
    };
    opt.apply(&mut net.params, &grads.0, lr);
    Ok(grads.1)
}

/// One training-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub optimizer: Nadam,
}

/// Runs `cfg.epochs` epochs (fewer if `on_epoch` stops early).
pub fn train(
    net: &mut Network,
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &mut Network) -> Result<Control>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return invalid("empty dataset");
    }
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd50f_a11e);
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| data.len().div_ceil(cfg.batch_size)).max(1);
    let mut opt = Nadam::default();
    let mut records = Vec::new();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = learning_rate(cfg.initial_lr, cfg.lr_decay, epoch);
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = make_batch(data, cfg, &mut batch_rng)?;
            total += train_step(net, &mut opt, &batch, lr, dropout_rng.next_u64()).map_err(|e| match e {
                NetError::NonFinite(at) => NetError::NonFinite(format!("{at} in epoch {epoch}")),
                other => other,
            })?;
        }
        let rec = EpochRecord {
            epoch,
            loss: total / steps as f64,
            learning_rate: lr,
            lr_decay: cfg.lr_decay,
            steps,
            seconds: start.elapsed().as_secs_f64(),
        };
        records.push(rec.clone());
        if on_epoch(&rec, net)? == Control::Stop {
            break;
        }
    }
    Ok(TrainOutcome { records, optimizer: opt })
}

/// Foreground probability map per image, in inference mode.
pub fn predict_maps(net: &mut Network, images: &[ProbMap], batch: usize) -> Result<Vec<ProbMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = maps_to_tensor(&chunk.iter().collect::<Vec<_>>())?;
        let p = net.predict(&x)?;
        for (k, im) in chunk.iter().enumerate() {
            let plane = p.plane();
            let values = (0..plane).map(|i| p.data[(k * plane + i) * 2 + 1]).collect();
            out.push(ProbMap::from_values(im.width, im.height, values)?.with_pitch(im.pixel_pitch));
        }
    }
    Ok(out)
}

/// Mean per-image DICE (%) of predictions against targets, both binarised
/// at 0.5.
pub fn mean_dice(net: &mut Network, data: &[TrainSample]) -> Result<f64> {
    if data.is_empty() {
        return invalid("empty dataset");
    }
    let images: Vec<ProbMap> = data.iter().map(|s| s.image.clone()).collect();
    let preds = predict_maps(net, &images, 8)?;
    let mut sum = 0.0;
    for (p, s) in preds.iter().zip(data) {
        sum += dice(p, &s.target, 0.5)?;
    }
    Ok(sum / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: usize, guttae: bool, grade: u8) -> TrainSample {
        TrainSample {
            id: id.to_string(),
            image: ProbMap::filled(4, 4, id as f64 / 100.0),
            target: ProbMap::zeros(4, 4),
            has_guttae: guttae,
            total_grade: grade,
        }
    }

    #[test]
    fn quota_is_met_when_available() {
        let mut data: Vec<TrainSample> = (0..20).map(|i| sample(i, false, 2)).collect();
        for (i, g) in [(20, 2), (21, 2), (22, 3), (23, 4), (24, 5), (25, 6), (26, 6)] {
            data.push(sample(i, true, g));
        }
        let cfg = TrainConfig::for_role(Role::Edge);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let idx = batch_indices(&data, &cfg, &mut rng).unwrap();
            assert_eq!(idx.len(), 15);
            let mut per = [0; 3];
            for &i in &idx {
                if data[i].has_guttae {
                    per[Complexity::from_grade(data[i].total_grade) as usize] += 1;
                }
            }
            assert_eq!(per, [2, 2, 2]);
            let mut u = idx.clone();
            u.sort();
            u.dedup();
            assert_eq!(u.len(), 15);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = TrainConfig::for_role(Role::Body);
        assert!(batch_indices(&[], &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn role_defaults() {
        assert_eq!((Role::Edge.default_epochs(), Role::Edge.default_lr_decay()), (200, 0.99));
        assert_eq!((Role::Roi.default_epochs(), Role::Roi.default_lr_decay()), (100, 0.97));
    }
}
