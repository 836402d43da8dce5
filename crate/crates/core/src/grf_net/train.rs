//! Mini-batch Adam training with early stopping and plateau LR halving.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grf_net::features::WindowSet;
use crate::grf_net::model::{loss_and_grad, terrain_probability, NetParams, NetShape, Target};
use crate::sim::trial::GrfEstimate;
use crate::sim::Terrain;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Epochs without improvement before the learning rate is halved.
    pub lr_patience: usize,
    pub terrain_weight: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            max_epochs: 60,
            patience: 8,
            lr_patience: 3,
            terrain_weight: 0.5,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParam("net.lr must be > 0".into()));
        }
        if self.batch == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidParam("net.batch and net.max_epochs must be >= 1".into()));
        }
        if !(self.terrain_weight >= 0.0 && self.terrain_weight.is_finite()) {
            return Err(Error::InvalidParam("net.terrain_weight must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidParam("net.val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-set loss of the initial parameters.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept; 0 if none improved on the
    /// initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_windows: usize,
    pub val_windows: usize,
}

/// Rows per parallel gradient chunk. Fixed, so the summation order (and the
/// result) does not depend on the thread count.
const CHUNK: usize = 16;

/// Mean loss and gradient over a window set, in fixed-order chunks.
fn batch_loss_grad(params: &NetParams, set: &WindowSet, terrain_weight: f64) -> Result<(f64, NetParams)> {
    let n = set.len();
    let parts: Vec<Result<(f64, NetParams)>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let x = set.windows.slice(s![lo..hi, .., ..]);
            let cache = params.forward_batch(&x)?;
            let (loss, mut d) = loss_and_grad(&cache.outputs, &set.targets[lo..hi], terrain_weight);
            // loss_and_grad averages over the chunk; rescale to the full set.
            let w = (hi - lo) as f64 / n as f64;
            d *= w;
            Ok((loss * w, params.backward(&x, &cache, &d.view())))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = NetParams::zeros(params.shape);
    for p in parts {
        let (l, g) = p?;
        total += l;
        grad.add_scaled(&g, 1.0);
    }
    Ok((total, grad))
}

/// Mean loss over a window set.
pub fn dataset_loss(params: &NetParams, set: &WindowSet, terrain_weight: f64) -> Result<f64> {
    let out = predict_raw(params, set)?;
    Ok(loss_and_grad(&out, &set.targets, terrain_weight).0)
}

/// Raw outputs (F_x, F_z, logit) for every window.
pub fn predict_raw(params: &NetParams, set: &WindowSet) -> Result<Array2<f64>> {
    let n = set.len();
    let chunks: Vec<Array2<f64>> = (0..n.div_ceil(256))
        .into_par_iter()
        .map(|c| {
            let lo = c * 256;
            let hi = (lo + 256).min(n);
            Ok(params.forward_batch(&set.windows.slice(s![lo..hi, .., ..]))?.outputs)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

struct Adam {
    m: NetParams,
    v: NetParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: NetShape) -> Self {
        Self { m: NetParams::zeros(shape), v: NetParams::zeros(shape), t: 0 }
    }

    fn step(&mut self, params: &mut NetParams, grad: &NetParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let tensors = params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, m), v), g) in tensors.zip(grad.tensors()) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = Self::B1 * m.data[i] + (1.0 - Self::B1) * gi;
                v.data[i] = Self::B2 * v.data[i] + (1.0 - Self::B2) * gi * gi;
                p.data[i] -= lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Seeded train/validation split. With a zero fraction both sets are the
/// full data.
pub fn split(set: &WindowSet, val_fraction: f64, seed: u64) -> Result<(WindowSet, WindowSet)> {
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_fraction == 0.0 {
        return Ok((set.clone(), set.clone()));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    // Own generator, so the split does not shift the batch order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    idx.shuffle(&mut rng);
    let n_val = ((set.len() as f64) * val_fraction).round() as usize;
    if n_val == 0 || n_val == set.len() {
        return Err(Error::Empty("train/validation split"));
    }
    let (val, train) = idx.split_at(n_val);
    Ok((set.select(train), set.select(val)))
}

/// Trains from `init`, keeping the parameters with the best validation loss.
pub fn train(init: NetParams, set: &WindowSet, cfg: &TrainConfig) -> Result<(NetParams, TrainReport)> {
    cfg.validate()?;
    let (train_set, val_set) = split(set, cfg.val_fraction, cfg.seed)?;
    let mut params = init;
    let mut adam = Adam::new(params.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.lr;

    let initial_train_loss = dataset_loss(&params, &train_set, cfg.terrain_weight)?;
    let mut best_val = dataset_loss(&params, &val_set, cfg.terrain_weight)?;
    if !initial_train_loss.is_finite() || !best_val.is_finite() {
        return Err(Error::Training("initial loss is not finite".into()));
    }
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_lr = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch = train_set.select(chunk);
            let (loss, grad) = batch_loss_grad(&params, &batch, cfg.terrain_weight)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b} (lr {lr:.3e})"
                )));
            }
            adam.step(&mut params, &grad, lr);
        }
        let train_loss = dataset_loss(&params, &train_set, cfg.terrain_weight)?;
        let val_loss = dataset_loss(&params, &val_set, cfg.terrain_weight)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at end of epoch {epoch}: train {train_loss}, validation {val_loss}"
            )));
        }
        epochs.push(EpochStats { epoch, train_loss, val_loss, lr });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");

        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
            since_lr = 0;
        } else {
            since_best += 1;
            since_lr += 1;
            if since_best > cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
            if since_lr >= cfg.lr_patience.max(1) {
                lr *= 0.5;
                since_lr = 0;
            }
        }
    }

    Ok((
        best,
        TrainReport {
            initial_train_loss,
            epochs,
            best_epoch,
            best_val_loss: best_val,
            stopped_early,
            train_windows: train_set.len(),
            val_windows: val_set.len(),
        },
    ))
}

/// Stance-phase force errors for one terrain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainScore {
    pub terrain: Terrain,
    pub fx_rmse: f64,
    pub fz_rmse: f64,
    pub stance_windows: usize,
    /// Terrain classification accuracy over all windows of this terrain.
    pub accuracy: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Terrains present in the data, solid first.
    pub per_terrain: Vec<TerrainScore>,
    pub accuracy: f64,
    pub windows: usize,
}

impl EvalReport {
    pub fn terrain(&self, terrain: Terrain) -> Option<&TerrainScore> {
        self.per_terrain.iter().find(|s| s.terrain == terrain)
    }
}

/// Scores estimates against ground truth: force RMSE over stance windows of
/// each terrain, classification accuracy (threshold 0.5) over all windows.
pub fn score(estimates: &[GrfEstimate], targets: &[Target], stance: &[bool], terrain: &[Terrain]) -> Result<EvalReport> {
    let n = estimates.len();
    if n == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    if targets.len() != n || stance.len() != n || terrain.len() != n {
        return Err(Error::Shape("estimates and labels differ in length".into()));
    }
    let correct = |i: usize| (estimates[i].terrain_prob >= 0.5) == (targets[i].terrain >= 0.5);
    let mut per_terrain = Vec::new();
    for tr in [Terrain::Solid, Terrain::Sand] {
        let all: Vec<usize> = (0..n).filter(|&i| terrain[i] == tr).collect();
        if all.is_empty() {
            continue;
        }
        let st: Vec<usize> = all.iter().copied().filter(|&i| stance[i]).collect();
        let rmse = |f: &dyn Fn(usize) -> f64| {
            if st.is_empty() {
                f64::NAN
            } else {
                (st.iter().map(|&i| f(i).powi(2)).sum::<f64>() / st.len() as f64).sqrt()
            }
        };
        per_terrain.push(TerrainScore {
            terrain: tr,
            fx_rmse: rmse(&|i| estimates[i].fx_norm - targets[i].fx),
            fz_rmse: rmse(&|i| estimates[i].fz_norm - targets[i].fz),
            stance_windows: st.len(),
            accuracy: all.iter().filter(|&&i| correct(i)).count() as f64 / all.len() as f64,
            windows: all.len(),
        });
    }
    let accuracy = (0..n).filter(|&i| correct(i)).count() as f64 / n as f64;
    Ok(EvalReport { per_terrain, accuracy, windows: n })
}

pub fn evaluate(params: &NetParams, set: &WindowSet) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let out = predict_raw(params, set)?;
    let est: Vec<GrfEstimate> = out
        .rows()
        .into_iter()
        .map(|r| GrfEstimate { fx_norm: r[0], fz_norm: r[1], terrain_prob: terrain_probability(r[2]) })
        .collect();
    score(&est, &set.targets, &set.stance, &set.terrain)
}
