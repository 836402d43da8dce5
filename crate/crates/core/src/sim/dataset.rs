//! Synthetic IMU/ground-force datasets and gait recordings from simulated
//! trials.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grf_net::{Label, Segment};
use crate::sim::imu::CHANNELS;
use crate::sim::reference::ReferenceGait;
use crate::sim::trial::{run_trial, Group, TrialConfig, TrialResult};
use crate::sim::Terrain;
use crate::stiffness::{fit_stiffness, BilateralKnees, FitOptions, FitReport, GaitCycleSample};

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub trial: TrialConfig,
    pub trials_per_terrain: usize,
    /// Condition the recorded subject walks in.
    pub group: Group,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { trial: TrialConfig::default(), trials_per_terrain: 4, group: Group::B }
    }
}

/// One 100 Hz row: IMU channels with their ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    /// Seconds since the start of the row's trial.
    pub t: f64,
    pub channels: [f64; CHANNELS],
    pub fx_norm: f64,
    pub fz_norm: f64,
    pub terrain: Terrain,
    pub stance: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SyntheticDataset {
    /// Trials back to back; time restarts at each trial.
    pub rows: Vec<DatasetRow>,
    pub gait: Vec<GaitCycleSample>,
    pub body_mass: f64,
    pub rate_hz: f64,
}

/// Splits rows into contiguous recordings wherever time fails to advance by
/// about one sample period.
pub fn segments(rows: &[DatasetRow], rate_hz: f64) -> Vec<Segment> {
    let period = 1.0 / rate_hz;
    let mut out: Vec<Segment> = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for r in rows {
        let dt = r.t - prev_t;
        if !(dt > 0.5 * period && dt < 1.5 * period) {
            out.push(Segment::default());
        }
        let seg = out.last_mut().expect("a segment was just pushed");
        seg.imu.push(r.channels);
        seg.labels.push(Label { fx_norm: r.fx_norm, fz_norm: r.fz_norm, terrain: r.terrain, stance: r.stance });
        prev_t = r.t;
    }
    out
}

impl SyntheticDataset {
    pub fn segments(&self) -> Vec<Segment> {
        segments(&self.rows, self.rate_hz)
    }
}

/// Knee angles and extension-positive, mass-normalized human knee moment,
/// resampled to `rate_hz`, from the strides after the warm-up.
pub fn gait_samples(result: &TrialResult, cfg: &TrialConfig, rate_hz: f64) -> Result<Vec<GaitCycleSample>> {
    let gait = ReferenceGait::with_amplitude(result.terrain, cfg.thigh_amplitude, cfg.knee_amplitude)?;
    let every = ((1.0 / (rate_hz * cfg.dt_inner)).round() as usize).max(1);
    Ok(result
        .samples
        .iter()
        .step_by(every)
        .filter(|x| x.stride >= cfg.warmup_strides)
        .map(|x| GaitCycleSample {
            time: x.t,
            s: x.s,
            knees: BilateralKnees::new(x.state.q[1].to_degrees(), gait.knee_deg(x.s + 0.5)),
            tau_h_true: -x.tau_h / cfg.subject.body_mass,
            terrain: result.terrain,
        })
        .collect())
}

fn trial_seed(seed: u64, terrain: Terrain, k: usize) -> u64 {
    let t = match terrain {
        Terrain::Solid => 0,
        Terrain::Sand => 1,
    };
    seed.wrapping_mul(1 << 16).wrapping_add(2 * k as u64 + t)
}

/// Runs `trials_per_terrain` trials on each terrain and records IMU rows,
/// ground-force labels and gait samples. Trials run in parallel; output
/// order is solid then sand, trial by trial.
pub fn generate_synthetic_dataset(cfg: &DatasetConfig, seed: u64) -> Result<SyntheticDataset> {
    if cfg.trials_per_terrain == 0 {
        return Err(Error::InvalidParam("dataset.trials_per_terrain must be >= 1".into()));
    }
    let mut trial_cfg = cfg.trial.clone();
    trial_cfg.record_imu = true;
    trial_cfg.validate()?;
    let jobs: Vec<(Terrain, usize)> = Terrain::ALL
        .iter()
        .flat_map(|&t| (0..cfg.trials_per_terrain).map(move |k| (t, k)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(terrain, k)| run_trial(cfg.group, terrain, &trial_cfg, trial_seed(seed, terrain, k)))
        .collect::<Result<_>>()?;

    let mut data = SyntheticDataset {
        body_mass: trial_cfg.subject.body_mass,
        rate_hz: trial_cfg.imu.rate_hz,
        ..Default::default()
    };
    for r in &results {
        data.rows.extend(r.imu.iter().map(|x| DatasetRow {
            t: x.imu.t,
            channels: x.imu.channels,
            fx_norm: x.fx_norm,
            fz_norm: x.fz_norm,
            terrain: r.terrain,
            stance: x.stance,
        }));
        data.gait.extend(gait_samples(r, &trial_cfg, trial_cfg.imu.rate_hz)?);
    }
    Ok(data)
}

/// Fits the stiffness model to one unassisted trial per terrain, pooled.
pub fn calibrate_stiffness(cfg: &TrialConfig, seed: u64) -> Result<FitReport> {
    let results: Vec<TrialResult> = Terrain::ALL
        .par_iter()
        .map(|&t| run_trial(Group::A, t, cfg, seed))
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    for r in &results {
        samples.extend(gait_samples(r, cfg, 100.0)?);
    }
    fit_stiffness(&samples, &FitOptions::default())
}
