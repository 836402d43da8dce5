//! Groups A-D across both terrains and a set of seeds.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::dataset::calibrate_stiffness;
use crate::sim::trial::{run_trial, Group, TrialConfig, TrialMetrics};
use crate::sim::Terrain;
use crate::stiffness::StiffnessParams;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub trial: TrialConfig,
    /// Fit the stiffness model to an unassisted calibration trial before
    /// running the assisted groups.
    pub calibrate: bool,
    pub calibration_seed: u64,
    pub phase_bins: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { trial: TrialConfig::default(), calibrate: true, calibration_seed: 1000, phase_bins: 100 }
    }
}

/// One (group, terrain, seed) trial. A failed trial keeps its error message.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub group: Group,
    pub terrain: Terrain,
    pub seed: u64,
    pub outcome: std::result::Result<TrialMetrics, String>,
}

/// Mean applied exoskeleton torque per phase bin, averaged over the
/// successful seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCurve {
    pub group: Group,
    pub terrain: Terrain,
    pub tau_e_mean: Vec<f64>,
}

impl PhaseCurve {
    /// Mean of |τ_e| over bins `lo..hi`.
    pub fn mean_abs(&self, lo: usize, hi: usize) -> f64 {
        let part = &self.tau_e_mean[lo..hi];
        part.iter().map(|v| v.abs()).sum::<f64>() / part.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(v: &[f64]) -> MeanSd {
    if v.is_empty() {
        return MeanSd { mean: f64::NAN, sd: f64::NAN };
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    MeanSd { mean, sd }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub group: Group,
    pub terrain: Terrain,
    pub ok: usize,
    pub failed: usize,
    pub tracking_rmse: MeanSd,
    pub human_rms: MeanSd,
    pub exo_rms: MeanSd,
    pub peak_exo: MeanSd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Sorted by group, terrain, seed.
    pub cells: Vec<Cell>,
    /// Groups C and D on both terrains.
    pub curves: Vec<PhaseCurve>,
    /// Stiffness parameters the assisted groups used.
    pub stiffness: StiffnessParams,
}

impl BenchmarkReport {
    pub fn metrics(&self, group: Group, terrain: Terrain) -> Vec<(u64, TrialMetrics)> {
        self.cells
            .iter()
            .filter(|c| c.group == group && c.terrain == terrain)
            .filter_map(|c| c.outcome.as_ref().ok().map(|m| (c.seed, *m)))
            .collect()
    }

    pub fn curve(&self, group: Group, terrain: Terrain) -> Option<&PhaseCurve> {
        self.curves.iter().find(|c| c.group == group && c.terrain == terrain)
    }

    pub fn summary(&self) -> Vec<CellSummary> {
        let mut out = Vec::new();
        for g in Group::ALL {
            for t in Terrain::ALL {
                let cells: Vec<&Cell> = self.cells.iter().filter(|c| c.group == g && c.terrain == t).collect();
                if cells.is_empty() {
                    continue;
                }
                let ok: Vec<TrialMetrics> = cells.iter().filter_map(|c| c.outcome.as_ref().ok().copied()).collect();
                let col = |f: fn(&TrialMetrics) -> f64| mean_sd(&ok.iter().map(f).collect::<Vec<_>>());
                out.push(CellSummary {
                    group: g,
                    terrain: t,
                    ok: ok.len(),
                    failed: cells.len() - ok.len(),
                    tracking_rmse: col(|m| m.tracking_rmse),
                    human_rms: col(|m| m.human_rms),
                    exo_rms: col(|m| m.exo_rms),
                    peak_exo: col(|m| m.peak_exo),
                });
            }
        }
        out
    }

    /// Human-readable table of mean ± sd per group and terrain.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let p = self.stiffness;
        writeln!(
            s,
            "stiffness: k_st {:.4} k_sw {:.4} theta0_st {:.2} theta0_sw {:.2} a {:.4} b {:.3}",
            p.k_st, p.k_sw, p.theta0_st, p.theta0_sw, p.a, p.b
        )
        .unwrap();
        writeln!(
            s,
            "{:<5} {:<7} {:>4} {:>20} {:>20} {:>20} {:>20}",
            "group", "terrain", "n", "tracking_rmse rad/s", "human_rms N·m", "exo_rms N·m", "peak_exo N·m"
        )
        .unwrap();
        let f = |m: MeanSd, d: usize| format!("{:.*} ± {:.*}", d, m.mean, d, m.sd);
        for c in self.summary() {
            writeln!(
                s,
                "{:<5} {:<7} {:>4} {:>20} {:>20} {:>20} {:>20}",
                c.group.to_string(),
                c.terrain.as_str(),
                c.ok,
                f(c.tracking_rmse, 4),
                f(c.human_rms, 3),
                f(c.exo_rms, 3),
                f(c.peak_exo, 3)
            )
            .unwrap();
            if c.failed > 0 {
                writeln!(s, "      {} trial(s) failed", c.failed).unwrap();
            }
        }
        for cell in &self.cells {
            if let Err(e) = &cell.outcome {
                writeln!(s, "failed: group {} {} seed {}: {e}", cell.group, cell.terrain.as_str(), cell.seed).unwrap();
            }
        }
        s
    }
}

/// Runs every group on both terrains for each seed. Trials run in parallel;
/// a failed trial is recorded in its cell and does not stop the others.
pub fn compare_groups(cfg: &BenchmarkConfig, seeds: &[u64]) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidParam("benchmark needs at least one seed".into()));
    }
    if cfg.phase_bins == 0 {
        return Err(Error::InvalidParam("benchmark.phase_bins must be >= 1".into()));
    }
    cfg.trial.validate()?;
    let mut trial = cfg.trial.clone();
    if cfg.calibrate {
        let fit = calibrate_stiffness(&cfg.trial, cfg.calibration_seed)?;
        log::info!("calibrated stiffness parameters {:?} (sse {:.4e})", fit.params, fit.sse);
        trial.stiffness = fit.params;
    }
    trial.record_imu = false;

    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let mut jobs: Vec<(Group, Terrain, u64)> = Vec::new();
    for g in Group::ALL {
        for t in Terrain::ALL {
            jobs.extend(seeds.iter().map(|&s| (g, t, s)));
        }
    }
    let bins = cfg.phase_bins;
    let runs: Vec<(Cell, Option<Vec<f64>>)> = jobs
        .par_iter()
        .map(|&(group, terrain, seed)| match run_trial(group, terrain, &trial, seed) {
            Ok(r) => {
                let curve = group.powered().then(|| r.phase_curve(bins, trial.warmup_strides));
                (Cell { group, terrain, seed, outcome: Ok(r.metrics) }, curve)
            }
            Err(e) => {
                log::warn!("group {group} {} seed {seed} failed: {e}", terrain.as_str());
                (Cell { group, terrain, seed, outcome: Err(e.to_string()) }, None)
            }
        })
        .collect();

    let mut curves = Vec::new();
    for g in [Group::C, Group::D] {
        for t in Terrain::ALL {
            let list: Vec<&Vec<f64>> = runs
                .iter()
                .filter(|(c, _)| c.group == g && c.terrain == t)
                .filter_map(|(_, curve)| curve.as_ref())
                .collect();
            let mut mean = vec![0.0; bins];
            for c in &list {
                for (m, v) in mean.iter_mut().zip(c.iter()) {
                    *m += v / list.len() as f64;
                }
            }
            if list.is_empty() {
                mean.fill(f64::NAN);
            }
            curves.push(PhaseCurve { group: g, terrain: t, tau_e_mean: mean });
        }
    }
    Ok(BenchmarkReport { cells: runs.into_iter().map(|(c, _)| c).collect(), curves, stiffness: trial.stiffness })
}
