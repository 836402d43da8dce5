//! Phase-blended quasi-stiffness model of the human knee moment.
//!
//! Angles are in degrees at this boundary; torques are normalized by body
//! mass (N·m/kg).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sim::terrain::Terrain;

/// Plausible knee range for bilateral angle inputs, degrees.
pub const KNEE_RANGE_DEG: (f64, f64) = (-5.0, 140.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessParams {
    pub k_st: f64,
    pub k_sw: f64,
    pub theta0_st: f64,
    pub theta0_sw: f64,
    pub a: f64,
    pub b: f64,
}

impl Default for StiffnessParams {
    fn default() -> Self {
        Self { k_st: 0.047, k_sw: 0.012, theta0_st: 8.7, theta0_sw: 68.7, a: 0.19, b: 3.85 }
    }
}

impl StiffnessParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.k_st, self.k_sw, self.theta0_st, self.theta0_sw, self.a, self.b];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stiffness parameters"));
        }
        if !(self.k_st > 0.0 && self.k_sw > 0.0) {
            return Err(Error::InvalidParam("stiffness k_st and k_sw must be > 0".into()));
        }
        if !(self.a > 0.0) {
            return Err(Error::InvalidParam("stiffness.a must be > 0".into()));
        }
        if self.theta0_st == self.theta0_sw {
            return Err(Error::InvalidParam("theta0_st and theta0_sw must differ".into()));
        }
        Ok(())
    }

    /// Parameters in a fixed order: k_st, k_sw, theta0_st, theta0_sw, a, b.
    pub fn to_array(&self) -> [f64; 6] {
        [self.k_st, self.k_sw, self.theta0_st, self.theta0_sw, self.a, self.b]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { k_st: v[0], k_sw: v[1], theta0_st: v[2], theta0_sw: v[3], a: v[4], b: v[5] }
    }

    /// Largest relative deviation of any parameter from `reference`.
    pub fn max_relative_error(&self, reference: &StiffnessParams) -> f64 {
        self.to_array()
            .iter()
            .zip(reference.to_array())
            .map(|(x, r)| ((x - r) / r).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralKnees {
    pub theta_kr: f64,
    pub theta_kl: f64,
}

impl BilateralKnees {
    pub fn new(theta_kr: f64, theta_kl: f64) -> Self {
        Self { theta_kr, theta_kl }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_kr.is_finite() && self.theta_kl.is_finite()) {
            return Err(Error::NonFinite("knee angles"));
        }
        let (lo, hi) = KNEE_RANGE_DEG;
        for v in [self.theta_kr, self.theta_kl] {
            if v < lo || v > hi {
                return Err(Error::InvalidParam(format!(
                    "knee angle {v:.2} deg outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct GaitPhase {
    s: f64,
}

impl GaitPhase {
    pub fn new(s: f64) -> Result<Self> {
        if (0.0..1.0).contains(&s) {
            Ok(Self { s })
        } else {
            Err(Error::InvalidParam(format!("gait phase {s} outside [0, 1)")))
        }
    }

    /// Wraps any finite phase into [0, 1).
    pub fn wrapped(s: f64) -> Self {
        let w = s.rem_euclid(1.0);
        Self { s: if w >= 1.0 { 0.0 } else { w } }
    }

    pub fn value(&self) -> f64 {
        self.s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitCycleSample {
    pub time: f64,
    pub s: f64,
    pub knees: BilateralKnees,
    pub tau_h_true: f64,
    pub terrain: Terrain,
}

/// Sigmoid stance/swing weight of the right leg: near 0 in its stance, near 1
/// in its swing.
pub fn stance_swing_blend(knees: &BilateralKnees, a: f64, b: f64) -> f64 {
    let f = (knees.theta_kr - knees.theta_kl) - b;
    1.0 / (1.0 + (-a * f).exp())
}

pub fn estimate_knee_torque(theta_ki: f64, blend: f64, p: &StiffnessParams) -> f64 {
    (1.0 - blend) * p.k_st * (theta_ki - p.theta0_st) + blend * p.k_sw * (theta_ki - p.theta0_sw)
}

/// Right and left knee moment estimates. The left leg is in swing when the
/// right one is in stance, so it is blended with `1 - S`.
pub fn estimate_bilateral(knees: &BilateralKnees, p: &StiffnessParams) -> (f64, f64) {
    let s = stance_swing_blend(knees, p.a, p.b);
    (estimate_knee_torque(knees.theta_kr, s, p), estimate_knee_torque(knees.theta_kl, 1.0 - s, p))
}

/// Phase within the stride that contains `t`, from sorted heel-strike times.
pub fn gait_phase(heel_strikes: &[f64], t: f64) -> Result<GaitPhase> {
    if heel_strikes.len() < 2 {
        return Err(Error::InvalidParam("gait phase needs at least two heel strikes".into()));
    }
    if !t.is_finite() || heel_strikes.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gait phase input"));
    }
    if heel_strikes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam("heel strikes must be strictly increasing".into()));
    }
    let first = heel_strikes[0];
    let last = heel_strikes[heel_strikes.len() - 1];
    if t < first || t > last {
        return Err(Error::Extrapolation { t, first, last });
    }
    if t == last {
        return Ok(GaitPhase { s: 0.0 });
    }
    // Index of the last strike at or before t.
    let k = heel_strikes.partition_point(|&h| h <= t) - 1;
    let s = (t - heel_strikes[k]) / (heel_strikes[k + 1] - heel_strikes[k]);
    Ok(GaitPhase::wrapped(s))
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 8, seed: 0, max_iters: 4000 }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: StiffnessParams,
    pub sse: f64,
    /// Start that produced the winning solution.
    pub best_start: usize,
    /// Final SSE of every start, in start order.
    pub start_sse: Vec<f64>,
    /// Objective trace of the winning start; non-increasing.
    pub history: Vec<f64>,
}

const PHASE_BINS: usize = 10;
const MIN_BLEND_SPAN_DEG: f64 = 10.0;

fn check_fit_data(samples: &[GaitCycleSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Empty("stiffness dataset"));
    }
    for x in samples {
        if !(x.s.is_finite() && x.tau_h_true.is_finite()) {
            return Err(Error::NonFinite("stiffness sample"));
        }
        x.knees.validate()?;
    }
    let mut bins = [false; PHASE_BINS];
    for x in samples {
        let bin = ((GaitPhase::wrapped(x.s).value() * PHASE_BINS as f64) as usize).min(PHASE_BINS - 1);
        bins[bin] = true;
    }
    if let Some(missing) = bins.iter().position(|b| !b) {
        return Err(Error::IllConditioned(format!(
            "samples do not cover a full gait cycle (no data in phase {:.1}-{:.1}); stance and swing are both required",
            missing as f64 / PHASE_BINS as f64,
            (missing + 1) as f64 / PHASE_BINS as f64
        )));
    }
    let diffs = samples.iter().map(|x| x.knees.theta_kr - x.knees.theta_kl);
    let (lo, hi) = diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if lo > -MIN_BLEND_SPAN_DEG || hi < MIN_BLEND_SPAN_DEG {
        return Err(Error::IllConditioned(format!(
            "bilateral knee difference spans [{lo:.2}, {hi:.2}] deg; both legs must alternate stance and swing"
        )));
    }
    let (tlo, thi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x.knees.theta_kr), hi.max(x.knees.theta_kr)));
    if thi - tlo < 1.0 {
        return Err(Error::IllConditioned("right knee angle is nearly constant".into()));
    }
    Ok(())
}

pub fn fit_sse(samples: &[GaitCycleSample], p: &StiffnessParams) -> f64 {
    samples
        .iter()
        .map(|x| {
            let s = stance_swing_blend(&x.knees, p.a, p.b);
            let r = estimate_knee_torque(x.knees.theta_kr, s, p) - x.tau_h_true;
            r * r
        })
        .sum()
}

/// For fixed sigmoid parameters the model is linear in
/// (k_st, k_st·θ0_st, k_sw, k_sw·θ0_sw); solve that least-squares problem.
fn linear_stage(samples: &[GaitCycleSample], a: f64, b: f64) -> Option<StiffnessParams> {
    let mut ata = nalgebra::Matrix4::<f64>::zeros();
    let mut atb = nalgebra::Vector4::<f64>::zeros();
    for x in samples {
        let s = stance_swing_blend(&x.knees, a, b);
        let th = x.knees.theta_kr;
        let row = nalgebra::Vector4::new((1.0 - s) * th, -(1.0 - s), s * th, -s);
        ata += row * row.transpose();
        atb += row * x.tau_h_true;
    }
    let sol = ata.cholesky()?.solve(&atb);
    if !sol.iter().all(|v| v.is_finite()) || sol[0] == 0.0 || sol[2] == 0.0 {
        return None;
    }
    Some(StiffnessParams { k_st: sol[0], k_sw: sol[2], theta0_st: sol[1] / sol[0], theta0_sw: sol[3] / sol[2], a, b })
}

fn encode(p: &StiffnessParams) -> Vec<f64> {
    vec![p.k_st, p.k_sw, p.theta0_st, p.theta0_sw, p.a.ln(), p.b]
}

fn decode(v: &[f64]) -> StiffnessParams {
    StiffnessParams { k_st: v[0], k_sw: v[1], theta0_st: v[2], theta0_sw: v[3], a: v[4].exp(), b: v[5] }
}

struct StartResult {
    params: StiffnessParams,
    sse: f64,
    history: Vec<f64>,
}

fn run_start(samples: &[GaitCycleSample], a0: f64, b0: f64, max_iters: usize) -> Option<StartResult> {
    let profiled = |v: &[f64]| match linear_stage(samples, v[0].exp(), v[1]) {
        Some(p) => fit_sse(samples, &p),
        None => f64::INFINITY,
    };
    let opts = NelderMeadOptions { max_iters, f_tol: 1e-14, x_tol: 1e-10 };
    let outer = nelder_mead(profiled, &[a0.ln(), b0], &[0.3, 2.0], &opts);
    let mut p = linear_stage(samples, outer.x[0].exp(), outer.x[1])?;
    let mut history = outer.history;

    // Joint polish over all six parameters, restarted until it stalls.
    let mut sse = fit_sse(samples, &p);
    history.push(sse);
    for _ in 0..4 {
        let x0 = encode(&p);
        let steps: Vec<f64> = x0.iter().map(|v| 0.02 * v.abs().max(0.05)).collect();
        let polish = nelder_mead(|v| fit_sse(samples, &decode(v)), &x0, &steps, &opts);
        history.extend(polish.history.iter().map(|v| v.min(sse)));
        if polish.f < sse {
            let gain = sse - polish.f;
            p = decode(&polish.x);
            sse = polish.f;
            if gain <= 1e-12 * (1.0 + sse) {
                break;
            }
        } else {
            break;
        }
    }
    Some(StartResult { params: p, sse, history })
}

/// Least-squares fit of all six stiffness parameters to right-knee moment
/// labels. Deterministic for a given seed regardless of thread scheduling.
pub fn fit_stiffness(samples: &[GaitCycleSample], opts: &FitOptions) -> Result<FitReport> {
    check_fit_data(samples)?;
    if opts.starts == 0 {
        return Err(Error::InvalidParam("fit needs at least one start".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<(f64, f64)> = (0..opts.starts)
        .map(|i| {
            if i == 0 {
                (0.2, 0.0)
            } else {
                let a = (rng.random_range(0.03f64.ln()..1.0f64.ln())).exp();
                let b = rng.random_range(-20.0..20.0);
                (a, b)
            }
        })
        .collect();
    let results: Vec<Option<StartResult>> =
        starts.par_iter().map(|&(a, b)| run_start(samples, a, b, opts.max_iters)).collect();

    let start_sse: Vec<f64> = results.iter().map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.sse)).collect();
    let mut best: Option<(usize, &StartResult)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(r) = r {
            if r.params.validate().is_err() {
                continue;
            }
            if best.is_none_or(|(_, b)| r.sse < b.sse) {
                best = Some((i, r));
            }
        }
    }
    let (best_start, r) =
        best.ok_or_else(|| Error::IllConditioned("no start produced a valid parameter set".into()))?;
    Ok(FitReport { params: r.params, sse: r.sse, best_start, start_sse, history: r.history.clone() })
}
