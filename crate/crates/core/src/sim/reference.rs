//! Periodic nominal joint trajectories for level walking on each terrain.

use std::f64::consts::PI;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::sim::terrain::Terrain;
use crate::stiffness::BilateralKnees;

pub const HARMONICS: usize = 5;

/// Truncated Fourier series in degrees over one stride:
/// `mean + Σ cos_n·cos(2πns) + sin_n·sin(2πns)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonics {
    pub mean: f64,
    pub cos: [f64; HARMONICS],
    pub sin: [f64; HARMONICS],
}

impl Harmonics {
    /// From `[a0, a1, b1, a2, b2, ...]`.
    pub const fn from_coefficients(c: [f64; 2 * HARMONICS + 1]) -> Self {
        Self {
            mean: c[0],
            cos: [c[1], c[3], c[5], c[7], c[9]],
            sin: [c[2], c[4], c[6], c[8], c[10]],
        }
    }

    /// Value and first two derivatives with respect to phase.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        let (mut v, mut d1, mut d2) = (self.mean, 0.0, 0.0);
        for n in 0..HARMONICS {
            let w = 2.0 * PI * (n + 1) as f64;
            let (sn, cs) = (w * s).sin_cos();
            v += self.cos[n] * cs + self.sin[n] * sn;
            d1 += w * (-self.cos[n] * sn + self.sin[n] * cs);
            d2 -= w * w * (self.cos[n] * cs + self.sin[n] * sn);
        }
        (v, d1, d2)
    }

    /// Scales every oscillating term about the mean.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { mean: self.mean, cos: self.cos.map(|c| c * factor), sin: self.sin.map(|c| c * factor) }
    }
}

const SOLID_THIGH: Harmonics = Harmonics::from_coefficients([
    8.386496, 18.184535, -6.404294, -0.878638, -2.914164, -0.640378, 0.106095, -0.016849, 0.049692, -0.048977,
    0.021631,
]);
const SOLID_KNEE: Harmonics = Harmonics::from_coefficients([
    23.731908, -4.150752, -19.854103, -13.751086, 7.099718, -0.762667, 2.204003, 0.305997, -0.518707, -0.338107,
    -0.250847,
]);
const SAND_THIGH: Harmonics = Harmonics::from_coefficients([
    10.014373, 18.697382, -7.578060, -0.994787, -2.973417, -0.653719, 0.099055, -0.027533, 0.052676, -0.048741,
    0.023853,
]);
const SAND_KNEE: Harmonics = Harmonics::from_coefficients([
    27.483469, -6.183380, -22.554249, -13.166112, 4.218479, -0.407596, 2.771698, 0.533211, -0.376234, -0.227356,
    -0.265571,
]);

/// Stance fraction of the stride (toe-off phase).
pub const TOE_OFF_PHASE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceGait {
    pub terrain: Terrain,
    pub thigh: Harmonics,
    pub knee: Harmonics,
    pub toe_off: f64,
}

/// Reference joint angles (rad) and their phase derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub q: Vector2<f64>,
    pub dq_ds: Vector2<f64>,
    pub d2q_ds2: Vector2<f64>,
}

impl ReferencePoint {
    /// Joint velocity for a stride of the given period.
    pub fn qdot(&self, period: f64) -> Vector2<f64> {
        self.dq_ds / period
    }

    pub fn qddot(&self, period: f64) -> Vector2<f64> {
        self.d2q_ds2 / (period * period)
    }
}

impl ReferenceGait {
    pub fn preset(terrain: Terrain) -> Self {
        let (thigh, knee) = match terrain {
            Terrain::Solid => (SOLID_THIGH, SOLID_KNEE),
            Terrain::Sand => (SAND_THIGH, SAND_KNEE),
        };
        Self { terrain, thigh, knee, toe_off: TOE_OFF_PHASE }
    }

    /// Preset with the oscillating part of each joint scaled.
    pub fn with_amplitude(terrain: Terrain, thigh_scale: f64, knee_scale: f64) -> Result<Self> {
        if !(thigh_scale > 0.0 && knee_scale > 0.0) {
            return Err(Error::InvalidParam("reference amplitude scales must be > 0".into()));
        }
        let base = Self::preset(terrain);
        Ok(Self { thigh: base.thigh.scaled(thigh_scale), knee: base.knee.scaled(knee_scale), ..base })
    }

    pub fn at(&self, s: f64) -> ReferencePoint {
        let (t, dt, ddt) = self.thigh.eval(s);
        let (k, dk, ddk) = self.knee.eval(s);
        let r = PI / 180.0;
        ReferencePoint {
            q: Vector2::new(t, k) * r,
            dq_ds: Vector2::new(dt, dk) * r,
            d2q_ds2: Vector2::new(ddt, ddk) * r,
        }
    }

    pub fn knee_deg(&self, s: f64) -> f64 {
        self.knee.eval(s).0
    }

    /// Right knee at `s`, left knee half a stride later.
    pub fn bilateral_knees_deg(&self, s: f64) -> BilateralKnees {
        BilateralKnees::new(self.knee_deg(s), self.knee_deg(s + 0.5))
    }

    pub fn in_stance(&self, s: f64) -> bool {
        s.rem_euclid(1.0) < self.toe_off
    }
}

/// Heel-strike times for a trial, with a fixed or jittered stride period.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideSchedule {
    pub heel_strikes: Vec<f64>,
}

impl StrideSchedule {
    pub fn uniform(period: f64, duration: f64) -> Result<Self> {
        Self::from_periods(std::iter::repeat(period), duration)
    }

    /// Builds strikes from successive stride periods until `duration` is
    /// covered (the final strike is at or beyond it).
    pub fn from_periods(periods: impl IntoIterator<Item = f64>, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParam("trial duration must be > 0".into()));
        }
        let mut heel_strikes = vec![0.0];
        for p in periods {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidParam("stride period must be > 0".into()));
            }
            let last = *heel_strikes.last().unwrap();
            heel_strikes.push(last + p);
            if last + p >= duration {
                break;
            }
        }
        if *heel_strikes.last().unwrap() < duration {
            return Err(Error::InvalidParam("not enough stride periods to cover the trial".into()));
        }
        Ok(Self { heel_strikes })
    }

    /// Stride index, phase, and stride period at time `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64, f64)> {
        let hs = &self.heel_strikes;
        let first = hs[0];
        let last = hs[hs.len() - 1];
        if !(t >= first && t <= last) {
            return Err(Error::Extrapolation { t, first, last });
        }
        let k = (hs.partition_point(|&h| h <= t) - 1).min(hs.len() - 2);
        let period = hs[k + 1] - hs[k];
        let s = ((t - hs[k]) / period).clamp(0.0, 1.0);
        if s >= 1.0 {
            return Ok((k + 1, 0.0, period));
        }
        Ok((k, s, period))
    }

    pub fn strides(&self) -> usize {
        self.heel_strikes.len() - 1
    }
}
