//! Run configuration: a flat `key = value` text format.
//!
//! Lines starting with `#` are comments. Unknown or repeated keys are
//! errors. Angle bounds are given in degrees and converted here. Writing a
//! config emits every key in sorted order, so the file alone reproduces a
//! run.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::grf_net::{NetShape, TrainConfig, DEFAULT_WINDOW};
use crate::limb::LimbParams;
use crate::mpc::{Bounds, MpcConfig};
use crate::sim::benchmark::BenchmarkConfig;
use crate::sim::dataset::DatasetConfig;
use crate::sim::trial::{EstimatorMode, Group, TrialConfig};

pub const HEADER: &str = "# kneeassist effective config v1";

/// Subject anthropometry; segment parameters follow from these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subject {
    pub body_mass: f64,
    pub height: f64,
    pub gravity: f64,
}

/// MPC state bounds in degrees, degrees/s and degrees/s², (hip, knee).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsDeg {
    pub angle_min: [f64; 2],
    pub angle_max: [f64; 2],
    pub velocity_min: [f64; 2],
    pub velocity_max: [f64; 2],
    pub accel_min: [f64; 2],
    pub accel_max: [f64; 2],
}

impl Default for BoundsDeg {
    fn default() -> Self {
        let m = MpcConfig::default();
        // Rounded so the defaults print as plain numbers.
        let deg = |v: Vector2<f64>| [0, 1].map(|i| (v[i].to_degrees() * 1e6).round() / 1e6);
        Self {
            angle_min: deg(m.q_bounds.min),
            angle_max: deg(m.q_bounds.max),
            velocity_min: deg(m.qdot_bounds.min),
            velocity_max: deg(m.qdot_bounds.max),
            accel_min: deg(m.qddot_bounds.min),
            accel_max: deg(m.qddot_bounds.max),
        }
    }
}

fn to_bounds(min: [f64; 2], max: [f64; 2]) -> Bounds {
    Bounds {
        min: Vector2::new(min[0].to_radians(), min[1].to_radians()),
        max: Vector2::new(max[0].to_radians(), max[1].to_radians()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSettings {
    pub shape: NetShape,
    pub window: usize,
    pub stride: usize,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSettings {
    pub seeds: usize,
    pub calibrate: bool,
    pub calibration_seed: u64,
    pub phase_bins: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub subject: Subject,
    pub bounds: BoundsDeg,
    /// Everything else a trial needs. Its subject and MPC bounds are
    /// overwritten from `subject` and `bounds` by [`RunConfig::trial`].
    pub sim: TrialConfig,
    pub net: NetSettings,
    pub dataset_trials: usize,
    pub dataset_group: Group,
    pub benchmark: BenchmarkSettings,
    /// GRF network checkpoint for closed-loop estimation; empty uses the
    /// noisy contact-force oracle.
    pub checkpoint: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let limb = LimbParams::default();
        let bench = BenchmarkConfig::default();
        let ds = DatasetConfig::default();
        Self {
            seed: 0,
            subject: Subject { body_mass: limb.body_mass, height: 1.70, gravity: limb.gravity },
            bounds: BoundsDeg::default(),
            sim: TrialConfig::default(),
            net: NetSettings {
                shape: NetShape::default(),
                window: DEFAULT_WINDOW,
                stride: 1,
                train: TrainConfig::default(),
            },
            dataset_trials: ds.trials_per_terrain,
            dataset_group: ds.group,
            benchmark: BenchmarkSettings {
                seeds: 10,
                calibrate: bench.calibrate,
                calibration_seed: bench.calibration_seed,
                phase_bins: bench.phase_bins,
            },
            checkpoint: String::new(),
        }
    }
}

/// Two configs are equal when they write the same text.
impl PartialEq for RunConfig {
    fn eq(&self, other: &Self) -> bool {
        self.to_text() == other.to_text()
    }
}

/// Value codecs. Floats print in shortest round-trip form.
mod kind {
    use super::*;

    fn bad(key: &str, v: &str, what: &str) -> Error {
        Error::Config(format!("key '{key}': '{v}' is not {what}"))
    }

    pub fn parse_f64(key: &str, v: &str) -> Result<f64> {
        let x: f64 = v.parse().map_err(|_| bad(key, v, "a number"))?;
        if !x.is_finite() {
            return Err(bad(key, v, "a finite number"));
        }
        Ok(x)
    }
    pub fn show_f64(x: &f64) -> String {
        x.to_string()
    }
    pub fn parse_usize(key: &str, v: &str) -> Result<usize> {
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }
    pub fn show_usize(x: &usize) -> String {
        x.to_string()
    }
    pub fn parse_u64(key: &str, v: &str) -> Result<u64> {
        v.parse().map_err(|_| bad(key, v, "a non-negative integer"))
    }
    pub fn show_u64(x: &u64) -> String {
        x.to_string()
    }
    pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
        match v {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(bad(key, v, "true or false")),
        }
    }
    pub fn show_bool(x: &bool) -> String {
        x.to_string()
    }
    pub fn parse_estimator(key: &str, v: &str) -> Result<EstimatorMode> {
        v.parse().map_err(|_| bad(key, v, "'stiffness' or 'oracle'"))
    }
    pub fn show_estimator(x: &EstimatorMode) -> String {
        x.to_string()
    }
    pub fn parse_group(key: &str, v: &str) -> Result<Group> {
        v.parse().map_err(|_| bad(key, v, "a group A-D"))
    }
    pub fn show_group(x: &Group) -> String {
        x.to_string()
    }
    pub fn parse_text(_key: &str, v: &str) -> Result<String> {
        Ok(v.to_string())
    }
    pub fn show_text(x: &str) -> String {
        x.to_string()
    }
}

macro_rules! keys {
    ($( $key:literal => [$($path:tt)+] : $parse:ident / $show:ident ),* $(,)?) => {
        /// Every recognized key, sorted.
        pub fn keys() -> Vec<&'static str> {
            let mut k = vec![$($key),*];
            k.sort_unstable();
            k
        }

        fn set_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $( $key => cfg.$($path)+ = kind::$parse(key, value)?, )*
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            }
            Ok(())
        }

        fn get_key(cfg: &RunConfig, key: &str) -> Option<String> {
            match key {
                $( $key => Some(kind::$show(&cfg.$($path)+)), )*
                _ => None,
            }
        }
    };
}

keys! {
    "seed" => [seed]: parse_u64 / show_u64,

    "limb.body_mass" => [subject.body_mass]: parse_f64 / show_f64,
    "limb.height" => [subject.height]: parse_f64 / show_f64,
    "limb.gravity" => [subject.gravity]: parse_f64 / show_f64,

    "exo.mass" => [sim.exo.mass]: parse_f64 / show_f64,
    "exo.offset" => [sim.exo.offset]: parse_f64 / show_f64,
    "exo.friction" => [sim.exo.friction]: parse_f64 / show_f64,

    "human.knee_stiffness" => [sim.human.knee_stiffness]: parse_f64 / show_f64,
    "human.knee_damping" => [sim.human.knee_damping]: parse_f64 / show_f64,
    "human.hip_stiffness" => [sim.human.hip_stiffness]: parse_f64 / show_f64,
    "human.hip_damping" => [sim.human.hip_damping]: parse_f64 / show_f64,
    "human.assist_awareness" => [sim.human.assist_awareness]: parse_f64 / show_f64,

    "actuator.kp" => [sim.actuator.kp]: parse_f64 / show_f64,
    "actuator.ki" => [sim.actuator.ki]: parse_f64 / show_f64,
    "actuator.time_constant" => [sim.actuator.time_constant]: parse_f64 / show_f64,
    "actuator.noise_std" => [sim.actuator.noise_std]: parse_f64 / show_f64,

    "mpc.horizon" => [sim.mpc.horizon]: parse_usize / show_usize,
    "mpc.dt" => [sim.mpc.dt]: parse_f64 / show_f64,
    "mpc.w1" => [sim.mpc.w1]: parse_f64 / show_f64,
    "mpc.w2" => [sim.mpc.w2]: parse_f64 / show_f64,
    "mpc.w3" => [sim.mpc.w3]: parse_f64 / show_f64,
    "mpc.alpha" => [sim.mpc.alpha]: parse_f64 / show_f64,
    "mpc.tau_limit" => [sim.mpc.tau_limit]: parse_f64 / show_f64,
    "mpc.penalty_weight" => [sim.mpc.penalty_weight]: parse_f64 / show_f64,
    "mpc.max_iters" => [sim.mpc.max_iters]: parse_usize / show_usize,
    "mpc.grad_tol" => [sim.mpc.grad_tol]: parse_f64 / show_f64,
    "mpc.cost_tol" => [sim.mpc.cost_tol]: parse_f64 / show_f64,
    "mpc.reaction_stiffness_hip" => [sim.mpc.reaction_stiffness[0]]: parse_f64 / show_f64,
    "mpc.reaction_stiffness_knee" => [sim.mpc.reaction_stiffness[1]]: parse_f64 / show_f64,
    "mpc.reaction_damping_hip" => [sim.mpc.reaction_damping[0]]: parse_f64 / show_f64,
    "mpc.reaction_damping_knee" => [sim.mpc.reaction_damping[1]]: parse_f64 / show_f64,

    "bounds.hip_angle_min" => [bounds.angle_min[0]]: parse_f64 / show_f64,
    "bounds.hip_angle_max" => [bounds.angle_max[0]]: parse_f64 / show_f64,
    "bounds.knee_angle_min" => [bounds.angle_min[1]]: parse_f64 / show_f64,
    "bounds.knee_angle_max" => [bounds.angle_max[1]]: parse_f64 / show_f64,
    "bounds.hip_velocity_min" => [bounds.velocity_min[0]]: parse_f64 / show_f64,
    "bounds.hip_velocity_max" => [bounds.velocity_max[0]]: parse_f64 / show_f64,
    "bounds.knee_velocity_min" => [bounds.velocity_min[1]]: parse_f64 / show_f64,
    "bounds.knee_velocity_max" => [bounds.velocity_max[1]]: parse_f64 / show_f64,
    "bounds.hip_accel_min" => [bounds.accel_min[0]]: parse_f64 / show_f64,
    "bounds.hip_accel_max" => [bounds.accel_max[0]]: parse_f64 / show_f64,
    "bounds.knee_accel_min" => [bounds.accel_min[1]]: parse_f64 / show_f64,
    "bounds.knee_accel_max" => [bounds.accel_max[1]]: parse_f64 / show_f64,

    "stiffness.k_st" => [sim.stiffness.k_st]: parse_f64 / show_f64,
    "stiffness.k_sw" => [sim.stiffness.k_sw]: parse_f64 / show_f64,
    "stiffness.theta0_st" => [sim.stiffness.theta0_st]: parse_f64 / show_f64,
    "stiffness.theta0_sw" => [sim.stiffness.theta0_sw]: parse_f64 / show_f64,
    "stiffness.a" => [sim.stiffness.a]: parse_f64 / show_f64,
    "stiffness.b" => [sim.stiffness.b]: parse_f64 / show_f64,
    "stiffness.torque_scale" => [sim.torque_scale]: parse_f64 / show_f64,

    "terrain.solid.normal_stiffness" => [sim.solid.normal_stiffness]: parse_f64 / show_f64,
    "terrain.solid.normal_damping" => [sim.solid.normal_damping]: parse_f64 / show_f64,
    "terrain.solid.friction_coefficient" => [sim.solid.friction_coefficient]: parse_f64 / show_f64,
    "terrain.solid.tangential_damping" => [sim.solid.tangential_damping]: parse_f64 / show_f64,
    "terrain.solid.yield_depth" => [sim.solid.yield_depth]: parse_f64 / show_f64,
    "terrain.solid.residual_stiffness_ratio" => [sim.solid.residual_stiffness_ratio]: parse_f64 / show_f64,
    "terrain.solid.preload" => [sim.ground_solid.preload]: parse_f64 / show_f64,
    "terrain.solid.hump" => [sim.ground_solid.hump]: parse_f64 / show_f64,
    "terrain.solid.clearance" => [sim.ground_solid.clearance]: parse_f64 / show_f64,
    "terrain.solid.skew" => [sim.ground_solid.skew]: parse_f64 / show_f64,
    "terrain.sand.normal_stiffness" => [sim.sand.normal_stiffness]: parse_f64 / show_f64,
    "terrain.sand.normal_damping" => [sim.sand.normal_damping]: parse_f64 / show_f64,
    "terrain.sand.friction_coefficient" => [sim.sand.friction_coefficient]: parse_f64 / show_f64,
    "terrain.sand.tangential_damping" => [sim.sand.tangential_damping]: parse_f64 / show_f64,
    "terrain.sand.yield_depth" => [sim.sand.yield_depth]: parse_f64 / show_f64,
    "terrain.sand.residual_stiffness_ratio" => [sim.sand.residual_stiffness_ratio]: parse_f64 / show_f64,
    "terrain.sand.preload" => [sim.ground_sand.preload]: parse_f64 / show_f64,
    "terrain.sand.hump" => [sim.ground_sand.hump]: parse_f64 / show_f64,
    "terrain.sand.clearance" => [sim.ground_sand.clearance]: parse_f64 / show_f64,
    "terrain.sand.skew" => [sim.ground_sand.skew]: parse_f64 / show_f64,

    "sim.dt_inner" => [sim.dt_inner]: parse_f64 / show_f64,
    "sim.duration" => [sim.duration]: parse_f64 / show_f64,
    "sim.stride_period" => [sim.stride_period]: parse_f64 / show_f64,
    "sim.stride_jitter" => [sim.stride_jitter]: parse_f64 / show_f64,
    "sim.thigh_amplitude" => [sim.thigh_amplitude]: parse_f64 / show_f64,
    "sim.knee_amplitude" => [sim.knee_amplitude]: parse_f64 / show_f64,
    "sim.estimator" => [sim.estimator]: parse_estimator / show_estimator,
    "sim.grf_noise" => [sim.grf_noise]: parse_f64 / show_f64,
    "sim.warmup_strides" => [sim.warmup_strides]: parse_usize / show_usize,

    "imu.rate_hz" => [sim.imu.rate_hz]: parse_f64 / show_f64,
    "imu.accel_noise" => [sim.imu.accel_noise]: parse_f64 / show_f64,
    "imu.gyro_noise" => [sim.imu.gyro_noise]: parse_f64 / show_f64,
    "imu.accel_bias" => [sim.imu.accel_bias]: parse_f64 / show_f64,
    "imu.gyro_bias" => [sim.imu.gyro_bias]: parse_f64 / show_f64,
    "imu.shank_along" => [sim.imu.shank.along]: parse_f64 / show_f64,
    "imu.shank_forward" => [sim.imu.shank.forward]: parse_f64 / show_f64,
    "imu.heel_along" => [sim.imu.heel.along]: parse_f64 / show_f64,
    "imu.heel_forward" => [sim.imu.heel.forward]: parse_f64 / show_f64,
    "imu.toe_along" => [sim.imu.toe.along]: parse_f64 / show_f64,
    "imu.toe_forward" => [sim.imu.toe.forward]: parse_f64 / show_f64,

    "net.hidden" => [net.shape.hidden]: parse_usize / show_usize,
    "net.mlp_hidden" => [net.shape.mlp_hidden]: parse_usize / show_usize,
    "net.fused" => [net.shape.fused]: parse_usize / show_usize,
    "net.window" => [net.window]: parse_usize / show_usize,
    "net.stride" => [net.stride]: parse_usize / show_usize,
    "net.lr" => [net.train.lr]: parse_f64 / show_f64,
    "net.batch" => [net.train.batch]: parse_usize / show_usize,
    "net.max_epochs" => [net.train.max_epochs]: parse_usize / show_usize,
    "net.patience" => [net.train.patience]: parse_usize / show_usize,
    "net.lr_patience" => [net.train.lr_patience]: parse_usize / show_usize,
    "net.terrain_weight" => [net.train.terrain_weight]: parse_f64 / show_f64,
    "net.val_fraction" => [net.train.val_fraction]: parse_f64 / show_f64,

    "dataset.trials_per_terrain" => [dataset_trials]: parse_usize / show_usize,
    "dataset.group" => [dataset_group]: parse_group / show_group,

    "benchmark.seeds" => [benchmark.seeds]: parse_usize / show_usize,
    "benchmark.calibrate" => [benchmark.calibrate]: parse_bool / show_bool,
    "benchmark.calibration_seed" => [benchmark.calibration_seed]: parse_u64 / show_u64,
    "benchmark.phase_bins" => [benchmark.phase_bins]: parse_usize / show_usize,

    "io.checkpoint" => [checkpoint]: parse_text / show_text,
}

impl RunConfig {
    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key '{key}' given twice", n + 1)));
            }
            set_key(self, key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        self.validate()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        get_key(self, key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        set_key(self, key, value)
    }

    /// Every key with its value, sorted by key.
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for k in keys() {
            writeln!(out, "{k} = {}", get_key(self, k).expect("listed keys resolve")).unwrap();
        }
        out
    }

    /// Trial configuration with subject and bounds resolved.
    pub fn trial(&self) -> TrialConfig {
        let mut t = self.sim.clone();
        let mut subject = LimbParams::from_anthropometry(self.subject.body_mass, self.subject.height);
        subject.gravity = self.subject.gravity;
        t.subject = subject;
        let b = &self.bounds;
        t.mpc.q_bounds = to_bounds(b.angle_min, b.angle_max);
        t.mpc.qdot_bounds = to_bounds(b.velocity_min, b.velocity_max);
        t.mpc.qddot_bounds = to_bounds(b.accel_min, b.accel_max);
        // The actuator shares the controller's clamp.
        t.actuator.torque_limit = t.mpc.tau_limit;
        t
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig { trial: self.trial(), trials_per_terrain: self.dataset_trials, group: self.dataset_group }
    }

    pub fn benchmark(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            trial: self.trial(),
            calibrate: self.benchmark.calibrate,
            calibration_seed: self.benchmark.calibration_seed,
            phase_bins: self.benchmark.phase_bins,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.net.train }
    }

    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        (!self.checkpoint.is_empty()).then(|| PathBuf::from(&self.checkpoint))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.subject;
        if !(s.body_mass > 0.0 && s.height > 0.0 && s.gravity > 0.0) {
            return Err(Error::Config("limb.body_mass, limb.height and limb.gravity must be > 0".into()));
        }
        let cfg_err = |e: Error| match e {
            Error::InvalidParam(m) => Error::Config(m),
            Error::NonFinite(m) => Error::Config(format!("non-finite value in {m}")),
            other => other,
        };
        self.trial().validate().map_err(cfg_err)?;
        self.net.shape.validate().map_err(cfg_err)?;
        self.train_config().validate().map_err(cfg_err)?;
        if self.net.window < 2 || self.net.stride == 0 {
            return Err(Error::Config("net.window must be >= 2 and net.stride >= 1".into()));
        }
        if self.dataset_trials == 0 {
            return Err(Error::Config("dataset.trials_per_terrain must be >= 1".into()));
        }
        if self.benchmark.seeds == 0 || self.benchmark.phase_bins == 0 {
            return Err(Error::Config("benchmark.seeds and benchmark.phase_bins must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn every_key_is_written_in_sorted_order() {
        let text = RunConfig::default().to_text();
        let written: Vec<&str> = text.lines().skip(1).map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(written, keys());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("mpc.horizon = 10\nmpc.horizn = 3\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("'mpc.horizn'") && m.contains("line 2")), "{err}");
    }

    #[test]
    fn repeated_key_and_bad_value_are_rejected() {
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        let err = RunConfig::parse("mpc.alpha = lots").unwrap_err().to_string();
        assert!(err.contains("mpc.alpha"), "{err}");
    }

    #[test]
    fn invalid_combination_is_a_config_error() {
        assert!(matches!(RunConfig::parse("mpc.dt = 0.0375"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("terrain.solid.yield_depth = 0.01"), Err(Error::Config(_))));
    }

    #[test]
    fn bounds_are_read_in_degrees() {
        let cfg = RunConfig::parse("# tighter knee\nbounds.knee_angle_max = 90\n").unwrap();
        let t = cfg.trial();
        assert!((t.mpc.q_bounds.max[1] - 90f64.to_radians()).abs() < 1e-15);
        assert!((t.mpc.q_bounds.max[0] - 70f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn default_trial_matches_library_defaults() {
        let t = RunConfig::default().trial();
        let d = TrialConfig::default();
        assert_eq!(t.subject, d.subject);
        assert_eq!(t.human, d.human);
        for (a, b) in [(t.mpc.q_bounds, d.mpc.q_bounds), (t.mpc.qdot_bounds, d.mpc.qdot_bounds)] {
            assert!((a.min - b.min).abs().max() < 1e-8 && (a.max - b.max).abs().max() < 1e-8);
        }
    }
}
