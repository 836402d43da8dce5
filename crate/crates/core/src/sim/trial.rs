//! One closed-loop walking trial on a treadmill-like virtual ground.
//!
//! The hip is fixed in space. Pelvis vertical motion is folded into a
//! phase-dependent ground height: during stance the ground sits slightly
//! above the reference ankle path, so the foot loads it, and during swing it
//! drops away. The ground surface moves with the reference foot, and the
//! reaction leans toward the hip, where the rest of the body's weight acts.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::limb::{
    ankle_position, compute_dynamics_terms, foot_jacobian, forward_dynamics, grf_inverse, jacobian_is_singular,
    step, GroundForce, JointState, LimbParams,
};
use crate::mpc::{AssistController, ControlOutput, Measurements, MpcConfig};
use crate::sim::actuator::{ActuatorParams, ActuatorState};
use crate::sim::human::HumanPolicy;
use crate::sim::imu::{ImuConfig, ImuSample, ImuSynth, CHANNELS};
use crate::sim::reference::{ReferenceGait, StrideSchedule};
use crate::sim::terrain::{ContactKinematics, PlasticState, Terrain, TerrainModel};
use crate::stiffness::{estimate_knee_torque, stance_swing_blend, BilateralKnees, StiffnessParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// No exoskeleton.
    A,
    /// Exoskeleton worn, motor off.
    B,
    /// Scaled stiffness torque passed straight to the motor.
    C,
    /// Scaled stiffness torque refined by the receding-horizon optimizer.
    D,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::A, Group::B, Group::C, Group::D];

    pub fn wears_exo(&self) -> bool {
        !matches!(self, Group::A)
    }

    pub fn powered(&self) -> bool {
        matches!(self, Group::C | Group::D)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Group::A => "A",
            Group::B => "B",
            Group::C => "C",
            Group::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Group::A),
            "B" => Ok(Group::B),
            "C" => Ok(Group::C),
            "D" => Ok(Group::D),
            other => Err(Error::InvalidParam(format!("unknown group '{other}' (expected A, B, C or D)"))),
        }
    }
}

/// Source of the human knee torque and ground force estimates fed to the
/// controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    /// Stiffness model for the torque; noisy or learned ground force.
    Stiffness,
    /// True human torque and true ground force.
    Oracle,
}

impl FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stiffness" => Ok(EstimatorMode::Stiffness),
            "oracle" => Ok(EstimatorMode::Oracle),
            other => Err(Error::InvalidParam(format!("unknown estimator '{other}'"))),
        }
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorMode::Stiffness => "stiffness",
            EstimatorMode::Oracle => "oracle",
        })
    }
}

/// Body-weight-normalized ground force and terrain probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfEstimate {
    pub fx_norm: f64,
    pub fz_norm: f64,
    pub terrain_prob: f64,
}

/// Anything that maps a window of raw 9-channel IMU samples to a ground
/// force estimate.
pub trait GrfPredictor: Send + Sync {
    fn window_len(&self) -> usize;
    fn predict(&self, window: &[[f64; CHANNELS]]) -> Result<GrfEstimate>;
}

#[derive(Clone, Default)]
pub enum GrfSource {
    /// Contact force plus Gaussian noise of the configured σ (body weights).
    #[default]
    Oracle,
    Network(Arc<dyn GrfPredictor>),
}

impl fmt::Debug for GrfSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrfSource::Oracle => f.write_str("Oracle"),
            GrfSource::Network(_) => f.write_str("Network(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExoAttachment {
    pub mass: f64,
    /// Below the knee, m.
    pub offset: f64,
    /// Viscous knee friction, N·m·s/rad.
    pub friction: f64,
}

impl Default for ExoAttachment {
    fn default() -> Self {
        Self { mass: 0.8, offset: 0.12, friction: 0.05 }
    }
}

/// Ground height relative to the reference ankle path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundProfile {
    /// Peak stance penetration scale, m.
    pub preload: f64,
    /// Depth of the mid-stance dip between the two loading peaks, in [0, 0.5).
    pub hump: f64,
    /// Swing clearance, m.
    pub clearance: f64,
    /// Exponent warping stance time so the load peaks later (1 = symmetric).
    pub skew: f64,
}

impl GroundProfile {
    pub fn preset(terrain: Terrain) -> Self {
        match terrain {
            Terrain::Solid => Self { preload: 0.019, hump: 0.20, clearance: 0.05, skew: 1.0 },
            Terrain::Sand => Self { preload: 0.055, hump: 0.05, clearance: 0.05, skew: 2.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.preload >= 0.0 && self.clearance > 0.0 && (0.0..0.5).contains(&self.hump) && self.skew >= 1.0) {
            return Err(Error::InvalidParam(
                "ground profile: preload >= 0, clearance > 0, hump in [0, 0.5), skew >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Target penetration and its phase derivative.
    pub fn penetration(&self, s: f64, toe_off: f64) -> (f64, f64) {
        use std::f64::consts::PI;
        if s < toe_off {
            let x = s / toe_off;
            let u = x.powf(self.skew);
            let du = if x > 0.0 { self.skew * x.powf(self.skew - 1.0) / toe_off } else { 0.0 };
            let h = self.hump;
            let shape = (1.0 - h) - h * (4.0 * PI * u).cos();
            let dshape = 4.0 * PI * h * (4.0 * PI * u).sin();
            let (sn, cs) = (PI * u).sin_cos();
            let p = self.preload * sn * shape;
            let dp = self.preload * (PI * cs * shape + sn * dshape) * du;
            (p, dp)
        } else {
            let span = 1.0 - toe_off;
            let v = (s - toe_off) / span;
            let (sn, cs) = (PI * v).sin_cos();
            (-self.clearance * sn, -self.clearance * PI * cs / span)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub subject: LimbParams,
    pub exo: ExoAttachment,
    pub human: HumanPolicy,
    pub actuator: ActuatorParams,
    pub mpc: MpcConfig,
    pub stiffness: StiffnessParams,
    /// Multiplies the normalized stiffness torque before use.
    pub torque_scale: f64,
    pub solid: TerrainModel,
    pub sand: TerrainModel,
    pub ground_solid: GroundProfile,
    pub ground_sand: GroundProfile,
    pub dt_inner: f64,
    pub duration: f64,
    pub stride_period: f64,
    /// Relative σ of per-stride period variation.
    pub stride_jitter: f64,
    /// Oscillation amplitude scales of the reference gait.
    pub thigh_amplitude: f64,
    pub knee_amplitude: f64,
    pub estimator: EstimatorMode,
    /// σ of the oracle ground-force estimate noise, body weights.
    pub grf_noise: f64,
    pub grf_source: GrfSource,
    /// Strides excluded from the metrics while the gait settles.
    pub warmup_strides: usize,
    pub imu: ImuConfig,
    pub record_imu: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            subject: LimbParams::default(),
            exo: ExoAttachment::default(),
            human: HumanPolicy::default(),
            actuator: ActuatorParams::default(),
            mpc: MpcConfig::default(),
            stiffness: StiffnessParams::default(),
            torque_scale: 1.0,
            solid: TerrainModel::solid(),
            sand: TerrainModel::sand(),
            ground_solid: GroundProfile::preset(Terrain::Solid),
            ground_sand: GroundProfile::preset(Terrain::Sand),
            dt_inner: 1e-3,
            duration: 12.0,
            stride_period: 1.1,
            stride_jitter: 0.02,
            thigh_amplitude: 1.0,
            knee_amplitude: 1.0,
            estimator: EstimatorMode::Stiffness,
            grf_noise: 0.03,
            grf_source: GrfSource::Oracle,
            warmup_strides: 1,
            imu: ImuConfig::default(),
            record_imu: false,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.subject.validate()?;
        self.human.validate()?;
        self.actuator.validate()?;
        self.mpc.validate()?;
        self.stiffness.validate()?;
        self.solid.validate()?;
        self.sand.validate()?;
        self.ground_solid.validate()?;
        self.ground_sand.validate()?;
        self.imu.validate()?;
        if self.solid.kind != Terrain::Solid || self.sand.kind != Terrain::Sand {
            return Err(Error::InvalidParam("terrain presets are swapped".into()));
        }
        if !(self.exo.mass >= 0.0 && self.exo.offset > 0.0 && self.exo.friction >= 0.0) {
            return Err(Error::InvalidParam("exo mass and friction must be >= 0, offset > 0".into()));
        }
        if !(self.dt_inner > 0.0 && self.dt_inner <= 0.01) {
            return Err(Error::InvalidParam("sim.dt_inner must be in (0, 0.01]".into()));
        }
        let ratio = self.mpc.dt / self.dt_inner;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::InvalidParam("mpc.dt must be a whole multiple of sim.dt_inner".into()));
        }
        let imu_ratio = 1.0 / (self.imu.rate_hz * self.dt_inner);
        if (imu_ratio - imu_ratio.round()).abs() > 1e-9 || imu_ratio.round() < 1.0 {
            return Err(Error::InvalidParam("imu.rate_hz must divide the inner simulation rate".into()));
        }
        if !(self.duration > 0.0 && self.stride_period > 0.2 && self.stride_jitter >= 0.0 && self.stride_jitter < 0.2) {
            return Err(Error::InvalidParam("sim duration, stride period or jitter out of range".into()));
        }
        if !(self.torque_scale > 0.0 && self.grf_noise >= 0.0) {
            return Err(Error::InvalidParam("torque scale must be > 0 and grf noise >= 0".into()));
        }
        Ok(())
    }

    pub fn terrain_model(&self, terrain: Terrain) -> &TerrainModel {
        match terrain {
            Terrain::Solid => &self.solid,
            Terrain::Sand => &self.sand,
        }
    }

    pub fn ground(&self, terrain: Terrain) -> &GroundProfile {
        match terrain {
            Terrain::Solid => &self.ground_solid,
            Terrain::Sand => &self.ground_sand,
        }
    }

    /// Limb parameters of the plant for a group.
    pub fn plant(&self, group: Group) -> LimbParams {
        if group.wears_exo() {
            self.subject.with_shank_attachment(self.exo.mass, self.exo.offset)
        } else {
            self.subject
        }
    }

    fn control_every(&self) -> usize {
        (self.mpc.dt / self.dt_inner).round() as usize
    }

    fn imu_every(&self) -> usize {
        (1.0 / (self.imu.rate_hz * self.dt_inner)).round() as usize
    }
}

/// One inner-loop sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSample {
    pub t: f64,
    pub s: f64,
    pub stride: usize,
    pub state: JointState,
    pub reference: JointState,
    /// Human knee and hip torques, N·m.
    pub tau_h: f64,
    pub tau_hip: f64,
    pub tau_e_cmd: f64,
    pub tau_e: f64,
    pub grf: GroundForce,
    pub grf_hat: GroundForce,
    /// Held controller estimate of the human knee torque, N·m.
    pub tau_h_hat: f64,
    /// Knee-channel torque estimation error at the last control tick, N·m.
    pub delta_tau: f64,
    pub contact: bool,
}

/// IMU features with their ground-truth labels, at the IMU rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledImu {
    pub imu: ImuSample,
    pub fx_norm: f64,
    pub fz_norm: f64,
    pub stance: bool,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialMetrics {
    /// RMS joint-velocity tracking error over both joints, rad/s.
    pub tracking_rmse: f64,
    /// RMS human knee torque, N·m.
    pub human_rms: f64,
    pub exo_rms: f64,
    pub peak_exo: f64,
    pub strides: usize,
    pub stride_mean: f64,
    pub stride_sd: f64,
    pub delta_tau_rms: f64,
    pub peak_fz_norm: f64,
    pub degraded_ticks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub group: Group,
    pub terrain: Terrain,
    pub seed: u64,
    pub samples: Vec<TrialSample>,
    pub imu: Vec<LabeledImu>,
    pub heel_strikes: Vec<f64>,
    pub metrics: TrialMetrics,
}

impl TrialResult {
    /// Mean applied exoskeleton torque in each of `bins` phase bins, over
    /// the samples that count toward the metrics.
    pub fn phase_curve(&self, bins: usize, warmup_strides: usize) -> Vec<f64> {
        let mut sum = vec![0.0; bins];
        let mut count = vec![0usize; bins];
        for x in self.samples.iter().filter(|x| x.stride >= warmup_strides) {
            let b = ((x.s * bins as f64) as usize).min(bins - 1);
            sum[b] += x.tau_e;
            count[b] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }
}

/// Independent random streams derived from one trial seed.
pub(crate) mod stream {
    pub const STRIDES: u64 = 1;
    pub const GRF: u64 = 2;
    pub const ACTUATOR: u64 = 3;
    pub const IMU: u64 = 4;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn schedule(cfg: &TrialConfig, seed: u64) -> Result<StrideSchedule> {
    let mut rng = rng_for(seed, stream::STRIDES);
    let jitter = Normal::new(0.0, cfg.stride_jitter.max(0.0)).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let base = cfg.stride_period;
    let periods = std::iter::from_fn(move || Some(base * (1.0 + jitter.sample(&mut rng)).clamp(0.8, 1.2)));
    StrideSchedule::from_periods(periods, cfg.duration)
}

/// Joint-space reference at a phase for a stride period.
fn reference_state(gait: &ReferenceGait, s: f64, period: f64) -> JointState {
    let r = gait.at(s);
    JointState::new(r.q, r.qdot(period))
}

/// Ground height in the hip frame and its time derivative.
fn ground_height(
    subject: &LimbParams,
    gait: &ReferenceGait,
    profile: &GroundProfile,
    s: f64,
    period: f64,
) -> Result<(f64, f64)> {
    let r = gait.at(s);
    let z = ankle_position(subject, &r.q)[1];
    let dz_ds = (foot_jacobian(subject, &r.q)? * r.dq_ds)[1];
    let (p, dp_ds) = profile.penetration(s, gait.toe_off);
    Ok((z + p, (dz_ds + dp_ds) / period))
}

/// Human knee torque estimate from the stiffness model, converted to a
/// flexion-positive joint torque in N·m. The model output is an
/// extension moment that resists departure from the equilibrium angle.
pub fn stiffness_torque_estimate(cfg: &TrialConfig, knees: &BilateralKnees) -> f64 {
    let p = &cfg.stiffness;
    let blend = stance_swing_blend(knees, p.a, p.b);
    let normalized = estimate_knee_torque(knees.theta_kr, blend, p) * cfg.torque_scale;
    -normalized * cfg.subject.body_mass
}

/// Inverse-dynamics hip torque along the reference over the horizon, less
/// the held external torque; this is the hip torque the prediction model
/// assumes.
fn hip_feedforward(
    cfg: &TrialConfig,
    model: &LimbParams,
    gait: &ReferenceGait,
    s0: f64,
    period: f64,
    tau_ext_hip: f64,
    stance: &[bool],
) -> Result<Vec<f64>> {
    let h = cfg.mpc.horizon;
    (0..h)
        .map(|i| {
            let tau_ext_hip = if stance[i] { tau_ext_hip } else { 0.0 };
            let s = s0 + i as f64 * cfg.mpc.dt / period;
            let r = gait.at(s.rem_euclid(1.0));
            let state = JointState::new(r.q, r.qdot(period));
            let terms = compute_dynamics_terms(model, &state)?;
            let tau = terms.mass_matrix * r.qddot(period) + terms.coriolis_matrix * state.qdot + terms.gravity_vector;
            Ok(tau[0] - tau_ext_hip)
        })
        .collect()
}

fn diverged(t: f64, state: &JointState, source: Error) -> Error {
    Error::TrialDiverged {
        time: t,
        q0: state.q[0],
        q1: state.q[1],
        qd0: state.qdot[0],
        qd1: state.qdot[1],
        source: Box::new(source),
    }
}

pub fn run_trial(group: Group, terrain: Terrain, cfg: &TrialConfig, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let subject = cfg.subject;
    let plant = cfg.plant(group);
    let gait = ReferenceGait::with_amplitude(terrain, cfg.thigh_amplitude, cfg.knee_amplitude)?;
    let model = cfg.terrain_model(terrain);
    let profile = cfg.ground(terrain);
    let sched = schedule(cfg, seed)?;
    let weight = subject.body_weight();

    let mut grf_rng = rng_for(seed, stream::GRF);
    let mut act_rng = rng_for(seed, stream::ACTUATOR);
    let mut imu_rng = rng_for(seed, stream::IMU);
    let grf_noise = Normal::new(0.0, cfg.grf_noise).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let act_noise =
        Normal::new(0.0, cfg.actuator.noise_std).map_err(|e| Error::InvalidParam(e.to_string()))?;

    let mut controller = if group.powered() {
        let mut mpc = cfg.mpc;
        if group == Group::C {
            mpc.solver_enabled = false;
        }
        Some(AssistController::new(mpc, plant)?)
    } else {
        None
    };
    let mut actuator = ActuatorState::new(ActuatorParams { torque_limit: cfg.mpc.tau_limit, ..cfg.actuator });
    let friction = if group.wears_exo() { cfg.exo.friction } else { 0.0 };

    let need_imu = cfg.record_imu || matches!(cfg.grf_source, GrfSource::Network(_));
    let imu_synth = ImuSynth::new(cfg.imu, &mut imu_rng);
    let window_len = match &cfg.grf_source {
        GrfSource::Network(net) => net.window_len(),
        GrfSource::Oracle => 0,
    };
    let mut imu_buffer: Vec<[f64; CHANNELS]> = Vec::new();

    let steps = (cfg.duration / cfg.dt_inner).round() as usize;
    let control_every = cfg.control_every();
    let imu_every = cfg.imu_every();
    let (_, _, period0) = sched.locate(0.0)?;
    let mut state = reference_state(&gait, 0.0, period0);
    let mut plastic = PlasticState::default();

    let mut samples = Vec::with_capacity(steps);
    let mut imu_rows = Vec::new();
    let mut tau_cmd = 0.0;
    let mut tau_e = 0.0;
    let mut tau_h_hat = 0.0;
    let mut grf_hat = GroundForce::ZERO;
    let mut delta_tau = 0.0;
    let mut degraded_ticks = 0;

    for k in 0..steps {
        let t = k as f64 * cfg.dt_inner;
        let (stride, s, period) = sched.locate(t)?;
        let reference = reference_state(&gait, s, period);
        let ref_point = gait.at(s);
        let ground_vx = (foot_jacobian(&subject, &ref_point.q)? * ref_point.qdot(period))[0];

        // Contact.
        let (z_ground, zdot_ground) = ground_height(&subject, &gait, profile, s, period)?;
        let ankle = ankle_position(&plant, &state.q);
        let jac = foot_jacobian(&plant, &state.q).map_err(|e| diverged(t, &state, e))?;
        let ankle_vel = jac * state.qdot;
        let kin = ContactKinematics {
            penetration: z_ground - ankle[1],
            penetration_rate: zdot_ground - ankle_vel[1],
            slip_velocity: ankle_vel[0] - ground_vx,
            load_direction: ankle[0] / ankle[1].min(-1e-3),
        };
        let (grf, next_plastic) = model.contact_force(&kin, plastic);
        plastic = next_plastic;
        let contact = grf.fz > 0.0;

        // Human torques react to the torque currently felt from the device.
        let tau_h = cfg.human.human_torque(&state, &reference, tau_e);
        let tau_hip = cfg.human.hip_torque(&state, &reference);

        if k % control_every == 0 {
            if let Some(ctrl) = controller.as_mut() {
                let grf_est = match (&cfg.grf_source, cfg.estimator) {
                    (_, EstimatorMode::Oracle) => Some(grf),
                    (GrfSource::Oracle, EstimatorMode::Stiffness) => Some(GroundForce::new(
                        grf.fx + weight * grf_noise.sample(&mut grf_rng),
                        grf.fz + weight * grf_noise.sample(&mut grf_rng),
                    )),
                    (GrfSource::Network(net), EstimatorMode::Stiffness) => {
                        if imu_buffer.len() >= window_len {
                            let est = net.predict(&imu_buffer[imu_buffer.len() - window_len..])?;
                            Some(GroundForce::new(est.fx_norm * weight, est.fz_norm * weight))
                        } else {
                            None
                        }
                    }
                };
                let estimate = match cfg.estimator {
                    EstimatorMode::Oracle => tau_h,
                    EstimatorMode::Stiffness => {
                        let knees = BilateralKnees::new(state.q[1].to_degrees(), gait.knee_deg(s + 0.5));
                        stiffness_torque_estimate(cfg, &knees)
                    }
                };
                tau_h_hat = estimate;
                grf_hat = grf_est.unwrap_or(GroundForce::ZERO);
                let ext_true = jac.transpose() * grf.as_vector();
                let ext_hat = jac.transpose() * grf_hat.as_vector();
                delta_tau = (tau_h - tau_h_hat) + (ext_true[1] - ext_hat[1]);

                let out: ControlOutput = if ctrl.config.solver_enabled {
                    let h = ctrl.config.horizon;
                    let (q_ref, qdot_ref) = (0..=h)
                        .map(|i| {
                            let si = (s + i as f64 * ctrl.config.dt / period).rem_euclid(1.0);
                            let r = gait.at(si);
                            (r.q, r.qdot(period))
                        })
                        .unzip();
                    let stance: Vec<bool> = (0..h)
                        .map(|i| gait.in_stance((s + i as f64 * ctrl.config.dt / period).rem_euclid(1.0)))
                        .collect();
                    let hip_torque = hip_feedforward(cfg, &plant, &gait, s, period, ext_hat[0], &stance)?;
                    let m = Measurements {
                        state,
                        q_ref,
                        qdot_ref,
                        hip_torque,
                        stance,
                        tau_h_hat: Some(estimate),
                        grf_hat: grf_est,
                    };
                    ctrl.step(&m)?
                } else {
                    let m = Measurements {
                        state,
                        q_ref: Vec::new(),
                        qdot_ref: Vec::new(),
                        hip_torque: Vec::new(),
                        stance: Vec::new(),
                        tau_h_hat: Some(estimate),
                        grf_hat: grf_est,
                    };
                    ctrl.step(&m)?
                };
                if out.degraded {
                    degraded_ticks += 1;
                }
                tau_cmd = out.torque;
            }
        }

        tau_e = if group.powered() {
            actuator.step(tau_cmd, cfg.dt_inner, act_noise.sample(&mut act_rng))
        } else {
            0.0
        };

        let exo_vec = Vector2::new(0.0, tau_e - friction * state.qdot[1]);
        let human_vec = Vector2::new(tau_hip, tau_h);

        if need_imu && k % imu_every == 0 {
            let qddot = forward_dynamics(&plant, &state, &exo_vec, &human_vec, &grf)
                .map_err(|e| diverged(t, &state, e))?;
            let imu = imu_synth.sample(&plant, &state, &qddot, t, &mut imu_rng);
            let label = if contact {
                if jacobian_is_singular(&jac) {
                    grf
                } else {
                    grf_inverse(&plant, &state, &qddot, &exo_vec, &human_vec).unwrap_or(grf)
                }
            } else {
                GroundForce::ZERO
            };
            imu_buffer.push(imu.channels);
            if imu_buffer.len() > 4 * window_len.max(1) {
                imu_buffer.drain(..imu_buffer.len() - window_len.max(1));
            }
            if cfg.record_imu {
                imu_rows.push(LabeledImu {
                    imu,
                    fx_norm: label.fx / weight,
                    fz_norm: label.fz / weight,
                    stance: contact,
                    s,
                });
            }
        }

        samples.push(TrialSample {
            t,
            s,
            stride,
            state,
            reference,
            tau_h,
            tau_hip,
            tau_e_cmd: tau_cmd,
            tau_e,
            grf,
            grf_hat,
            tau_h_hat,
            delta_tau,
            contact,
        });

        state = step(&plant, &state, &exo_vec, &human_vec, &grf, cfg.dt_inner).map_err(|e| diverged(t, &state, e))?;
    }

    let metrics = compute_metrics(&samples, &sched, cfg.warmup_strides, weight, degraded_ticks);
    Ok(TrialResult {
        group,
        terrain,
        seed,
        samples,
        imu: imu_rows,
        heel_strikes: sched.heel_strikes.clone(),
        metrics,
    })
}

fn rms<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn compute_metrics(
    samples: &[TrialSample],
    sched: &StrideSchedule,
    warmup: usize,
    weight: f64,
    degraded_ticks: usize,
) -> TrialMetrics {
    let counted: Vec<&TrialSample> = samples.iter().filter(|x| x.stride >= warmup).collect();
    let counted = if counted.is_empty() { samples.iter().collect() } else { counted };
    let tracking_rmse = (counted
        .iter()
        .map(|x| (x.reference.qdot - x.state.qdot).norm_squared())
        .sum::<f64>()
        / (2 * counted.len()) as f64)
        .sqrt();
    let end = samples.last().map_or(0.0, |x| x.t);
    let periods: Vec<f64> = sched
        .heel_strikes
        .windows(2)
        .filter(|w| w[1] <= end + 1e-12)
        .map(|w| w[1] - w[0])
        .collect();
    let strides = periods.len();
    let stride_mean = if strides > 0 { periods.iter().sum::<f64>() / strides as f64 } else { 0.0 };
    let stride_sd = if strides > 1 {
        (periods.iter().map(|p| (p - stride_mean).powi(2)).sum::<f64>() / (strides - 1) as f64).sqrt()
    } else {
        0.0
    };
    TrialMetrics {
        tracking_rmse,
        human_rms: rms(counted.iter().map(|x| x.tau_h)),
        exo_rms: rms(counted.iter().map(|x| x.tau_e)),
        peak_exo: samples.iter().map(|x| x.tau_e.abs()).fold(0.0, f64::max),
        strides,
        stride_mean,
        stride_sd,
        delta_tau_rms: rms(counted.iter().map(|x| x.delta_tau)),
        peak_fz_norm: counted.iter().map(|x| x.grf.fz / weight).fold(0.0, f64::max),
        degraded_ticks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> TrialConfig {
        TrialConfig { duration: 3.0, ..Default::default() }
    }

    #[test]
    fn ground_profile_shape() {
        let g = GroundProfile::preset(Terrain::Solid);
        assert_eq!(g.penetration(0.0, 0.6).0, 0.0);
        assert!(g.penetration(0.15, 0.6).0 > g.penetration(0.3, 0.6).0);
        assert!(g.penetration(0.8, 0.6).0 < 0.0);
        for g in [g, GroundProfile::preset(Terrain::Sand)] {
            for s in [0.1, 0.33, 0.59, 0.7, 0.95] {
                let h = 1e-6;
                let fd = (g.penetration(s + h, 0.6).0 - g.penetration(s - h, 0.6).0) / (2.0 * h);
                assert!((fd - g.penetration(s, 0.6).1).abs() < 1e-6);
            }
        }
        // Sand carries its load later in stance than solid ground.
        let peak = |g: GroundProfile| {
            (0..600).map(|i| i as f64 * 1e-3).fold((0.0, 0.0), |(bs, bp), s| {
                let p = g.penetration(s, 0.6).0;
                if p > bp { (s, p) } else { (bs, bp) }
            }).0
        };
        assert!(peak(GroundProfile::preset(Terrain::Sand)) > peak(GroundProfile::preset(Terrain::Solid)));
    }

    #[test]
    fn group_a_walks_with_body_weight_loading() {
        let r = run_trial(Group::A, Terrain::Solid, &short(), 1).unwrap();
        assert!(r.metrics.peak_fz_norm > 0.6 && r.metrics.peak_fz_norm < 1.6, "{:?}", r.metrics);
        assert!(r.metrics.tracking_rmse < 1.0, "{:?}", r.metrics);
        assert_eq!(r.metrics.exo_rms, 0.0);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = TrialConfig { duration: 1.5, ..Default::default() };
        let a = run_trial(Group::D, Terrain::Sand, &cfg, 9).unwrap();
        let b = run_trial(Group::D, Terrain::Sand, &cfg, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn applied_torque_respects_limit() {
        let cfg = TrialConfig { duration: 2.0, mpc: MpcConfig { tau_limit: 4.0, ..Default::default() }, ..Default::default() };
        for g in [Group::C, Group::D] {
            let r = run_trial(g, Terrain::Solid, &cfg, 3).unwrap();
            assert!(r.metrics.peak_exo <= 4.0 + 1e-12);
        }
    }

    #[test]
    fn oracle_estimation_has_zero_delta_tau() {
        let cfg = TrialConfig { duration: 2.0, estimator: EstimatorMode::Oracle, ..Default::default() };
        let r = run_trial(Group::C, Terrain::Sand, &cfg, 4).unwrap();
        assert!(r.samples.iter().all(|x| x.delta_tau == 0.0));
    }
}
