//! Synthetic sagittal-plane IMU readings from rigid-body limb kinematics.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::limb::{shank_point_acceleration, JointState, LimbParams};

pub const CHANNELS: usize = 9;

pub const CHANNEL_NAMES: [&str; CHANNELS] = [
    "shank_ax", "shank_az", "shank_gy", "heel_ax", "heel_az", "heel_gy", "toe_ax", "toe_az", "toe_gy",
];

/// Sensor mount on the shank+foot body: `along` meters down the shank axis
/// from the knee, `forward` meters toward the toes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mount {
    pub along: f64,
    pub forward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuConfig {
    pub shank: Mount,
    /// Offsets of the heel and toe sensors below the ankle, m.
    pub heel: Mount,
    pub toe: Mount,
    /// Per-sample noise σ, m/s² and rad/s.
    pub accel_noise: f64,
    pub gyro_noise: f64,
    /// Per-trial constant bias σ.
    pub accel_bias: f64,
    pub gyro_bias: f64,
    pub rate_hz: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            shank: Mount { along: 0.20, forward: 0.05 },
            heel: Mount { along: 0.06, forward: -0.05 },
            toe: Mount { along: 0.07, forward: 0.15 },
            accel_noise: 0.05,
            gyro_noise: 0.01,
            accel_bias: 0.05,
            gyro_bias: 0.005,
            rate_hz: 100.0,
        }
    }
}

impl ImuConfig {
    pub fn noiseless() -> Self {
        Self { accel_noise: 0.0, gyro_noise: 0.0, accel_bias: 0.0, gyro_bias: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.accel_noise, self.gyro_noise, self.accel_bias, self.gyro_bias];
        if !sig.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidParam("imu noise levels must be >= 0".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidParam("imu.rate_hz must be > 0".into()));
        }
        Ok(())
    }

    /// Mounts in channel order, with foot offsets resolved against the
    /// shank length.
    pub fn mounts(&self, params: &LimbParams) -> [Mount; 3] {
        let foot = |m: Mount| Mount { along: params.shank_length + m.along, forward: m.forward };
        [self.shank, foot(self.heel), foot(self.toe)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub channels: [f64; CHANNELS],
}

/// Noise-free `(a_x, a_z, ω_y)` of one sensor in its own frame: x along the
/// shank normal (forward), z up the shank axis. Accelerometers read specific
/// force, so a sensor at rest reads +g along its vertical.
pub fn ideal_reading(params: &LimbParams, state: &JointState, qddot: &Vector2<f64>, mount: Mount) -> [f64; 3] {
    let acc = shank_point_acceleration(params, state, qddot, mount.along, mount.forward);
    let specific = acc + Vector2::new(0.0, params.gravity);
    let phi = state.q[0] - state.q[1];
    let normal = Vector2::new(phi.cos(), phi.sin());
    let up = Vector2::new(-phi.sin(), phi.cos());
    [specific.dot(&normal), specific.dot(&up), state.qdot[0] - state.qdot[1]]
}

pub fn ideal_channels(params: &LimbParams, state: &JointState, qddot: &Vector2<f64>, cfg: &ImuConfig) -> [f64; CHANNELS] {
    let mut out = [0.0; CHANNELS];
    for (i, m) in cfg.mounts(params).into_iter().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(&ideal_reading(params, state, qddot, m));
    }
    out
}

/// Sensor set with a per-trial bias drawn once at construction.
#[derive(Debug, Clone)]
pub struct ImuSynth {
    pub config: ImuConfig,
    bias: [f64; CHANNELS],
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative")
}

impl ImuSynth {
    pub fn new<R: Rng>(config: ImuConfig, rng: &mut R) -> Self {
        let mut bias = [0.0; CHANNELS];
        for (i, b) in bias.iter_mut().enumerate() {
            let sigma = if i % 3 == 2 { config.gyro_bias } else { config.accel_bias };
            *b = normal(sigma).sample(rng);
        }
        Self { config, bias }
    }

    pub fn bias(&self) -> &[f64; CHANNELS] {
        &self.bias
    }

    pub fn sample<R: Rng>(
        &self,
        params: &LimbParams,
        state: &JointState,
        qddot: &Vector2<f64>,
        t: f64,
        rng: &mut R,
    ) -> ImuSample {
        let mut channels = ideal_channels(params, state, qddot, &self.config);
        for (i, c) in channels.iter_mut().enumerate() {
            let sigma = if i % 3 == 2 { self.config.gyro_noise } else { self.config.accel_noise };
            *c += self.bias[i] + normal(sigma).sample(rng);
        }
        ImuSample { t, channels }
    }
}
