//! Low-level torque loop: PI on measured motor torque driving a first-order
//! motor lag.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorParams {
    pub kp: f64,
    /// 1/s
    pub ki: f64,
    /// Motor torque lag, s.
    pub time_constant: f64,
    /// Torque sensor noise σ, N·m.
    pub noise_std: f64,
    /// Symmetric output and integrator limit, N·m.
    pub torque_limit: f64,
}

impl Default for ActuatorParams {
    fn default() -> Self {
        Self { kp: 2.0, ki: 400.0, time_constant: 0.005, noise_std: 0.05, torque_limit: 30.0 }
    }
}

impl ActuatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0) {
            return Err(Error::InvalidParam("actuator PI gains must be >= 0".into()));
        }
        if !(self.time_constant > 0.0) {
            return Err(Error::InvalidParam("actuator.time_constant must be > 0".into()));
        }
        if !(self.noise_std >= 0.0 && self.torque_limit > 0.0) {
            return Err(Error::InvalidParam("actuator noise must be >= 0 and limit > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorState {
    pub params: ActuatorParams,
    /// Integral of torque error, N·m·s.
    pub integrator: f64,
    pub motor_torque: f64,
}

impl ActuatorState {
    pub fn new(params: ActuatorParams) -> Self {
        Self { params, integrator: 0.0, motor_torque: 0.0 }
    }

    /// Advances the loop by `dt` and returns the torque delivered to the
    /// joint. `noise` is the torque-sensor error for this sample.
    pub fn step(&mut self, commanded: f64, dt: f64, noise: f64) -> f64 {
        let p = &self.params;
        let limit = p.torque_limit;
        let command = commanded.clamp(-limit, limit);
        let error = command - (self.motor_torque + noise);
        if p.ki > 0.0 {
            let bound = limit / p.ki;
            self.integrator = (self.integrator + error * dt).clamp(-bound, bound);
        }
        let u = (command + p.kp * error + p.ki * self.integrator).clamp(-limit, limit);
        let blend = 1.0 - (-dt / p.time_constant).exp();
        self.motor_torque += blend * (u - self.motor_torque);
        self.motor_torque
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
        self.motor_torque = 0.0;
    }
}

pub fn pi_actuator_step(act: ActuatorState, commanded: f64, dt: f64, noise: f64) -> (f64, ActuatorState) {
    let mut next = act;
    let applied = next.step(commanded, dt, noise);
    (applied, next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_command_from_rest_stays_zero() {
        let mut a = ActuatorState::new(ActuatorParams::default());
        for _ in 0..100 {
            assert_eq!(a.step(0.0, 1e-3, 0.0), 0.0);
        }
    }

    #[test]
    fn step_response_settles_within_five_lags() {
        let params = ActuatorParams::default();
        let mut a = ActuatorState::new(params);
        let dt = 1e-5;
        let n = (5.0 * params.time_constant / dt).round() as usize;
        let mut out = 0.0;
        for _ in 0..n {
            out = a.step(10.0, dt, 0.0);
        }
        assert!((out - 10.0).abs() < 0.01 * 10.0, "output {out}");
    }

    #[test]
    fn integrator_respects_clamp_under_saturation() {
        let params = ActuatorParams::default();
        let mut a = ActuatorState::new(params);
        for i in 0..5000 {
            let cmd = if i < 2500 { 500.0 } else { -500.0 };
            let out = a.step(cmd, 1e-3, 0.3 * ((i as f64) * 0.1).sin());
            assert!(out.abs() <= params.torque_limit + 1e-12);
            assert!((params.ki * a.integrator).abs() <= params.torque_limit + 1e-9);
        }
    }

    #[test]
    fn functional_form_matches_method() {
        let a = ActuatorState::new(ActuatorParams::default());
        let (out, next) = pi_actuator_step(a, 5.0, 1e-3, 0.0);
        let mut b = a;
        assert_eq!(b.step(5.0, 1e-3, 0.0), out);
        assert_eq!(b, next);
    }
}
