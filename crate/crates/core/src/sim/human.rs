//! PD surrogate for the human's own joint torques.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::limb::JointState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanPolicy {
    /// N·m/rad
    pub knee_stiffness: f64,
    /// N·m·s/rad
    pub knee_damping: f64,
    pub hip_stiffness: f64,
    pub hip_damping: f64,
    /// Fraction of the felt exoskeleton torque the human stops producing.
    pub assist_awareness: f64,
}

impl Default for HumanPolicy {
    fn default() -> Self {
        Self {
            knee_stiffness: 1500.0,
            knee_damping: 40.0,
            hip_stiffness: 2000.0,
            hip_damping: 80.0,
            assist_awareness: 0.7,
        }
    }
}

impl HumanPolicy {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.knee_stiffness, self.knee_damping, self.hip_stiffness, self.hip_damping];
        if !gains.iter().all(|g| *g > 0.0 && g.is_finite()) {
            return Err(Error::InvalidParam("human PD gains must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.assist_awareness) {
            return Err(Error::InvalidParam("human.assist_awareness must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Knee torque: PD tracking of the reference minus the offloaded share
    /// of the exoskeleton torque.
    pub fn human_torque(&self, state: &JointState, reference: &JointState, felt_assist: f64) -> f64 {
        let pd = self.knee_stiffness * (reference.q[1] - state.q[1])
            + self.knee_damping * (reference.qdot[1] - state.qdot[1]);
        pd - self.assist_awareness * felt_assist
    }

    /// Hip torque that keeps the thigh on its reference. Not offloaded,
    /// since the exoskeleton acts at the knee only.
    pub fn hip_torque(&self, state: &JointState, reference: &JointState) -> f64 {
        self.hip_stiffness * (reference.q[0] - state.q[0]) + self.hip_damping * (reference.qdot[0] - state.qdot[0])
    }

    pub fn joint_torques(&self, state: &JointState, reference: &JointState, felt_assist: f64) -> Vector2<f64> {
        Vector2::new(self.hip_torque(state, reference), self.human_torque(state, reference, felt_assist))
    }
}
