//! Sagittal-plane two-link stance-leg model.
//!
//! Link 1 is the thigh pivoting at a fixed hip, link 2 the lumped shank and
//! foot pivoting at the knee. Coordinates are `q = [theta_t, theta_k]`:
//! `theta_t` is the thigh angle from the downward vertical (flexion, i.e.
//! knee forward, positive) and `theta_k` the relative knee flexion, so the
//! absolute shank angle is `theta_t - theta_k` and `q = [0, 0]` is the fully
//! extended leg hanging straight down. The world frame has x forward and z
//! up with the hip at the origin. Ground contact is a single point at the
//! ankle.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// `|det J|` below this is treated as the extended-knee singularity.
pub const SINGULAR_DET_THRESHOLD: f64 = 1e-6;

/// Mass-matrix condition numbers above this are rejected.
pub const MAX_MASS_CONDITION: f64 = 1e12;

/// Joint speeds beyond this are reported as divergence.
pub const DIVERGENCE_SPEED: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbParams {
    pub thigh_mass: f64,
    /// Shank and foot lumped together.
    pub shank_mass: f64,
    pub thigh_length: f64,
    /// Knee to ankle.
    pub shank_length: f64,
    /// Hip to thigh center of mass.
    pub thigh_com_offset: f64,
    /// Knee to shank-and-foot center of mass.
    pub shank_com_offset: f64,
    /// About the thigh center of mass.
    pub thigh_inertia: f64,
    /// About the shank-and-foot center of mass.
    pub shank_inertia: f64,
    pub gravity: f64,
    /// Whole-body mass, used to normalize forces and torques.
    pub body_mass: f64,
}

impl LimbParams {
    /// Segment parameters from standard anthropometric fractions of body
    /// mass and height (thigh; leg-and-foot lumped).
    pub fn from_anthropometry(body_mass: f64, height: f64) -> Self {
        let thigh_length = 0.245 * height;
        let shank_length = 0.246 * height;
        let thigh_mass = 0.100 * body_mass;
        let shank_mass = 0.061 * body_mass;
        let thigh_gyration = 0.323 * thigh_length;
        let shank_gyration = 0.416 * shank_length;
        Self {
            thigh_mass,
            shank_mass,
            thigh_length,
            shank_length,
            thigh_com_offset: 0.433 * thigh_length,
            shank_com_offset: 0.606 * shank_length,
            thigh_inertia: thigh_mass * thigh_gyration * thigh_gyration,
            shank_inertia: shank_mass * shank_gyration * shank_gyration,
            gravity: 9.81,
            body_mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("thigh_inertia", self.thigh_inertia),
            ("shank_inertia", self.shank_inertia),
            ("body_mass", self.body_mass),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParam(format!("limb.{name} must be > 0, got {value}")));
            }
        }
        if !(self.gravity.is_finite() && self.gravity >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "limb.gravity must be >= 0, got {}",
                self.gravity
            )));
        }
        if !(self.thigh_com_offset > 0.0 && self.thigh_com_offset < self.thigh_length) {
            return Err(Error::InvalidParam(
                "limb.thigh_com_offset must lie strictly inside the thigh".into(),
            ));
        }
        if !(self.shank_com_offset > 0.0 && self.shank_com_offset < self.shank_length) {
            return Err(Error::InvalidParam(
                "limb.shank_com_offset must lie strictly inside the shank".into(),
            ));
        }
        if self.body_mass <= self.thigh_mass + self.shank_mass {
            return Err(Error::InvalidParam(
                "limb.body_mass must exceed the modeled segment masses".into(),
            ));
        }
        Ok(())
    }

    /// Rigidly attaches a point mass to the shank `offset` meters below the
    /// knee, updating the lumped center of mass and inertia.
    pub fn with_shank_attachment(&self, mass: f64, offset: f64) -> Self {
        if mass == 0.0 {
            return *self;
        }
        let total = self.shank_mass + mass;
        let com = (self.shank_mass * self.shank_com_offset + mass * offset) / total;
        let inertia = self.shank_inertia
            + self.shank_mass * (self.shank_com_offset - com).powi(2)
            + mass * (offset - com).powi(2);
        Self {
            shank_mass: total,
            shank_com_offset: com,
            shank_inertia: inertia,
            ..*self
        }
    }

    pub fn body_weight(&self) -> f64 {
        self.body_mass * self.gravity
    }

    // Lumped inertial constants of the closed-form equations.
    fn thigh_term(&self) -> f64 {
        self.thigh_mass * self.thigh_com_offset.powi(2)
            + self.thigh_inertia
            + self.shank_mass * self.thigh_length.powi(2)
    }

    fn shank_term(&self) -> f64 {
        self.shank_mass * self.shank_com_offset.powi(2) + self.shank_inertia
    }

    fn coupling(&self) -> f64 {
        self.shank_mass * self.thigh_length * self.shank_com_offset
    }
}

impl Default for LimbParams {
    fn default() -> Self {
        Self::from_anthropometry(70.0, 1.70)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector2<f64>,
    pub qdot: Vector2<f64>,
}

impl JointState {
    pub fn new(q: Vector2<f64>, qdot: Vector2<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: Vector2<f64>) -> Self {
        Self { q, qdot: Vector2::zeros() }
    }

    pub fn thigh(&self) -> f64 {
        self.q[0]
    }

    pub fn knee(&self) -> f64 {
        self.q[1]
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }

    fn check(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite("joint state"));
        }
        Ok(())
    }
}

/// Knee-only torque vector `[0, tau]`.
pub fn knee_only(tau: f64) -> Vector2<f64> {
    Vector2::new(0.0, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynTerms {
    pub mass_matrix: Matrix2<f64>,
    pub coriolis_matrix: Matrix2<f64>,
    pub gravity_vector: Vector2<f64>,
}

/// Ground reaction force on the foot: `fx` forward, `fz` up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundForce {
    pub fx: f64,
    pub fz: f64,
}

impl GroundForce {
    pub const ZERO: GroundForce = GroundForce { fx: 0.0, fz: 0.0 };

    pub fn new(fx: f64, fz: f64) -> Self {
        Self { fx, fz }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.fx, self.fz)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { fx: self.fx * factor, fz: self.fz * factor }
    }
}

pub fn mass_matrix(params: &LimbParams, knee: f64) -> Matrix2<f64> {
    let a = params.thigh_term();
    let d = params.shank_term();
    let bc = params.coupling() * knee.cos();
    Matrix2::new(a + d + 2.0 * bc, -(d + bc), -(d + bc), d)
}

pub fn compute_dynamics_terms(params: &LimbParams, state: &JointState) -> Result<DynTerms> {
    state.check()?;
    let (thigh, knee) = (state.q[0], state.q[1]);
    let (v1, v2) = (state.qdot[0], state.qdot[1]);
    let h = params.coupling() * knee.sin();
    let shank_abs = thigh - knee;
    let g = params.gravity;
    let m2c2 = params.shank_mass * params.shank_com_offset;
    let thigh_moment = params.thigh_mass * params.thigh_com_offset + params.shank_mass * params.thigh_length;

    Ok(DynTerms {
        mass_matrix: mass_matrix(params, knee),
        coriolis_matrix: Matrix2::new(-h * v2, h * (v2 - v1), h * v1, 0.0),
        gravity_vector: Vector2::new(
            g * (thigh_moment * thigh.sin() + m2c2 * shank_abs.sin()),
            -g * m2c2 * shank_abs.sin(),
        ),
    })
}

/// Knee position in the hip frame.
pub fn knee_position(params: &LimbParams, q: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(params.thigh_length * q[0].sin(), -params.thigh_length * q[0].cos())
}

/// Ankle (contact point) position in the hip frame.
pub fn ankle_position(params: &LimbParams, q: &Vector2<f64>) -> Vector2<f64> {
    let shank_abs = q[0] - q[1];
    knee_position(params, q)
        + params.shank_length * Vector2::new(shank_abs.sin(), -shank_abs.cos())
}

/// Jacobian mapping joint velocities to ankle velocity `(x, z)`.
pub fn foot_jacobian(params: &LimbParams, q: &Vector2<f64>) -> Result<Matrix2<f64>> {
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("joint angles"));
    }
    let (l1, l2) = (params.thigh_length, params.shank_length);
    let shank_abs = q[0] - q[1];
    let (st, ct) = q[0].sin_cos();
    let (sp, cp) = shank_abs.sin_cos();
    Ok(Matrix2::new(
        l1 * ct + l2 * cp,
        -l2 * cp,
        l1 * st + l2 * sp,
        -l2 * sp,
    ))
}

pub fn jacobian_is_singular(jacobian: &Matrix2<f64>) -> bool {
    jacobian.determinant().abs() < SINGULAR_DET_THRESHOLD
}

/// Ankle velocity in the hip frame.
pub fn ankle_velocity(params: &LimbParams, state: &JointState) -> Result<Vector2<f64>> {
    Ok(foot_jacobian(params, &state.q)? * state.qdot)
}

fn spd_condition(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m.determinant();
    let disc = ((tr * tr) / 4.0 - det).max(0.0).sqrt();
    let hi = tr / 2.0 + disc;
    let lo = tr / 2.0 - disc;
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn solve_mass(m: &Matrix2<f64>, rhs: &Vector2<f64>) -> Result<Vector2<f64>> {
    let cond = spd_condition(m);
    if !(cond <= MAX_MASS_CONDITION) {
        return Err(Error::SingularMass(cond));
    }
    let det = m.determinant();
    Ok(Vector2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    ))
}

/// `qddot = M^-1 (tau_e + tau_h + J^T F - C qdot - G)`.
///
/// The assistive model actuates the knee only (`[0, tau]`); the vectors
/// are accepted in full so the simulator can also drive the hip.
pub fn forward_dynamics(
    params: &LimbParams,
    state: &JointState,
    tau_e: &Vector2<f64>,
    tau_h: &Vector2<f64>,
    f_ext: &GroundForce,
) -> Result<Vector2<f64>> {
    let terms = compute_dynamics_terms(params, state)?;
    let tau_ext = foot_jacobian(params, &state.q)?.transpose() * f_ext.as_vector();
    let rhs = tau_e + tau_h + tau_ext
        - terms.coriolis_matrix * state.qdot
        - terms.gravity_vector;
    if !rhs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("applied torques"));
    }
    solve_mass(&terms.mass_matrix, &rhs)
}

/// Recovers the ground force that produced `qddot`:
/// `F = J^-T (M qddot + C qdot + G - tau_e - tau_h)`.
pub fn grf_inverse(
    params: &LimbParams,
    state: &JointState,
    qddot: &Vector2<f64>,
    tau_e: &Vector2<f64>,
    tau_h: &Vector2<f64>,
) -> Result<GroundForce> {
    let terms = compute_dynamics_terms(params, state)?;
    let jac = foot_jacobian(params, &state.q)?;
    let det = jac.determinant();
    if det.abs() < SINGULAR_DET_THRESHOLD {
        return Err(Error::SingularJacobian { det, knee_deg: state.q[1].to_degrees() });
    }
    let tau_ext = terms.mass_matrix * qddot + terms.coriolis_matrix * state.qdot
        + terms.gravity_vector
        - tau_e
        - tau_h;
    // Solve J^T F = tau_ext.
    let jt = jac.transpose();
    let f = Vector2::new(
        (jt[(1, 1)] * tau_ext[0] - jt[(0, 1)] * tau_ext[1]) / det,
        (jt[(0, 0)] * tau_ext[1] - jt[(1, 0)] * tau_ext[0]) / det,
    );
    Ok(GroundForce::new(f[0], f[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Velocity first, then position with the new velocity.
    #[default]
    SemiImplicitEuler,
    /// Position advanced with the old velocity (the MPC prediction scheme).
    ExplicitEuler,
}

pub fn step(
    params: &LimbParams,
    state: &JointState,
    tau_e: &Vector2<f64>,
    tau_h: &Vector2<f64>,
    f_ext: &GroundForce,
    dt: f64,
) -> Result<JointState> {
    step_with(Integrator::SemiImplicitEuler, params, state, tau_e, tau_h, f_ext, dt)
}

pub fn step_with(
    integrator: Integrator,
    params: &LimbParams,
    state: &JointState,
    tau_e: &Vector2<f64>,
    tau_h: &Vector2<f64>,
    f_ext: &GroundForce,
    dt: f64,
) -> Result<JointState> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::InvalidParam(format!("dt must be in (0, 0.05] s, got {dt}")));
    }
    let qddot = forward_dynamics(params, state, tau_e, tau_h, f_ext)?;
    let qdot = state.qdot + dt * qddot;
    let q = match integrator {
        Integrator::SemiImplicitEuler => state.q + dt * qdot,
        Integrator::ExplicitEuler => state.q + dt * state.qdot,
    };
    let speed = qdot.amax();
    if !(speed <= DIVERGENCE_SPEED) {
        return Err(Error::Divergence(speed));
    }
    Ok(JointState { q, qdot })
}

/// Kinetic plus potential energy, with zero potential at the extended,
/// hanging configuration `q = [0, 0]`.
pub fn mechanical_energy(params: &LimbParams, state: &JointState) -> f64 {
    let m = mass_matrix(params, state.q[1]);
    let kinetic = 0.5 * state.qdot.dot(&(m * state.qdot));
    let (thigh, shank_abs) = (state.q[0], state.q[0] - state.q[1]);
    let g = params.gravity;
    let potential = g
        * (params.thigh_mass * params.thigh_com_offset * (1.0 - thigh.cos())
            + params.shank_mass
                * (params.thigh_length * (1.0 - thigh.cos())
                    + params.shank_com_offset * (1.0 - shank_abs.cos())));
    kinetic + potential
}

/// Joint acceleration together with its partial derivatives with respect to
/// `q` and `qdot`, for a fixed generalized torque `tau`.
#[derive(Debug, Clone, Copy)]
pub struct AccelPartials {
    pub qddot: Vector2<f64>,
    pub d_q: Matrix2<f64>,
    pub d_qdot: Matrix2<f64>,
    pub mass_inverse: Matrix2<f64>,
}

pub fn accel_partials(
    params: &LimbParams,
    state: &JointState,
    tau: &Vector2<f64>,
) -> Result<AccelPartials> {
    let terms = compute_dynamics_terms(params, state)?;
    let m = terms.mass_matrix;
    let cond = spd_condition(&m);
    if !(cond <= MAX_MASS_CONDITION) {
        return Err(Error::SingularMass(cond));
    }
    let m_inv = m.try_inverse().ok_or(Error::SingularMass(f64::INFINITY))?;
    let rhs = tau - terms.coriolis_matrix * state.qdot - terms.gravity_vector;
    let qddot = m_inv * rhs;

    let (thigh, knee) = (state.q[0], state.q[1]);
    let (v1, v2) = (state.qdot[0], state.qdot[1]);
    let b = params.coupling();
    let h = b * knee.sin();
    let dh = b * knee.cos();
    let g = params.gravity;
    let m2c2 = params.shank_mass * params.shank_com_offset;
    let thigh_moment = params.thigh_mass * params.thigh_com_offset + params.shank_mass * params.thigh_length;
    let cp = (thigh - knee).cos();

    // d(rhs)/dq = -d(C qdot)/dq - dG/dq
    let dcq_dknee = Vector2::new(dh * (v2 * v2 - 2.0 * v1 * v2), dh * v1 * v1);
    let dg_dthigh = Vector2::new(g * (thigh_moment * thigh.cos() + m2c2 * cp), -g * m2c2 * cp);
    let dg_dknee = Vector2::new(-g * m2c2 * cp, g * m2c2 * cp);
    let dm_dknee = Matrix2::new(-2.0 * h, h, h, 0.0);

    let col_thigh = m_inv * (-dg_dthigh);
    let col_knee = m_inv * (-dcq_dknee - dg_dknee - dm_dknee * qddot);
    let d_q = Matrix2::from_columns(&[col_thigh, col_knee]);

    let dcq_dv1 = Vector2::new(-2.0 * h * v2, 2.0 * h * v1);
    let dcq_dv2 = Vector2::new(2.0 * h * (v2 - v1), 0.0);
    let d_qdot = Matrix2::from_columns(&[m_inv * (-dcq_dv1), m_inv * (-dcq_dv2)]);

    Ok(AccelPartials { qddot, d_q, d_qdot, mass_inverse: m_inv })
}

/// Acceleration of a point rigidly attached to the shank, `along` meters
/// down the shank axis from the knee and `forward` meters perpendicular to
/// it (toward the toes).
pub fn shank_point_acceleration(
    params: &LimbParams,
    state: &JointState,
    qddot: &Vector2<f64>,
    along: f64,
    forward: f64,
) -> Vector2<f64> {
    let shank_abs = state.q[0] - state.q[1];
    let w_t = state.qdot[0];
    let w_s = state.qdot[0] - state.qdot[1];
    let a_t = qddot[0];
    let a_s = qddot[0] - qddot[1];
    let r_knee = knee_position(params, &state.q);
    let knee_acc = a_t * Vector2::new(-r_knee[1], r_knee[0]) - w_t * w_t * r_knee;
    let axis = Vector2::new(shank_abs.sin(), -shank_abs.cos());
    let normal = Vector2::new(shank_abs.cos(), shank_abs.sin());
    let r = along * axis + forward * normal;
    knee_acc + a_s * Vector2::new(-r[1], r[0]) - w_s * w_s * r
}

/// Position of a shank-attached point (see [`shank_point_acceleration`]).
pub fn shank_point_position(params: &LimbParams, q: &Vector2<f64>, along: f64, forward: f64) -> Vector2<f64> {
    let shank_abs = q[0] - q[1];
    knee_position(params, q)
        + along * Vector2::new(shank_abs.sin(), -shank_abs.cos())
        + forward * Vector2::new(shank_abs.cos(), shank_abs.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn state(q: [f64; 2], qd: [f64; 2]) -> JointState {
        JointState::new(Vector2::new(q[0], q[1]), Vector2::new(qd[0], qd[1]))
    }

    #[test]
    fn zero_gravity_at_rest_has_no_bias_terms() {
        let params = LimbParams { gravity: 0.0, ..LimbParams::default() };
        let terms = compute_dynamics_terms(&params, &state([0.4, 0.9], [0.0, 0.0])).unwrap();
        assert_eq!(terms.gravity_vector, Vector2::zeros());
        assert_eq!(terms.coriolis_matrix, Matrix2::zeros());
    }

    #[test]
    fn hanging_configuration_has_zero_gravity_moment() {
        let params = LimbParams::default();
        let terms = compute_dynamics_terms(&params, &state([0.0, 0.0], [0.0, 0.0])).unwrap();
        assert_relative_eq!(terms.gravity_vector[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(terms.gravity_vector[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gravity_vector_is_potential_gradient() {
        let params = LimbParams::default();
        let s = state([0.3, 0.5], [0.0, 0.0]);
        let terms = compute_dynamics_terms(&params, &s).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut plus = s;
            let mut minus = s;
            plus.q[i] += h;
            minus.q[i] -= h;
            let fd = (mechanical_energy(&params, &plus) - mechanical_energy(&params, &minus)) / (2.0 * h);
            assert_relative_eq!(terms.gravity_vector[i], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let params = LimbParams::default();
        let err = compute_dynamics_terms(&params, &state([f64::NAN, 0.0], [0.0, 0.0]));
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn jacobian_at_hanging_pose_matches_closed_form() {
        let params = LimbParams::default();
        let j = foot_jacobian(&params, &Vector2::zeros()).unwrap();
        let (l1, l2) = (params.thigh_length, params.shank_length);
        assert_relative_eq!(j, Matrix2::new(l1 + l2, -l2, 0.0, 0.0), epsilon = 1e-15);
        assert!(jacobian_is_singular(&j));
        let bent = foot_jacobian(&params, &Vector2::new(0.2, 0.4)).unwrap();
        assert!(!jacobian_is_singular(&bent));
        assert_relative_eq!(bent.determinant(), l1 * l2 * 0.4f64.sin(), epsilon = 1e-14);
    }

    #[test]
    fn gravity_compensation_holds_still() {
        let params = LimbParams::default();
        let s = state([0.35, 0.6], [0.0, 0.0]);
        let terms = compute_dynamics_terms(&params, &s).unwrap();
        let qddot = forward_dynamics(&params, &s, &terms.gravity_vector, &Vector2::zeros(), &GroundForce::ZERO).unwrap();
        assert_relative_eq!(qddot.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grf_inverse_rejects_extended_knee() {
        let params = LimbParams::default();
        let err = grf_inverse(&params, &state([0.1, 0.0], [0.0, 0.0]), &Vector2::zeros(), &Vector2::zeros(), &Vector2::zeros());
        assert!(matches!(err, Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn static_stance_force_balances_gravity() {
        let params = LimbParams::default();
        let s = state([0.1, 0.3], [0.0, 0.0]);
        let f = grf_inverse(&params, &s, &Vector2::zeros(), &Vector2::zeros(), &Vector2::zeros()).unwrap();
        let j = foot_jacobian(&params, &s.q).unwrap();
        let g = compute_dynamics_terms(&params, &s).unwrap().gravity_vector;
        assert_relative_eq!(j.transpose() * f.as_vector(), g, epsilon = 1e-10);
    }

    #[test]
    fn static_force_scales_with_mass() {
        let params = LimbParams::default();
        let heavy = LimbParams {
            thigh_mass: 2.0 * params.thigh_mass,
            shank_mass: 2.0 * params.shank_mass,
            thigh_inertia: 2.0 * params.thigh_inertia,
            shank_inertia: 2.0 * params.shank_inertia,
            body_mass: 2.0 * params.body_mass,
            ..params
        };
        let s = state([-0.2, 0.5], [0.0, 0.0]);
        let zero = Vector2::zeros();
        let f1 = grf_inverse(&params, &s, &zero, &zero, &zero).unwrap();
        let f2 = grf_inverse(&heavy, &s, &zero, &zero, &zero).unwrap();
        assert_relative_eq!(f2.fx, 2.0 * f1.fx, max_relative = 1e-12);
        assert_relative_eq!(f2.fz, 2.0 * f1.fz, max_relative = 1e-12);
    }

    #[test]
    fn step_keeps_equilibrium() {
        let params = LimbParams { gravity: 0.0, ..LimbParams::default() };
        let s = state([0.2, 0.3], [0.0, 0.0]);
        let next = step(&params, &s, &Vector2::zeros(), &Vector2::zeros(), &GroundForce::ZERO, 1e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn step_rejects_bad_dt_and_divergence() {
        let params = LimbParams::default();
        let s = state([0.2, 0.3], [0.0, 0.0]);
        let z = Vector2::zeros();
        assert!(step(&params, &s, &z, &z, &GroundForce::ZERO, 0.0).is_err());
        assert!(step(&params, &s, &z, &z, &GroundForce::ZERO, 0.06).is_err());
        let fast = state([0.2, 0.3], [2e3, 0.0]);
        assert!(matches!(
            step(&params, &fast, &z, &z, &GroundForce::ZERO, 1e-3),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn energy_reference_and_mass_scaling() {
        let params = LimbParams::default();
        assert_eq!(mechanical_energy(&params, &state([0.0, 0.0], [0.0, 0.0])), 0.0);
        let doubled = LimbParams {
            thigh_mass: 2.0 * params.thigh_mass,
            shank_mass: 2.0 * params.shank_mass,
            thigh_inertia: 2.0 * params.thigh_inertia,
            shank_inertia: 2.0 * params.shank_inertia,
            ..params
        };
        let s = state([0.4, 0.7], [1.2, -0.8]);
        assert_relative_eq!(
            mechanical_energy(&doubled, &s),
            2.0 * mechanical_energy(&params, &s),
            max_relative = 1e-12
        );
    }

    #[test]
    fn accel_partials_match_finite_differences() {
        let params = LimbParams::default();
        let s = state([0.3, 0.7], [1.1, -2.0]);
        let tau = Vector2::new(3.0, -5.0);
        let p = accel_partials(&params, &s, &tau).unwrap();
        let f = |st: &JointState| forward_dynamics(&params, st, &tau, &Vector2::zeros(), &GroundForce::ZERO).unwrap();
        assert_relative_eq!(p.qddot, f(&s), epsilon = 1e-12);
        let h = 1e-6;
        for i in 0..2 {
            let (mut a, mut b) = (s, s);
            a.q[i] += h;
            b.q[i] -= h;
            let col = (f(&a) - f(&b)) / (2.0 * h);
            assert_relative_eq!(p.d_q.column(i).into_owned(), col, epsilon = 1e-6);
            let (mut a, mut b) = (s, s);
            a.qdot[i] += h;
            b.qdot[i] -= h;
            let col = (f(&a) - f(&b)) / (2.0 * h);
            assert_relative_eq!(p.d_qdot.column(i).into_owned(), col, epsilon = 1e-6);
        }
    }

    #[test]
    fn attachment_shifts_com_and_adds_inertia() {
        let params = LimbParams::default();
        let with = params.with_shank_attachment(0.8, 0.12);
        assert_relative_eq!(with.shank_mass, params.shank_mass + 0.8);
        assert!(with.shank_com_offset < params.shank_com_offset);
        assert!(with.shank_inertia > params.shank_inertia);
        assert!(with.validate().is_ok());
        assert_eq!(params.with_shank_attachment(0.0, 0.12), params);
    }

    #[test]
    fn validate_catches_bad_params() {
        let mut p = LimbParams::default();
        assert!(p.validate().is_ok());
        p.shank_com_offset = p.shank_length * 1.1;
        assert!(p.validate().is_err());
        let p = LimbParams { body_mass: 5.0, ..LimbParams::default() };
        assert!(p.validate().is_err());
    }
}
