//! Receding-horizon assistive knee torque.
//!
//! The decision variable is the knee torque sequence `u_0..u_{H-1}` applied
//! over `H` explicit-Euler steps of the limb model. The cost combines
//! joint-velocity tracking, torque smoothness and deviation from the scaled
//! human torque estimate, plus quadratic penalties on state bounds.

use log::warn;
use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::limb::{accel_partials, compute_dynamics_terms, GroundForce, JointState, LimbParams, DIVERGENCE_SPEED};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Bounds {
    pub fn symmetric(thigh: f64, knee: f64) -> Self {
        Self { min: Vector2::new(-thigh, -knee), max: Vector2::new(thigh, knee) }
    }

    fn validate(&self, name: &str) -> Result<()> {
        for i in 0..2 {
            if !(self.min[i] < self.max[i]) {
                return Err(Error::InvalidParam(format!("{name} bounds must satisfy min < max")));
            }
        }
        Ok(())
    }

    /// Squared violation and its gradient.
    fn penalty(&self, x: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let mut value = 0.0;
        let mut grad = Vector2::zeros();
        for i in 0..2 {
            let v = (x[i] - self.max[i]).max(0.0) - (self.min[i] - x[i]).max(0.0);
            value += v * v;
            grad[i] = 2.0 * v;
        }
        (value, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub alpha: f64,
    pub q_bounds: Bounds,
    pub qdot_bounds: Bounds,
    pub qddot_bounds: Bounds,
    /// N·m
    pub tau_limit: f64,
    pub penalty_weight: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub cost_tol: f64,
    /// When false the controller passes the clamped desired torque through.
    pub solver_enabled: bool,
    /// PD gains of the corrective torque the prediction model assumes the
    /// human adds when the limb strays from the reference (hip, knee).
    /// Zero gains reduce the prediction to pure held estimates.
    pub reaction_stiffness: Vector2<f64>,
    pub reaction_damping: Vector2<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            horizon: 50,
            dt: 0.04,
            w1: 1.0,
            w2: 0.15,
            w3: 0.5,
            alpha: 0.3,
            q_bounds: Bounds { min: Vector2::new(-45.0 * deg, -5.0 * deg), max: Vector2::new(70.0 * deg, 120.0 * deg) },
            qdot_bounds: Bounds::symmetric(10.0, 15.0),
            qddot_bounds: Bounds::symmetric(150.0, 250.0),
            tau_limit: 30.0,
            penalty_weight: 1e3,
            max_iters: 200,
            grad_tol: 1e-6,
            cost_tol: 1e-10,
            solver_enabled: true,
            reaction_stiffness: Vector2::new(150.0, 40.0),
            reaction_damping: Vector2::new(15.0, 2.0),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParam("mpc.h must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam("mpc.dt must be > 0".into()));
        }
        if ![self.w1, self.w2, self.w3, self.penalty_weight].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidParam("mpc weights must be >= 0".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidParam("mpc.alpha must be >= 0".into()));
        }
        if !(self.tau_limit > 0.0) {
            return Err(Error::InvalidParam("mpc.tau_limit must be > 0".into()));
        }
        let gains = self.reaction_stiffness.iter().chain(self.reaction_damping.iter());
        if !gains.into_iter().all(|g| *g >= 0.0 && g.is_finite()) {
            return Err(Error::InvalidParam("mpc reaction gains must be >= 0".into()));
        }
        self.q_bounds.validate("q")?;
        self.qdot_bounds.validate("qdot")?;
        self.qddot_bounds.validate("qddot")?;
        Ok(())
    }

    pub fn clamp(&self, tau: f64) -> f64 {
        tau.clamp(-self.tau_limit, self.tau_limit)
    }
}

pub fn desired_assist_torque(tau_h_hat: f64, alpha: f64) -> f64 {
    alpha * tau_h_hat
}

/// State-dependent human torque `K (q_ref - q) + D (qdot_ref - qdot)`
/// added to the prediction; `q_ref` has `H + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanReaction {
    pub q_ref: Vec<Vector2<f64>>,
    pub stiffness: Vector2<f64>,
    pub damping: Vector2<f64>,
}

/// One horizon's worth of data. Sequence lengths: `qdot_ref` and `tau_d`
/// have `H + 1` entries (indices `0..=H`); `tau_other` has `H` entries,
/// the non-exoskeleton generalized torque applied during each step.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub params: LimbParams,
    pub initial: JointState,
    pub qdot_ref: Vec<Vector2<f64>>,
    pub tau_d: Vec<f64>,
    pub tau_other: Vec<Vector2<f64>>,
    pub reaction: Option<HumanReaction>,
}

impl MpcProblem {
    pub fn horizon(&self) -> usize {
        self.tau_other.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        if h == 0 {
            return Err(Error::Shape("mpc problem horizon is zero".into()));
        }
        if self.qdot_ref.len() != h + 1 || self.tau_d.len() != h + 1 {
            return Err(Error::Shape(format!(
                "mpc problem expects {} reference and desired-torque entries, got {} and {}",
                h + 1,
                self.qdot_ref.len(),
                self.tau_d.len()
            )));
        }
        if let Some(r) = &self.reaction {
            if r.q_ref.len() != h + 1 {
                return Err(Error::Shape(format!("reaction expects {} reference angles, got {}", h + 1, r.q_ref.len())));
            }
            if !r.q_ref.iter().chain([&r.stiffness, &r.damping]).all(|v| v.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFinite("mpc reaction"));
            }
        }
        let finite = self.initial.is_finite()
            && self.qdot_ref.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.tau_d.iter().all(|x| x.is_finite())
            && self.tau_other.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::NonFinite("mpc problem"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub smoothness: f64,
    pub deviation: f64,
    /// Already multiplied by the penalty weight.
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.tracking + self.smoothness + self.deviation + self.penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorquePlan {
    pub tau_e: Vec<f64>,
    pub cost: f64,
    pub breakdown: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted iterate, starting with the initial plan.
    pub history: Vec<f64>,
}

/// States `x_0..x_H` and accelerations `qddot_0..qddot_{H-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<JointState>,
    pub qddot: Vec<Vector2<f64>>,
}

fn total_torque(problem: &MpcProblem, i: usize, x: &JointState, u: f64) -> Vector2<f64> {
    let mut tau = problem.tau_other[i] + Vector2::new(0.0, u);
    if let Some(r) = &problem.reaction {
        tau += r.stiffness.component_mul(&(r.q_ref[i] - x.q)) + r.damping.component_mul(&(problem.qdot_ref[i] - x.qdot));
    }
    tau
}

/// Explicit-Euler rollout with dynamics re-evaluated at every step.
pub fn rollout(problem: &MpcProblem, plan: &[f64], dt: f64) -> Result<Rollout> {
    let h = problem.horizon();
    if plan.len() != h {
        return Err(Error::Shape(format!("plan has {} entries, horizon is {h}", plan.len())));
    }
    let mut states = Vec::with_capacity(h + 1);
    let mut qddot = Vec::with_capacity(h);
    let mut x = problem.initial;
    states.push(x);
    for (i, &u) in plan.iter().enumerate() {
        let terms = compute_dynamics_terms(&problem.params, &x).map_err(|_| Error::InfeasibleRollout { step: i })?;
        let rhs = total_torque(problem, i, &x, u) - terms.coriolis_matrix * x.qdot - terms.gravity_vector;
        let a = terms
            .mass_matrix
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::InfeasibleRollout { step: i })?;
        let next = JointState::new(x.q + dt * x.qdot, x.qdot + dt * a);
        if !next.is_finite() || next.qdot.amax() > DIVERGENCE_SPEED {
            return Err(Error::InfeasibleRollout { step: i + 1 });
        }
        qddot.push(a);
        states.push(next);
        x = next;
    }
    Ok(Rollout { states, qddot })
}

pub fn cost(problem: &MpcProblem, plan: &[f64], roll: &Rollout, config: &MpcConfig) -> CostBreakdown {
    let h = problem.horizon();
    let mut out = CostBreakdown::default();
    for i in 0..=h {
        let e = problem.qdot_ref[i] - roll.states[i].qdot;
        out.tracking += config.w1 * e.norm_squared();
    }
    for i in 0..h.saturating_sub(1) {
        out.smoothness += config.w2 * (plan[i + 1] - plan[i]).powi(2);
    }
    for (d, p) in problem.tau_d[1..].iter().zip(&plan[..h]) {
        out.deviation += config.w3 * (d - p).powi(2);
    }
    let mut pen = 0.0;
    for x in &roll.states {
        pen += config.q_bounds.penalty(&x.q).0 + config.qdot_bounds.penalty(&x.qdot).0;
    }
    for a in &roll.qddot {
        pen += config.qddot_bounds.penalty(a).0;
    }
    out.penalty = config.penalty_weight * pen;
    out
}

/// Cost and its exact gradient with respect to the plan, by reverse
/// accumulation through the rollout.
pub fn cost_and_gradient(problem: &MpcProblem, plan: &[f64], config: &MpcConfig) -> Result<(CostBreakdown, Vec<f64>)> {
    let h = problem.horizon();
    let dt = config.dt;
    let roll = rollout(problem, plan, dt)?;
    let breakdown = cost(problem, plan, &roll, config);
    let pw = config.penalty_weight;

    let state_grad = |i: usize| -> (Vector2<f64>, Vector2<f64>) {
        let x = &roll.states[i];
        let gq = pw * config.q_bounds.penalty(&x.q).1;
        let gv = -2.0 * config.w1 * (problem.qdot_ref[i] - x.qdot) + pw * config.qdot_bounds.penalty(&x.qdot).1;
        (gq, gv)
    };

    let mut grad = vec![0.0; h];
    // Adjoint of x_H.
    let (mut lam_q, mut lam_v) = state_grad(h);
    for i in (0..h).rev() {
        let x = &roll.states[i];
        let mut partials = accel_partials(&problem.params, x, &total_torque(problem, i, x, plan[i]))
            .map_err(|_| Error::InfeasibleRollout { step: i })?;
        if let Some(r) = &problem.reaction {
            partials.d_q -= partials.mass_inverse * Matrix2::from_diagonal(&r.stiffness);
            partials.d_qdot -= partials.mass_inverse * Matrix2::from_diagonal(&r.damping);
        }
        let b: Vector2<f64> = partials.mass_inverse.column(1).into();
        let g_acc = pw * config.qddot_bounds.penalty(&roll.qddot[i]).1;

        // Through q_{i+1} = q_i + dt·v_i and v_{i+1} = v_i + dt·a(x_i, u_i);
        // the acceleration penalty at step i also depends on x_i and u_i.
        let sens = dt * lam_v + g_acc;
        grad[i] = b.dot(&sens);

        let (lq, lv) = state_grad(i);
        let new_q = lq + lam_q + partials.d_q.transpose() * sens;
        let new_v = lv + dt * lam_q + lam_v + partials.d_qdot.transpose() * sens;
        lam_q = new_q;
        lam_v = new_v;
    }
    for i in 0..h {
        grad[i] += -2.0 * config.w3 * (problem.tau_d[i + 1] - plan[i]);
        if i + 1 < h {
            let d = 2.0 * config.w2 * (plan[i + 1] - plan[i]);
            grad[i] -= d;
            grad[i + 1] += d;
        }
    }
    Ok((breakdown, grad))
}

fn project(plan: &mut [f64], limit: f64) {
    for u in plan {
        *u = u.clamp(-limit, limit);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected-gradient descent with Barzilai–Borwein steps and a monotone
/// Armijo backtracking line search. `initial` defaults to the desired-torque
/// plan.
pub fn solve(problem: &MpcProblem, config: &MpcConfig, initial: Option<&[f64]>) -> Result<TorquePlan> {
    config.validate()?;
    problem.validate()?;
    let h = problem.horizon();
    let mut u: Vec<f64> = match initial {
        Some(p) if p.len() == h => p.to_vec(),
        Some(p) => return Err(Error::Shape(format!("warm start has {} entries, horizon is {h}", p.len()))),
        None => problem.tau_d[1..].to_vec(),
    };
    project(&mut u, config.tau_limit);
    let (mut breakdown, mut g) = cost_and_gradient(problem, &u, config)?;
    let mut f = breakdown.total();
    let mut history = vec![f];
    let mut step = 1.0 / g.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let pg: f64 = u
            .iter()
            .zip(&g)
            .map(|(ui, gi)| (ui - (ui - gi).clamp(-config.tau_limit, config.tau_limit)).powi(2))
            .sum::<f64>()
            .sqrt();
        if pg < config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        let mut t = step;
        for _ in 0..60 {
            let mut cand: Vec<f64> = u.iter().zip(&g).map(|(ui, gi)| ui - t * gi).collect();
            project(&mut cand, config.tau_limit);
            let d: Vec<f64> = cand.iter().zip(&u).map(|(c, ui)| c - ui).collect();
            let decrease = dot(&g, &d);
            if decrease >= 0.0 {
                break;
            }
            match cost_and_gradient(problem, &cand, config) {
                Ok((b, g_new)) if b.total() <= f + 1e-4 * decrease => {
                    accepted = Some((cand, b, g_new));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some((u_new, b_new, g_new)) = accepted else {
            // No descent possible at machine precision: stationary.
            converged = true;
            break;
        };
        let f_new = b_new.total();
        let s: Vec<f64> = u_new.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * t };
        let gain = f - f_new;
        u = u_new;
        g = g_new;
        f = f_new;
        breakdown = b_new;
        history.push(f);
        if gain < config.cost_tol {
            converged = true;
            break;
        }
    }
    Ok(TorquePlan { tau_e: u, cost: f, breakdown, iterations, converged, history })
}

/// What the controller sees at one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub state: JointState,
    /// Desired joint angles and velocities at `t + i·dt`, `i = 0..=H`.
    pub q_ref: Vec<Vector2<f64>>,
    pub qdot_ref: Vec<Vector2<f64>>,
    /// Hip torque the prediction model assumes the human applies during
    /// each of the `H` steps.
    pub hip_torque: Vec<f64>,
    /// Whether the reference foot is on the ground during each of the `H`
    /// steps; the ground force estimate is held only while it is. Empty
    /// means held throughout.
    pub stance: Vec<bool>,
    /// Human knee torque estimate, N·m (None when the estimator is down).
    pub tau_h_hat: Option<f64>,
    pub grf_hat: Option<GroundForce>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub torque: f64,
    pub desired: f64,
    pub plan: Option<TorquePlan>,
    pub degraded: bool,
}

/// Per-trial controller: owns the warm-start buffer.
#[derive(Debug, Clone)]
pub struct AssistController {
    pub config: MpcConfig,
    pub model: LimbParams,
    warm: Option<Vec<f64>>,
}

impl AssistController {
    pub fn new(config: MpcConfig, model: LimbParams) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        Ok(Self { config, model, warm: None })
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    pub fn warm_start(&self) -> Option<&[f64]> {
        self.warm.as_deref()
    }

    fn external_torque(&self, state: &JointState, grf: &GroundForce) -> Vector2<f64> {
        match crate::limb::foot_jacobian(&self.model, &state.q) {
            Ok(j) => j.transpose() * grf.as_vector(),
            Err(_) => Vector2::zeros(),
        }
    }

    pub fn build_problem(&self, m: &Measurements, tau_h_hat: f64, grf: &GroundForce) -> Result<MpcProblem> {
        let h = self.config.horizon;
        if m.qdot_ref.len() != h + 1 || m.hip_torque.len() != h {
            return Err(Error::Shape(format!(
                "controller expects {} reference velocities and {h} hip torques",
                h + 1
            )));
        }
        let (k, d) = (self.config.reaction_stiffness, self.config.reaction_damping);
        let reaction = if k == Vector2::zeros() && d == Vector2::zeros() {
            None
        } else {
            Some(HumanReaction { q_ref: m.q_ref.clone(), stiffness: k, damping: d })
        };
        let tau_ext = self.external_torque(&m.state, grf);
        let tau_d = vec![desired_assist_torque(tau_h_hat, self.config.alpha); h + 1];
        if !m.stance.is_empty() && m.stance.len() != h {
            return Err(Error::Shape(format!("controller expects {h} stance flags, got {}", m.stance.len())));
        }
        let tau_other = m
            .hip_torque
            .iter()
            .enumerate()
            .map(|(i, hip)| {
                let ext = if m.stance.get(i).copied().unwrap_or(true) { tau_ext } else { Vector2::zeros() };
                ext + Vector2::new(*hip, tau_h_hat)
            })
            .collect();
        Ok(MpcProblem { params: self.model, initial: m.state, qdot_ref: m.qdot_ref.clone(), tau_d, tau_other, reaction })
    }

    /// One receding-horizon tick: returns the first planned torque.
    pub fn step(&mut self, m: &Measurements) -> Result<ControlOutput> {
        let Some(tau_h_hat) = m.tau_h_hat else {
            warn!("human torque estimate unavailable; commanding zero assistance");
            self.warm = None;
            return Ok(ControlOutput { torque: 0.0, desired: 0.0, plan: None, degraded: true });
        };
        let desired = self.config.clamp(desired_assist_torque(tau_h_hat, self.config.alpha));
        if !self.config.solver_enabled {
            return Ok(ControlOutput { torque: desired, desired, plan: None, degraded: false });
        }
        let Some(grf) = m.grf_hat else {
            warn!("ground reaction estimate unavailable; passing desired torque through");
            self.warm = None;
            return Ok(ControlOutput { torque: desired, desired, plan: None, degraded: true });
        };
        let problem = self.build_problem(m, tau_h_hat, &grf)?;
        let warm = self.warm.as_ref().map(|prev| {
            let mut shifted: Vec<f64> = prev[1..].to_vec();
            shifted.push(*prev.last().unwrap_or(&desired));
            shifted
        });
        let plan = match solve(&problem, &self.config, warm.as_deref()) {
            Ok(p) => p,
            Err(e) if e.is_divergence() => {
                warn!("mpc rollout infeasible ({e}); passing desired torque through");
                self.warm = None;
                return Ok(ControlOutput { torque: desired, desired, plan: None, degraded: true });
            }
            Err(e) => return Err(e),
        };
        let torque = self.config.clamp(plan.tau_e[0]);
        self.warm = Some(plan.tau_e.clone());
        Ok(ControlOutput { torque, desired, plan: Some(plan), degraded: false })
    }
}
