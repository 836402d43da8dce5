use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("mass matrix is numerically singular (condition number {0:.3e})")]
    SingularMass(f64),

    #[error(
        "foot jacobian is singular near full knee extension (|det J| = {det:.3e}, knee = {knee_deg:.3} deg)"
    )]
    SingularJacobian { det: f64, knee_deg: f64 },

    #[error("state diverged: |qdot| = {0:.3e} rad/s")]
    Divergence(f64),

    #[error("rollout diverged at horizon step {step}")]
    InfeasibleRollout { step: usize },

    #[error("time {t} s is outside the heel-strike range [{first}, {last}] s")]
    Extrapolation { t: f64, first: f64, last: f64 },

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("trial diverged at t = {time:.3} s (q = [{q0:.4}, {q1:.4}], qdot = [{qd0:.4}, {qd1:.4}]): {source}")]
    TrialDiverged {
        time: f64,
        q0: f64,
        q1: f64,
        qd0: f64,
        qd1: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors that stem from the simulated plant blowing up rather than from
    /// bad inputs.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::Divergence(_)
                | Error::InfeasibleRollout { .. }
                | Error::TrialDiverged { .. }
                | Error::SingularMass(_)
        )
    }
}
