// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod grf_net;
pub mod io;
pub mod limb;
pub mod mpc;
pub mod optim;
pub mod sim;
pub mod stiffness;

pub use error::{Error, Result};
pub use sim::Terrain;
