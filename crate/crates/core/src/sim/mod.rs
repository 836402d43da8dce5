//! Closed-loop walking simulation and its supporting models.

pub mod actuator;
pub mod benchmark;
pub mod dataset;
pub mod human;
pub mod imu;
pub mod reference;
pub mod terrain;
pub mod trial;

pub use terrain::Terrain;
