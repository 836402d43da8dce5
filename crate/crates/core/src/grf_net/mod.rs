//! Ground reaction force and terrain estimation from shank, heel and toe
//! IMUs.

pub mod checkpoint;
pub mod features;
pub mod model;
pub mod train;

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::sim::imu::CHANNELS;
use crate::sim::trial::{GrfEstimate, GrfPredictor};

pub use features::{build_windows, featurize, Label, Segment, Standardizer, WindowSet};
pub use model::{NetParams, NetShape, Target};
pub use train::{evaluate, score, train, EvalReport, TerrainScore, TrainConfig, TrainReport};

/// 64 ms at 100 Hz, rounded down to whole samples.
pub const DEFAULT_WINDOW: usize = 6;

/// A trained network together with the input statistics it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfNet {
    pub params: NetParams,
    pub standardizer: Standardizer,
    pub window_len: usize,
}

impl GrfNet {
    pub fn new(params: NetParams, standardizer: Standardizer, window_len: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::InvalidParam(format!("window length must be >= 2, got {window_len}")));
        }
        if params.shape.inputs != CHANNELS {
            return Err(Error::Shape(format!(
                "network has {} inputs, IMU windows have {CHANNELS} channels",
                params.shape.inputs
            )));
        }
        Ok(Self { params, standardizer, window_len })
    }

    pub fn evaluate(&self, set: &WindowSet) -> Result<EvalReport> {
        if set.window_len() != self.window_len {
            return Err(Error::Shape(format!(
                "windows of {} samples, network expects {}",
                set.window_len(),
                self.window_len
            )));
        }
        evaluate(&self.params, set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, checkpoint::to_string(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::from_str(&std::fs::read_to_string(path)?)
    }
}

impl GrfPredictor for GrfNet {
    fn window_len(&self) -> usize {
        self.window_len
    }

    fn predict(&self, window: &[[f64; CHANNELS]]) -> Result<GrfEstimate> {
        if window.len() != self.window_len {
            return Err(Error::Shape(format!("window of {} samples, expected {}", window.len(), self.window_len)));
        }
        let x = Array3::from_shape_fn((1, self.window_len, CHANNELS), |(_, t, c)| {
            self.standardizer.apply(c, window[t][c])
        });
        let out = self.params.forward_batch(&x.view())?.outputs;
        Ok(GrfEstimate {
            fx_norm: out[(0, 0)],
            fz_norm: out[(0, 1)],
            terrain_prob: model::terrain_probability(out[(0, 2)]),
        })
    }
}
