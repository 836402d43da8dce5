//! Sliding windows over IMU streams, with per-channel standardization.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::grf_net::model::Target;
use crate::sim::imu::CHANNELS;
use crate::sim::Terrain;

/// Per-channel mean and standard deviation from the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

/// Channels whose spread is below this are treated as constant.
const MIN_STD: f64 = 1e-12;

impl Standardizer {
    pub fn identity() -> Self {
        Self { mean: [0.0; CHANNELS], std: [1.0; CHANNELS] }
    }

    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64; CHANNELS]>,
    {
        let mut n = 0usize;
        let mut mean = [0.0; CHANNELS];
        let mut m2 = [0.0; CHANNELS];
        // Welford, channel by channel.
        for row in rows {
            n += 1;
            for c in 0..CHANNELS {
                let d = row[c] - mean[c];
                mean[c] += d / n as f64;
                m2[c] += d * (row[c] - mean[c]);
            }
        }
        if n == 0 {
            return Err(Error::Empty("imu stream"));
        }
        let std = m2.map(|v| (v / n as f64).sqrt());
        if !mean.iter().chain(&std).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("imu stream"));
        }
        Ok(Self { mean, std })
    }

    /// Standardized value of one channel. Constant channels map to 0.
    pub fn apply(&self, channel: usize, value: f64) -> f64 {
        let sd = self.std[channel];
        if sd < MIN_STD {
            0.0
        } else {
            (value - self.mean[channel]) / sd
        }
    }
}

/// Overlapping windows of `window_len` samples, advancing `stride` samples at
/// a time, standardized. Shape: windows × window_len × channels.
pub fn featurize(
    stream: &[[f64; CHANNELS]],
    window_len: usize,
    stride: usize,
    standardizer: &Standardizer,
) -> Result<Array3<f64>> {
    if window_len < 2 {
        return Err(Error::InvalidParam(format!("window length must be >= 2, got {window_len}")));
    }
    if stride == 0 {
        return Err(Error::InvalidParam("window stride must be >= 1".into()));
    }
    if stream.len() < window_len {
        return Err(Error::Shape(format!(
            "stream of {} samples is shorter than one window of {window_len}",
            stream.len()
        )));
    }
    let starts: Vec<usize> = (0..=stream.len() - window_len).step_by(stride).collect();
    Ok(Array3::from_shape_fn((starts.len(), window_len, CHANNELS), |(w, t, c)| {
        standardizer.apply(c, stream[starts[w] + t][c])
    }))
}

/// Ground truth attached to one IMU sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub fx_norm: f64,
    pub fz_norm: f64,
    pub terrain: Terrain,
    pub stance: bool,
}

/// A contiguous, uniformly sampled recording. Windows never straddle two
/// segments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segment {
    pub imu: Vec<[f64; CHANNELS]>,
    pub labels: Vec<Label>,
}

/// Windows with the labels of their last sample.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub windows: Array3<f64>,
    pub targets: Vec<Target>,
    pub stance: Vec<bool>,
    pub terrain: Vec<Terrain>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn stance_count(&self, terrain: Terrain) -> usize {
        self.stance.iter().zip(&self.terrain).filter(|(s, t)| **s && **t == terrain).count()
    }

    /// Subset in the given order.
    pub fn select(&self, idx: &[usize]) -> WindowSet {
        let (_, t, c) = self.windows.dim();
        WindowSet {
            windows: Array3::from_shape_fn((idx.len(), t, c), |(w, k, ch)| self.windows[(idx[w], k, ch)]),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            stance: idx.iter().map(|&i| self.stance[i]).collect(),
            terrain: idx.iter().map(|&i| self.terrain[i]).collect(),
        }
    }
}

/// Windows from every segment long enough to hold one; shorter segments are
/// skipped.
pub fn build_windows(
    segments: &[Segment],
    window_len: usize,
    stride: usize,
    standardizer: &Standardizer,
) -> Result<WindowSet> {
    let mut blocks = Vec::new();
    let mut targets = Vec::new();
    let mut stance = Vec::new();
    let mut terrain = Vec::new();
    for seg in segments {
        if seg.imu.len() != seg.labels.len() {
            return Err(Error::Shape(format!(
                "segment has {} imu rows but {} labels",
                seg.imu.len(),
                seg.labels.len()
            )));
        }
        if seg.imu.len() < window_len {
            continue;
        }
        let w = featurize(&seg.imu, window_len, stride, standardizer)?;
        for k in 0..w.shape()[0] {
            let l = seg.labels[k * stride + window_len - 1];
            targets.push(Target {
                fx: l.fx_norm,
                fz: l.fz_norm,
                terrain: l.terrain.label(),
            });
            stance.push(l.stance);
            terrain.push(l.terrain);
        }
        blocks.push(w);
    }
    if blocks.is_empty() {
        return Err(Error::Empty("window set"));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let windows = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(WindowSet { windows, targets, stance, terrain })
}
