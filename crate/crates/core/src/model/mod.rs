//! The coordinate-conditioned scorer.
//!
//! A query segment is turned into a conditioning vector (features at both
//! boundaries, a segment-of-interest pool, and the coordinates normalized by the
//! video duration), pushed through a tanh MLP trunk, a gated recurrent cell and
//! a linear head producing two confidences and a relative boundary offset.
//! All gradients are analytic.

pub mod adam;
pub mod checkpoint;
pub mod network;
pub mod params;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{backward, boundary_forward, forward, OutputGrad, ScorerOutput, StageCache};
pub use params::{Arch, ModelConfig, ScorerParams};
pub use train::{
    fit, init_params, objective, train_epoch, video_objective, OptimConfig, TrainConfig,
    TrainState, TrainingVideo,
};

use crate::error::{Error, Result};
use crate::geometry::{Segment, TimeGrid};

/// A `dim × length` snippet-feature matrix (row-major) with column `k`
/// anchored at time `k · step`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    length: usize,
    step: f64,
    values: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(dim: usize, length: usize, step: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension(
                "feature dimension must be at least 1".into(),
            ));
        }
        if length < 2 {
            return Err(Error::Dimension(format!(
                "feature length {length} must be at least 2"
            )));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Dimension(format!(
                "feature step {step} must be positive"
            )));
        }
        if values.len() != dim * length {
            return Err(Error::LengthMismatch {
                what: "feature values and dim × length",
                left: values.len(),
                right: dim * length,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature values".into()));
        }
        Ok(FeatureSequence {
            dim,
            length,
            step,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn duration(&self) -> f64 {
        self.length as f64 * self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, d: usize, t: usize) -> f64 {
        self.values[d * self.length + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.dim).map(|d| self.get(d, t)).collect()
    }

    /// The snippet lattice the sequence is sampled on.
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            num_snippets: self.length,
            step: self.step,
            duration: self.duration(),
        }
    }

    /// Width of the conditioning vector built from this sequence.
    pub fn conditioning_dim(&self) -> usize {
        conditioning_dim(self.dim)
    }
}

pub fn conditioning_dim(feature_dim: usize) -> usize {
    3 * feature_dim + 2
}

/// Locates `t` on the knot lattice: `(left column, weight of right column,
/// whether t is strictly inside the interpolation range)`.
#[inline]
fn locate(f: &FeatureSequence, t: f64) -> (usize, f64, bool) {
    let last = (f.length - 1) as f64;
    let mut u = t / f.step;
    let inside = u > 0.0 && u < last;
    u = u.clamp(0.0, last);
    let r = u.round();
    if (u - r).abs() < 1e-12 {
        u = r;
    }
    let k = (u.floor() as usize).min(f.length - 2);
    (k, u - k as f64, inside)
}

fn interp_into(f: &FeatureSequence, t: f64, out: &mut [f64]) {
    let (k, w, _) = locate(f, t);
    for (d, o) in out.iter_mut().enumerate() {
        let row = &f.values[d * f.length..];
        *o = (1.0 - w) * row[k] + w * row[k + 1];
    }
}

/// Accumulates `Σ_d g[d] · ∂interp_d/∂t`.
fn interp_dt(f: &FeatureSequence, t: f64, g: &[f64]) -> f64 {
    let (k, _, inside) = locate(f, t);
    if !inside {
        return 0.0;
    }
    let mut acc = 0.0;
    for (d, &gd) in g.iter().enumerate() {
        let row = &f.values[d * f.length..];
        acc += gd * (row[k + 1] - row[k]);
    }
    acc / f.step
}

/// Linear interpolation of the feature columns at time `t`, clamped into
/// `[0, (length − 1) · step]`.
pub fn interpolate_feature(f: &FeatureSequence, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.dim];
    interp_into(f, t, &mut out);
    out
}

/// Interior quadrature points of `x`: `start + (i + ½)/bins · length`.
#[inline]
fn soi_point(x: &Segment, i: usize, bins: usize) -> (f64, f64) {
    let w = (i as f64 + 0.5) / bins as f64;
    (x.start + w * x.length(), w)
}

fn soi_into(f: &FeatureSequence, x: &Segment, bins: usize, out: &mut [f64], scratch: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let inv = 1.0 / bins as f64;
    for i in 0..bins {
        let (t, _) = soi_point(x, i, bins);
        interp_into(f, t, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o += s * inv;
        }
    }
}

/// Segment-of-interest pooling: the mean of `bins` interpolated samples at
/// evenly spaced interior points of `x`.
pub fn soi_pool(f: &FeatureSequence, x: &Segment, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    let mut out = vec![0.0; f.dim];
    let mut scratch = vec![0.0; f.dim];
    soi_into(f, x, bins, &mut out, &mut scratch);
    out
}

/// `[interp(start), interp(end), soi(x), start/duration, end/duration]`.
pub fn conditioning(f: &FeatureSequence, x: &Segment, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; f.conditioning_dim()];
    conditioning_into(f, x, bins.max(1), &mut out);
    out
}

pub(crate) fn conditioning_into(f: &FeatureSequence, x: &Segment, bins: usize, out: &mut [f64]) {
    let d = f.dim;
    let dur = f.duration();
    interp_into(f, x.start, &mut out[..d]);
    interp_into(f, x.end, &mut out[d..2 * d]);
    let mut scratch = vec![0.0; d];
    soi_into(f, x, bins, &mut out[2 * d..3 * d], &mut scratch);
    out[3 * d] = x.start / dur;
    out[3 * d + 1] = x.end / dur;
}

/// Pulls a conditioning-vector gradient back onto `(start, end)`.
pub(crate) fn conditioning_backward(
    f: &FeatureSequence,
    x: &Segment,
    bins: usize,
    g: &[f64],
) -> [f64; 2] {
    let d = f.dim;
    let dur = f.duration();
    let mut gs = interp_dt(f, x.start, &g[..d]) + g[3 * d] / dur;
    let mut ge = interp_dt(f, x.end, &g[d..2 * d]) + g[3 * d + 1] / dur;
    let inv = 1.0 / bins as f64;
    let gp = &g[2 * d..3 * d];
    for i in 0..bins {
        let (t, w) = soi_point(x, i, bins);
        let dt = interp_dt(f, t, gp) * inv;
        gs += dt * (1.0 - w);
        ge += dt * w;
    }
    [gs, ge]
}
