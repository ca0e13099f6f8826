//! One scoring stage: conditioning → tanh trunk → gated recurrent cell →
//! linear head, plus the per-snippet boundary head used by the regularizer.

use serde::{Deserialize, Serialize};

use super::params::{affine, affine_backward, ScorerParams};
use super::{conditioning_backward, conditioning_into, FeatureSequence};
use crate::error::{Error, Result};
use crate::geometry::{OffsetPair, Segment};
use crate::supervision::BoundaryProbs;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Confidences of the classification (`p1`) and regression (`p2`) branches
/// and the relative boundary offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub p1: f64,
    pub p2: f64,
    pub offset: OffsetPair,
}

impl ScorerOutput {
    pub fn is_finite(&self) -> bool {
        self.p1.is_finite() && self.p2.is_finite() && self.offset.is_finite()
    }
}

/// Upstream gradient on a [`ScorerOutput`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    pub p1: f64,
    pub p2: f64,
    pub offset: [f64; 2],
}

/// Activations of one stage, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StageCache {
    generation: u64,
    pub(crate) segment: Segment,
    pub(crate) cond: Vec<f64>,
    pub(crate) trunk: Vec<Vec<f64>>,
    pub(crate) h_prev: Vec<f64>,
    pub(crate) z: Vec<f64>,
    pub(crate) n: Vec<f64>,
    pub(crate) h: Vec<f64>,
    pub(crate) output: ScorerOutput,
}

impl StageCache {
    pub fn output(&self) -> ScorerOutput {
        self.output
    }

    pub fn hidden(&self) -> &[f64] {
        &self.h
    }

    pub fn segment(&self) -> Segment {
        self.segment
    }

    fn trunk_out(&self) -> &[f64] {
        self.trunk.last().unwrap_or(&self.cond)
    }
}

pub(crate) fn check_dims(params: &ScorerParams, f: &FeatureSequence) -> Result<()> {
    if params.arch().feature_dim != f.dim() {
        return Err(Error::Dimension(format!(
            "scorer expects {}-dimensional features, got {}",
            params.arch().feature_dim,
            f.dim()
        )));
    }
    Ok(())
}

/// Runs one stage from hidden state `h_prev`.
pub(crate) fn stage_forward(
    params: &ScorerParams,
    f: &FeatureSequence,
    seg: &Segment,
    h_prev: &[f64],
) -> StageCache {
    let arch = params.arch();
    let data = params.as_slice();
    let mut cond = vec![0.0; arch.input_dim()];
    conditioning_into(f, seg, arch.soi_bins, &mut cond);

    let mut trunk: Vec<Vec<f64>> = Vec::with_capacity(arch.trunk_widths.len());
    for &l in params.trunk_layers() {
        let mut a = vec![0.0; l.out];
        {
            let input: &[f64] = trunk.last().unwrap_or(&cond);
            affine(data, l, &[input], &mut a);
        }
        a.iter_mut().for_each(|v| *v = v.tanh());
        trunk.push(a);
    }
    let top: &[f64] = trunk.last().unwrap_or(&cond);

    let hd = arch.hidden_dim;
    let mut z = vec![0.0; hd];
    let mut n = vec![0.0; hd];
    affine(data, params.gate_layer(), &[top, h_prev], &mut z);
    affine(data, params.candidate_layer(), &[top, h_prev], &mut n);
    let mut h = vec![0.0; hd];
    for i in 0..hd {
        z[i] = sigmoid(z[i]);
        n[i] = n[i].tanh();
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * n[i];
    }
    let mut o = [0.0; 4];
    affine(data, params.head_layer(), &[top, &h], &mut o);
    let output = ScorerOutput {
        p1: sigmoid(o[0]),
        p2: sigmoid(o[1]),
        offset: OffsetPair::new(o[2], o[3]),
    };
    StageCache {
        generation: params.generation(),
        segment: *seg,
        cond,
        trunk,
        h_prev: h_prev.to_vec(),
        z,
        n,
        h,
        output,
    }
}

/// Backward of [`stage_forward`]. Accumulates parameter gradients into
/// `grads` and returns the gradients on the input coordinates (zero when `f`
/// is `None`) and on the previous hidden state.
pub(crate) fn stage_backward(
    params: &ScorerParams,
    cache: &StageCache,
    f: Option<&FeatureSequence>,
    g_out: &OutputGrad,
    g_h_in: &[f64],
    grads: &mut [f64],
) -> ([f64; 2], Vec<f64>) {
    let arch = params.arch();
    let data = params.as_slice();
    let out = &cache.output;
    let g_o = [
        g_out.p1 * out.p1 * (1.0 - out.p1),
        g_out.p2 * out.p2 * (1.0 - out.p2),
        g_out.offset[0],
        g_out.offset[1],
    ];
    let top = cache.trunk_out();
    let mut g_top = vec![0.0; top.len()];
    let mut g_h = g_h_in.to_vec();
    affine_backward(
        data,
        params.head_layer(),
        &[top, &cache.h],
        &g_o,
        grads,
        &mut [&mut g_top, &mut g_h],
    );

    let hd = arch.hidden_dim;
    let mut g_hprev = vec![0.0; hd];
    let mut g_pz = vec![0.0; hd];
    let mut g_pn = vec![0.0; hd];
    for i in 0..hd {
        let (z, n, hp) = (cache.z[i], cache.n[i], cache.h_prev[i]);
        g_hprev[i] = g_h[i] * (1.0 - z);
        g_pz[i] = g_h[i] * (n - hp) * z * (1.0 - z);
        g_pn[i] = g_h[i] * z * (1.0 - n * n);
    }
    let inputs = [top, cache.h_prev.as_slice()];
    affine_backward(
        data,
        params.gate_layer(),
        &inputs,
        &g_pz,
        grads,
        &mut [&mut g_top, &mut g_hprev],
    );
    affine_backward(
        data,
        params.candidate_layer(),
        &inputs,
        &g_pn,
        grads,
        &mut [&mut g_top, &mut g_hprev],
    );

    let mut g_a = g_top;
    let layers = params.trunk_layers();
    for k in (0..layers.len()).rev() {
        let a = &cache.trunk[k];
        let g_pre: Vec<f64> = g_a.iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
        let input: &[f64] = if k == 0 {
            &cache.cond
        } else {
            &cache.trunk[k - 1]
        };
        let mut g_in = vec![0.0; input.len()];
        affine_backward(data, layers[k], &[input], &g_pre, grads, &mut [&mut g_in]);
        g_a = g_in;
    }
    let g_coords = match f {
        Some(f) => conditioning_backward(f, &cache.segment, arch.soi_bins, &g_a),
        None => [0.0, 0.0],
    };
    (g_coords, g_hprev)
}

/// Scores `sample` from a zero hidden state: the non-recurrent scorer.
pub fn forward(
    params: &ScorerParams,
    f: &FeatureSequence,
    sample: &Segment,
) -> Result<(ScorerOutput, StageCache)> {
    check_dims(params, f)?;
    let h0 = vec![0.0; params.arch().hidden_dim];
    let cache = stage_forward(params, f, sample, &h0);
    Ok((cache.output, cache))
}

/// Exact parameter gradients for the stage recorded in `cache`.
pub fn backward(
    params: &ScorerParams,
    cache: &StageCache,
    upstream: &OutputGrad,
) -> Result<Vec<f64>> {
    if cache.generation != params.generation() || cache.cond.len() != params.arch().input_dim() {
        return Err(Error::StaleCache);
    }
    let mut grads = vec![0.0; params.len()];
    let g_h = vec![0.0; params.arch().hidden_dim];
    stage_backward(params, cache, None, upstream, &g_h, &mut grads);
    Ok(grads)
}

/// Per-snippet start/end probabilities from the boundary head.
pub fn boundary_forward(params: &ScorerParams, f: &FeatureSequence) -> Result<BoundaryProbs> {
    check_dims(params, f)?;
    let l = params.boundary_layer();
    let mut start = Vec::with_capacity(f.length());
    let mut end = Vec::with_capacity(f.length());
    let mut o = [0.0; 2];
    for t in 0..f.length() {
        affine(params.as_slice(), l, &[&f.column(t)], &mut o);
        start.push(sigmoid(o[0]));
        end.push(sigmoid(o[1]));
    }
    Ok(BoundaryProbs { start, end })
}

pub(crate) fn boundary_backward(
    params: &ScorerParams,
    f: &FeatureSequence,
    probs: &BoundaryProbs,
    g_start: &[f64],
    g_end: &[f64],
    grads: &mut [f64],
) {
    let l = params.boundary_layer();
    let mut sink = vec![0.0; f.dim()];
    for t in 0..f.length() {
        let (ps, pe) = (probs.start[t], probs.end[t]);
        let g = [g_start[t] * ps * (1.0 - ps), g_end[t] * pe * (1.0 - pe)];
        affine_backward(
            params.as_slice(),
            l,
            &[&f.column(t)],
            &g,
            grads,
            &mut [&mut sink],
        );
    }
}
