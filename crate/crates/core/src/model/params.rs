use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conditioning_dim;
use crate::error::{Error, Result};

/// Network sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Widths of the tanh trunk layers.
    pub trunk_widths: Vec<usize>,
    /// Width of the recurrent hidden state.
    pub hidden_dim: usize,
    /// Quadrature points of the segment-of-interest pool.
    pub soi_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            trunk_widths: vec![64, 64],
            hidden_dim: 32,
            soi_bins: 16,
        }
    }
}

/// Full architecture: [`ModelConfig`] plus the feature dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub feature_dim: usize,
    pub trunk_widths: Vec<usize>,
    pub hidden_dim: usize,
    pub soi_bins: usize,
}

impl Arch {
    pub fn new(feature_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        if feature_dim == 0
            || cfg.hidden_dim == 0
            || cfg.soi_bins == 0
            || cfg.trunk_widths.contains(&0)
        {
            return Err(Error::Config(
                "feature_dim, hidden_dim, soi_bins and trunk widths must all be positive".into(),
            ));
        }
        Ok(Arch {
            feature_dim,
            trunk_widths: cfg.trunk_widths.clone(),
            hidden_dim: cfg.hidden_dim,
            soi_bins: cfg.soi_bins,
        })
    }

    pub fn input_dim(&self) -> usize {
        conditioning_dim(self.feature_dim)
    }

    /// Width of the last trunk activation (the input itself when the trunk is empty).
    pub fn trunk_out(&self) -> usize {
        self.trunk_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.input_dim())
    }

    /// `(out, in)` of every dense layer in storage order: trunk layers, update
    /// gate, candidate, head, boundary head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim();
        for &w in &self.trunk_widths {
            dims.push((w, fan_in));
            fan_in = w;
        }
        let cell_in = fan_in + self.hidden_dim;
        dims.push((self.hidden_dim, cell_in));
        dims.push((self.hidden_dim, cell_in));
        dims.push((4, cell_in));
        dims.push((2, self.feature_dim));
        dims
    }

    /// Recovers an architecture from stored layer dimensions.
    pub fn from_layer_dims(dims: &[(usize, usize)], soi_bins: usize) -> Result<Self> {
        let bad = |why: &str| {
            Error::format(
                "checkpoint",
                format!("inconsistent layer dimensions: {why}"),
            )
        };
        if dims.len() < 4 {
            return Err(bad("fewer than four layers"));
        }
        let n = dims.len();
        let (b_out, feature_dim) = dims[n - 1];
        if b_out != 2 || feature_dim == 0 {
            return Err(bad("boundary head"));
        }
        let hidden_dim = dims[n - 4].0;
        let trunk_widths: Vec<usize> = dims[..n - 4].iter().map(|d| d.0).collect();
        let cfg = ModelConfig {
            trunk_widths,
            hidden_dim,
            soi_bins,
        };
        let arch = Arch::new(feature_dim, &cfg).map_err(|_| bad("zero-sized layer"))?;
        if arch.layer_dims() != dims {
            return Err(bad("layer chain does not connect"));
        }
        Ok(arch)
    }
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layer {
    pub out: usize,
    pub inp: usize,
    pub w: usize,
    pub b: usize,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.out * (self.inp + 1)
    }
}

/// All learnable parameters in one flat vector (row-major weights followed by
/// the bias, layer after layer).
#[derive(Debug, Clone)]
pub struct ScorerParams {
    arch: Arch,
    layers: Vec<Layer>,
    data: Vec<f64>,
    generation: u64,
}

impl ScorerParams {
    pub fn zeros(arch: Arch) -> Self {
        let mut layers = Vec::new();
        let mut off = 0;
        for (out, inp) in arch.layer_dims() {
            let l = Layer {
                out,
                inp,
                w: off,
                b: off + out * inp,
            };
            off += l.len();
            layers.push(l);
        }
        ScorerParams {
            arch,
            layers,
            data: vec![0.0; off],
            generation: 0,
        }
    }

    /// Uniform initialization in `±1/√fan_in` from a seeded generator.
    pub fn init(arch: Arch, seed: u64) -> Self {
        let mut p = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.layers.clone() {
            let bound = 1.0 / (l.inp as f64).sqrt();
            for v in &mut p.data[l.w..l.w + l.len()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn from_vec(arch: Arch, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if data.len() != p.data.len() {
            return Err(Error::LengthMismatch {
                what: "parameter vector and architecture",
                left: data.len(),
                right: p.data.len(),
            });
        }
        p.data = data;
        Ok(p)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; invalidates every activation cache taken so far.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.data
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn trunk_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 4]
    }

    pub(crate) fn gate_layer(&self) -> Layer {
        self.layers[self.layers.len() - 4]
    }

    pub(crate) fn candidate_layer(&self) -> Layer {
        self.layers[self.layers.len() - 3]
    }

    pub(crate) fn head_layer(&self) -> Layer {
        self.layers[self.layers.len() - 2]
    }

    pub(crate) fn boundary_layer(&self) -> Layer {
        self.layers[self.layers.len() - 1]
    }

    /// Zeroes the offset rows of the head so every stage predicts a zero update.
    pub fn zero_offset_head(&mut self) {
        let h = self.head_layer();
        let data = self.as_mut_slice();
        for row in 2..4 {
            data[h.w + row * h.inp..h.w + (row + 1) * h.inp].fill(0.0);
            data[h.b + row] = 0.0;
        }
    }
}

impl PartialEq for ScorerParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.data == other.data
    }
}

/// `out = W · [inputs...] + b` for a layer whose input is the concatenation of `inputs`.
#[inline]
pub(crate) fn affine(data: &[f64], l: Layer, inputs: &[&[f64]], out: &mut [f64]) {
    debug_assert_eq!(inputs.iter().map(|x| x.len()).sum::<usize>(), l.inp);
    for (r, o) in out.iter_mut().enumerate().take(l.out) {
        let row = &data[l.w + r * l.inp..l.w + (r + 1) * l.inp];
        let mut acc = data[l.b + r];
        let mut c = 0;
        for x in inputs {
            for (w, v) in row[c..c + x.len()].iter().zip(x.iter()) {
                acc += w * v;
            }
            c += x.len();
        }
        *o = acc;
    }
}

/// Backward of [`affine`]: accumulates weight/bias gradients into `grads` and
/// input gradients into `g_inputs` (same split as the forward inputs).
#[inline]
pub(crate) fn affine_backward(
    data: &[f64],
    l: Layer,
    inputs: &[&[f64]],
    g_out: &[f64],
    grads: &mut [f64],
    g_inputs: &mut [&mut [f64]],
) {
    for (r, &g) in g_out.iter().enumerate().take(l.out) {
        if g == 0.0 {
            continue;
        }
        grads[l.b + r] += g;
        let base = l.w + r * l.inp;
        let mut c = 0;
        for (x, gx) in inputs.iter().zip(g_inputs.iter_mut()) {
            let row = &data[base + c..base + c + x.len()];
            let grow = &mut grads[base + c..base + c + x.len()];
            for j in 0..x.len() {
                grow[j] += g * x[j];
                gx[j] += g * row[j];
            }
            c += x.len();
        }
    }
}
