//! The full training objective with backpropagation through every
//! refinement stage, and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{boundary_backward, boundary_forward, check_dims, stage_backward, OutputGrad};
use super::{adam_step, AdamState, Arch, FeatureSequence, ModelConfig, ScorerParams};
use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::par::{self, ExecMode};
use crate::refine::{trace_sample, RefineConfig, SampleTrace};
use crate::sampling::{training_batch, SamplerConfig};
use crate::supervision::{
    boundary_labels, loss_norm, loss_offset, loss_tiou, loss_total, stage_weights,
    target_with_grad, LossConfig, LossReport, NormLoss, StageLoss,
};

/// Samples per backward work unit; fixed so gradient sums never depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// The learning rate is divided by `lr_decay_factor` every `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub epochs: usize,
    /// Videos per Adam step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            lr_decay_every: 5,
            lr_decay_factor: 10.0,
            epochs: 10,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.lr_decay_every).unwrap_or(0);
        self.lr / self.lr_decay_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("optim.lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be at least 1".into()));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return Err(Error::Config(
                "optim.lr_decay_factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the objective and the epoch loop depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub refine: RefineConfig,
    pub optim: OptimConfig,
    pub mode: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            refine: RefineConfig::default(),
            optim: OptimConfig::default(),
            mode: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.sampler.validate()?;
        self.refine.validate()?;
        self.optim.validate()
    }
}

/// One training video: snippet features and ground-truth segments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingVideo {
    pub id: String,
    pub features: FeatureSequence,
    pub gts: Vec<Segment>,
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: AdamState,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: &ScorerParams) -> Self {
        TrainState {
            adam: AdamState::new(params.len()),
            epoch: 0,
        }
    }
}

/// Fresh parameters for training: seeded uniform initialization with the
/// offset rows of the head zeroed, so refinement starts as the identity.
pub fn init_params(feature_dim: usize, cfg: &TrainConfig) -> Result<ScorerParams> {
    let mut p = ScorerParams::init(
        Arch::new(feature_dim, &cfg.model)?,
        derive_seed(cfg.seed, &[4]),
    );
    p.zero_offset_head();
    Ok(p)
}

/// The full objective for one video: decayed per-stage tIoU and offset losses
/// over the refinement trajectory of every sample, plus the boundary and ℓ2
/// regularizers. Returns the loss breakdown and the gradient with respect to
/// every parameter.
///
/// With `refine.stop_gradient` set, each stage's input coordinates are treated
/// as constants. Otherwise targets are recomputed and differentiated at the
/// coordinates entering each stage, and the gradient is exactly that of the
/// returned loss.
pub fn objective(
    params: &ScorerParams,
    f: &FeatureSequence,
    samples: &[Segment],
    gts: &[Segment],
    cfg: &TrainConfig,
) -> Result<(LossReport, Vec<f64>)> {
    check_dims(params, f)?;
    cfg.refine.validate()?;
    let stages = cfg.refine.iterations;
    let detach = cfg.refine.stop_gradient;
    let (lambda1, lambda2) = (cfg.loss.lambda1, cfg.loss.lambda2);

    let traces: Vec<SampleTrace> = par::map(cfg.mode, samples, |x| {
        trace_sample(params, f, x, &cfg.refine)
    });

    let n = samples.len();
    let weights = stage_weights(cfg.loss.alpha, stages);
    let mut stage_losses = Vec::with_capacity(stages);
    let mut upstream = vec![vec![OutputGrad::default(); stages]; n];
    let mut coord_up = vec![vec![[0.0f64; 2]; stages]; n];
    for m in 0..stages {
        let (targets, tgrads): (Vec<_>, Vec<_>) = traces
            .iter()
            .map(|t| target_with_grad(&t.coords[m], gts, cfg.loss.tau))
            .unzip();
        let outs: Vec<_> = traces.iter().map(|t| t.caches[m].output).collect();
        let p1: Vec<f64> = outs.iter().map(|o| o.p1).collect();
        let p2: Vec<f64> = outs.iter().map(|o| o.p2).collect();
        let offs: Vec<_> = outs.iter().map(|o| o.offset).collect();
        let tl = loss_tiou(&p1, &p2, &targets, lambda1)?;
        let ol = loss_offset(&offs, &targets, cfg.loss.offset_positives_only)?;
        stage_losses.push(StageLoss {
            bce: tl.bce,
            mse: tl.mse,
            offset: ol.value,
        });
        let w = weights[m];
        for i in 0..n {
            let go = ol.grad_pred[i];
            upstream[i][m] = OutputGrad {
                p1: w * tl.grad_p1[i],
                p2: w * tl.grad_p2[i],
                offset: [w * lambda2 * go[0], w * lambda2 * go[1]],
            };
            if !detach {
                let gt = w * tl.grad_target[i];
                let (g0, g1) = (-w * lambda2 * go[0], -w * lambda2 * go[1]);
                let d = &tgrads[i];
                coord_up[i][m] = [
                    gt * d.d_tiou[0] + g0 * d.d_offset[0][0] + g1 * d.d_offset[1][0],
                    gt * d.d_tiou[1] + g0 * d.d_offset[0][1] + g1 * d.d_offset[1][1],
                ];
            }
        }
    }

    let idx: Vec<usize> = (0..n).collect();
    let partials = par::map_chunks(cfg.mode, &idx, GRAD_CHUNK, |_, chunk| {
        let mut g = vec![0.0; params.len()];
        for &i in chunk {
            backprop_sample(
                params,
                f,
                &traces[i],
                &upstream[i],
                &coord_up[i],
                detach,
                &mut g,
            );
        }
        g
    });
    let mut grads = vec![0.0; params.len()];
    for part in partials {
        for (a, b) in grads.iter_mut().zip(part) {
            *a += b;
        }
    }

    let grid = f.grid();
    let probs = boundary_forward(params, f)?;
    let norm = loss_norm(
        &probs,
        &boundary_labels(&grid, gts),
        params.as_slice(),
        cfg.loss.lambda3,
    )?;
    boundary_backward(
        params,
        f,
        &probs,
        &norm.grad_start,
        &norm.grad_end,
        &mut grads,
    );
    for (a, b) in grads.iter_mut().zip(&norm.grad_params) {
        *a += b;
    }
    let report = loss_total(
        &stage_losses,
        NormLoss {
            boundary: norm.boundary,
            l2: norm.l2,
        },
        &cfg.loss,
    )?;
    if !report.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("training objective".into()));
    }
    Ok((report, grads))
}

fn backprop_sample(
    params: &ScorerParams,
    f: &FeatureSequence,
    trace: &SampleTrace,
    upstream: &[OutputGrad],
    coord_up: &[[f64; 2]],
    detach: bool,
    grads: &mut [f64],
) {
    let mut g_x = [0.0f64; 2];
    let mut g_h = vec![0.0; params.arch().hidden_dim];
    for m in (0..trace.caches.len()).rev() {
        let mut g_out = upstream[m];
        let mut g_in = [0.0; 2];
        if !detach {
            let (gc, go) = trace.jacobians[m].pullback(g_x);
            g_in = gc;
            g_out.offset[0] += go[0];
            g_out.offset[1] += go[1];
        }
        let feats = if detach { None } else { Some(f) };
        let (g_c, g_hp) = stage_backward(params, &trace.caches[m], feats, &g_out, &g_h, grads);
        g_x = [
            g_in[0] + g_c[0] + coord_up[m][0],
            g_in[1] + g_c[1] + coord_up[m][1],
        ];
        g_h = g_hp;
    }
}

/// Builds one video's samples from its derived seed and evaluates the objective.
pub fn video_objective(
    params: &ScorerParams,
    video: &TrainingVideo,
    cfg: &TrainConfig,
    epoch: usize,
    index: usize,
) -> Result<(LossReport, Vec<f64>)> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64, index as u64]));
    let batch = training_batch(&video.features.grid(), &video.gts, &cfg.sampler, &mut rng);
    objective(params, &video.features, &batch.segments(), &video.gts, cfg)
}

/// One pass over `data` in a seeded shuffled order, one Adam step per batch
/// of videos. Every random draw is derived from `(cfg.seed, epoch, video)`, so
/// resuming from a checkpoint reproduces an uninterrupted run exactly.
pub fn train_epoch(
    params: &mut ScorerParams,
    data: &[TrainingVideo],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let epoch = state.epoch;
    let lr = cfg.optim.lr_at(epoch);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[0, epoch as u64],
    )));

    let mut reports = Vec::new();
    for batch in order.chunks(cfg.optim.batch_size) {
        let frozen: &ScorerParams = params;
        let results = par::map(cfg.mode, batch, |&vi| {
            video_objective(frozen, &data[vi], cfg, epoch, vi)
        });
        let mut grads = vec![0.0; params.len()];
        let scale = 1.0 / batch.len() as f64;
        for r in results {
            let (report, g) = r?;
            for (a, b) in grads.iter_mut().zip(g) {
                *a += scale * b;
            }
            reports.push(report);
        }
        adam_step(
            params,
            &grads,
            &mut state.adam,
            lr,
            (cfg.optim.beta1, cfg.optim.beta2),
            cfg.optim.eps,
        )?;
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
    }
    state.epoch += 1;
    Ok(LossReport::mean(&reports))
}

/// Runs epochs until `cfg.optim.epochs` have completed, calling `on_epoch`
/// after each with the epoch index and its mean losses.
pub fn fit(
    params: &mut ScorerParams,
    data: &[TrainingVideo],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(usize, f64, &LossReport),
) -> Result<()> {
    while state.epoch < cfg.optim.epochs {
        let epoch = state.epoch;
        let lr = cfg.optim.lr_at(epoch);
        let report = train_epoch(params, data, cfg, state)?;
        on_epoch(epoch, lr, &report);
    }
    Ok(())
}
