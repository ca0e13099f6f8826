//! Target assignment and the loss stack: balanced BCE plus tIoU regression,
//! the signed offset loss, the boundary/ℓ2 regularizer, and the decayed sum
//! over refinement stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{best_tiou, tiou_with_grad, OffsetPair, Segment, TimeGrid};
use crate::sampling::SampleSet;

/// Probabilities are clamped into `(EPS, 1 − EPS)` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetAssignment {
    pub tiou_star: f64,
    pub is_positive: bool,
    /// `((g*_s − x_s)/l, (g*_e − x_e)/l)` with `l` the sample length.
    pub offset_target: OffsetPair,
    pub closest_gt: Option<usize>,
}

impl TargetAssignment {
    fn background() -> Self {
        TargetAssignment {
            tiou_star: 0.0,
            is_positive: false,
            offset_target: OffsetPair::default(),
            closest_gt: None,
        }
    }
}

/// Derivatives of a target with respect to the sample's `(start, end)`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TargetGrad {
    pub d_tiou: [f64; 2],
    /// Rows: `(offset_start, offset_end)`; columns: `(start, end)`.
    pub d_offset: [[f64; 2]; 2],
}

pub fn assign_target(x: &Segment, gts: &[Segment], tau: f64) -> TargetAssignment {
    target_with_grad(x, gts, tau).0
}

pub(crate) fn target_with_grad(
    x: &Segment,
    gts: &[Segment],
    tau: f64,
) -> (TargetAssignment, TargetGrad) {
    let Ok((_, gi)) = best_tiou(x, gts) else {
        return (TargetAssignment::background(), TargetGrad::default());
    };
    let g = gts[gi];
    let (t, d_tiou) = tiou_with_grad(x, &g);
    let l = x.length();
    if l <= 0.0 {
        let a = TargetAssignment {
            tiou_star: t,
            is_positive: false,
            offset_target: OffsetPair::default(),
            closest_gt: Some(gi),
        };
        return (
            a,
            TargetGrad {
                d_tiou,
                ..Default::default()
            },
        );
    }
    let (us, ue) = (g.start - x.start, g.end - x.end);
    let l2 = l * l;
    let a = TargetAssignment {
        tiou_star: t,
        is_positive: t > tau,
        offset_target: OffsetPair::new(us / l, ue / l),
        closest_gt: Some(gi),
    };
    let d_offset = [[(-l + us) / l2, -us / l2], [ue / l2, (-l - ue) / l2]];
    (a, TargetGrad { d_tiou, d_offset })
}

/// Assigns every sample its best-matching ground truth, tIoU target,
/// foreground label (`tIoU* > tau`) and normalized offset target.
pub fn assign_targets(samples: &SampleSet, gts: &[Segment], tau: f64) -> Vec<TargetAssignment> {
    samples
        .points
        .iter()
        .map(|p| assign_target(&p.segment, gts, tau))
        .collect()
}

/// Balanced binary cross-entropy: positive and negative terms are each
/// averaged over their own class and weighted by one half. Returns the value
/// and the gradient with respect to `p`.
pub fn balanced_bce(p: &[f64], labels: &[bool]) -> Result<(f64, Vec<f64>)> {
    if p.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions and labels",
            left: p.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    let w_pos = if n_pos > 0 { 0.5 / n_pos as f64 } else { 0.0 };
    let w_neg = if n_neg > 0 { 0.5 / n_neg as f64 } else { 0.0 };
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (i, (&pi, &li)) in p.iter().zip(labels).enumerate() {
        let inside = pi > EPS && pi < 1.0 - EPS;
        let q = pi.clamp(EPS, 1.0 - EPS);
        if li {
            value -= w_pos * q.ln();
            if inside {
                grad[i] = -w_pos / q;
            }
        } else {
            value -= w_neg * (1.0 - q).ln();
            if inside {
                grad[i] = w_neg / (1.0 - q);
            }
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiouLoss {
    pub bce: f64,
    pub mse: f64,
    /// `bce + lambda1 · mse`.
    pub value: f64,
    pub grad_p1: Vec<f64>,
    pub grad_p2: Vec<f64>,
    /// Gradient with respect to each `tiou_star` target.
    pub grad_target: Vec<f64>,
}

/// Balanced BCE of `p1` against the foreground labels plus `lambda1` times the
/// mean squared error of `p2` against `tIoU*`.
pub fn loss_tiou(
    p1: &[f64],
    p2: &[f64],
    targets: &[TargetAssignment],
    lambda1: f64,
) -> Result<TiouLoss> {
    for (what, len) in [("p1 and targets", p1.len()), ("p2 and targets", p2.len())] {
        if len != targets.len() {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: targets.len(),
            });
        }
    }
    let labels: Vec<bool> = targets.iter().map(|t| t.is_positive).collect();
    let (bce, grad_p1) = balanced_bce(p1, &labels)?;
    let n = targets.len();
    let mut mse = 0.0;
    let mut grad_p2 = vec![0.0; n];
    let mut grad_target = vec![0.0; n];
    if n > 0 {
        let inv = 1.0 / n as f64;
        for i in 0..n {
            let r = p2[i] - targets[i].tiou_star;
            mse += r * r * inv;
            grad_p2[i] = lambda1 * 2.0 * r * inv;
            grad_target[i] = -grad_p2[i];
        }
    }
    Ok(TiouLoss {
        bce,
        mse,
        value: bce + lambda1 * mse,
        grad_p1,
        grad_p2,
        grad_target,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetLoss {
    pub value: f64,
    pub grad_pred: Vec<[f64; 2]>,
    /// Number of samples the loss was averaged over.
    pub selected: usize,
}

/// Mean absolute error between predicted and target offsets over both
/// endpoints of the selected samples (foreground only when `positives_only`).
pub fn loss_offset(
    pred: &[OffsetPair],
    targets: &[TargetAssignment],
    positives_only: bool,
) -> Result<OffsetLoss> {
    if pred.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "offset predictions and targets",
            left: pred.len(),
            right: targets.len(),
        });
    }
    let selected = targets
        .iter()
        .filter(|t| t.closest_gt.is_some() && (!positives_only || t.is_positive))
        .count();
    let mut grad_pred = vec![[0.0; 2]; pred.len()];
    if selected == 0 {
        return Ok(OffsetLoss {
            value: 0.0,
            grad_pred,
            selected,
        });
    }
    let w = 1.0 / (2 * selected) as f64;
    let mut value = 0.0;
    for (i, (p, t)) in pred.iter().zip(targets).enumerate() {
        if t.closest_gt.is_none() || (positives_only && !t.is_positive) {
            continue;
        }
        let rs = p.delta_start - t.offset_target.delta_start;
        let re = p.delta_end - t.offset_target.delta_end;
        value += w * (rs.abs() + re.abs());
        grad_pred[i] = [w * sign(rs), w * sign(re)];
    }
    Ok(OffsetLoss {
        value,
        grad_pred,
        selected,
    })
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Snippet-level boundary labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryLabels {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

/// Per-snippet start/end probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProbs {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Snippet `k` (anchored at `k·σ`) is a start if it lies within `σ/2` of a
/// ground-truth start; likewise for ends.
pub fn boundary_labels(grid: &TimeGrid, gts: &[Segment]) -> BoundaryLabels {
    let half = 0.5 * grid.step;
    let near = |t: f64, pick: fn(&Segment) -> f64| gts.iter().any(|g| (t - pick(g)).abs() <= half);
    let times: Vec<f64> = (0..grid.num_snippets)
        .map(|k| k as f64 * grid.step)
        .collect();
    BoundaryLabels {
        start: times.iter().map(|&t| near(t, |g| g.start)).collect(),
        end: times.iter().map(|&t| near(t, |g| g.end)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLossGrad {
    pub boundary: f64,
    /// Sum of squared parameters.
    pub l2: f64,
    /// `boundary + lambda3 · l2`.
    pub value: f64,
    pub grad_start: Vec<f64>,
    pub grad_end: Vec<f64>,
    pub grad_params: Vec<f64>,
}

/// Boundary regularization (balanced BCE on starts and ends) plus `lambda3`
/// times the squared parameter norm.
pub fn loss_norm(
    boundary_pred: &BoundaryProbs,
    boundary_target: &BoundaryLabels,
    params: &[f64],
    lambda3: f64,
) -> Result<NormLossGrad> {
    let (bs, grad_start) = balanced_bce(&boundary_pred.start, &boundary_target.start)?;
    let (be, grad_end) = balanced_bce(&boundary_pred.end, &boundary_target.end)?;
    let l2: f64 = params.iter().map(|p| p * p).sum();
    let grad_params = params.iter().map(|p| 2.0 * lambda3 * p).collect();
    Ok(NormLossGrad {
        boundary: bs + be,
        l2,
        value: bs + be + lambda3 * l2,
        grad_start,
        grad_end,
        grad_params,
    })
}

/// Loss weights of the overall objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub tau: f64,
    pub offset_positives_only: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 10.0,
            lambda2: 1.0,
            lambda3: 1e-5,
            alpha: 0.8,
            tau: 0.7,
            offset_positives_only: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "loss.tau {} must lie in (0, 1)",
                self.tau
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "loss.alpha {} must lie in (0, 1]",
                self.alpha
            )));
        }
        for (k, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss.{k} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Raw (unweighted) loss terms of one refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageLoss {
    pub bce: f64,
    pub mse: f64,
    pub offset: f64,
}

/// Raw regularizer terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormLoss {
    pub boundary: f64,
    pub l2: f64,
}

/// Objective breakdown. `bce`, `mse` and `offset` are stage-decayed sums of
/// the raw terms; `l2` is the raw squared norm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub bce: f64,
    pub mse: f64,
    pub offset: f64,
    pub boundary: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.bce,
            self.mse,
            self.offset,
            self.boundary,
            self.l2,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Element-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let mut acc = LossReport::default();
        if reports.is_empty() {
            return acc;
        }
        for r in reports {
            acc.bce += r.bce;
            acc.mse += r.mse;
            acc.offset += r.offset;
            acc.boundary += r.boundary;
            acc.l2 += r.l2;
            acc.total += r.total;
        }
        let n = reports.len() as f64;
        LossReport {
            bce: acc.bce / n,
            mse: acc.mse / n,
            offset: acc.offset / n,
            boundary: acc.boundary / n,
            l2: acc.l2 / n,
            total: acc.total / n,
        }
    }
}

/// `alpha^m` for stages `m = 1..=iterations`.
pub fn stage_weights(alpha: f64, iterations: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(iterations);
    let mut a = 1.0;
    for _ in 0..iterations {
        a *= alpha;
        w.push(a);
    }
    w
}

/// `Σ_m α^m (bce_m + λ1 mse_m + λ2 offset_m) + boundary + λ3 l2`.
pub fn loss_total(stages: &[StageLoss], norm: NormLoss, cfg: &LossConfig) -> Result<LossReport> {
    if stages.is_empty() {
        return Err(Error::Config("loss_total needs at least one stage".into()));
    }
    let mut r = LossReport {
        boundary: norm.boundary,
        l2: norm.l2,
        ..Default::default()
    };
    let mut reg = 0.0;
    for (s, w) in stages.iter().zip(stage_weights(cfg.alpha, stages.len())) {
        r.bce += w * s.bce;
        r.mse += w * s.mse;
        r.offset += w * s.offset;
        reg += w * (s.bce + cfg.lambda1 * s.mse + cfg.lambda2 * s.offset);
    }
    r.total = reg + norm.boundary + cfg.lambda3 * norm.l2;
    Ok(r)
}
