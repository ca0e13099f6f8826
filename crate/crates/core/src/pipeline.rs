//! Inference: grid-initialized samples, recurrent refinement, score fusion,
//! Soft-NMS and top-Q selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::model::{FeatureSequence, ScorerParams};
use crate::par::ExecMode;
use crate::postproc::{fuse_scores, soft_nms, top_q, Detection};
use crate::refine::{run_refinement, RefineConfig};
use crate::sampling::grid_samples;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub nms_threshold: f64,
    pub score_floor: f64,
    /// Detections kept per video.
    pub top_q: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            nms_threshold: 0.3,
            score_floor: 1e-4,
            top_q: 100,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_threshold) || !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::Config(
                "inference thresholds must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// A class-agnostic proposal: refined coordinates and the final stage's `p1 · p2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub segment: Segment,
    pub score: f64,
}

/// Refines every grid sample of `f` for `refine.iterations` stages.
pub fn propose(
    params: &ScorerParams,
    f: &FeatureSequence,
    refine: &RefineConfig,
    mode: ExecMode,
) -> Result<Vec<Proposal>> {
    let init = grid_samples(&f.grid()).segments();
    let traj = run_refinement(&init, params, f, refine, mode)?;
    let last = traj
        .last()
        .ok_or_else(|| Error::Config("refinement produced no stages".into()))?;
    let props: Vec<Proposal> = last
        .coords
        .iter()
        .zip(&last.outputs)
        .map(|(s, o)| Proposal {
            segment: *s,
            score: o.p1 * o.p2,
        })
        .collect();
    if props.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::NonFinite(String::from("proposal scores")));
    }
    Ok(props)
}

/// Detections of one video: every proposal is paired with every class whose
/// video-level score is positive, fused, suppressed and truncated.
pub fn detect_video(
    video: &str,
    params: &ScorerParams,
    f: &FeatureSequence,
    class_scores: &[(String, f64)],
    refine: &RefineConfig,
    cfg: &InferenceConfig,
    mode: ExecMode,
) -> Result<Vec<Detection>> {
    let props = propose(params, f, refine, mode)?;
    let mut dets = Vec::with_capacity(props.len() * class_scores.len());
    for (label, cls) in class_scores {
        if *cls <= 0.0 {
            continue;
        }
        dets.extend(props.iter().map(|p| Detection {
            video: video.to_string(),
            label: label.clone(),
            segment: p.segment,
            score: fuse_scores(p.score, *cls),
        }));
    }
    Ok(top_q(
        &soft_nms(&dets, cfg.nms_threshold, cfg.score_floor),
        cfg.top_q,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arch, ModelConfig};

    #[test]
    fn detections_are_bounded_and_deterministic() {
        let f = FeatureSequence::new(
            2,
            8,
            2.5,
            (0..16).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let p = ScorerParams::init(
            Arch::new(
                2,
                &ModelConfig {
                    trunk_widths: vec![8],
                    hidden_dim: 4,
                    soi_bins: 4,
                },
            )
            .unwrap(),
            5,
        );
        let refine = RefineConfig {
            iterations: 3,
            ..Default::default()
        };
        let cfg = InferenceConfig {
            top_q: 7,
            ..Default::default()
        };
        let classes = vec![
            ("a".to_string(), 1.0),
            ("b".to_string(), 0.5),
            ("c".to_string(), 0.0),
        ];
        let a = detect_video("v", &p, &f, &classes, &refine, &cfg, ExecMode::Parallel).unwrap();
        let b = detect_video("v", &p, &f, &classes, &refine, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 7);
        for d in &a {
            assert!(d.segment.within(f.duration()));
            assert!((0.0..=1.0).contains(&d.score));
            assert_ne!(d.label, "c");
        }
    }
}
