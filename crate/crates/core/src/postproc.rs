//! Score fusion, linear Soft-NMS and top-Q selection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tiou, Segment};

/// One scored, labelled segment in one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub video: String,
    pub label: String,
    pub segment: Segment,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !self.segment.is_valid() {
            return Err(Error::validation(
                &self.video,
                format!("invalid segment {:?}", self.segment),
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::validation(
                &self.video,
                format!("score {} outside [0, 1]", self.score),
            ));
        }
        Ok(())
    }
}

pub fn fuse_scores(p_tiou: f64, p_cls: f64) -> f64 {
    p_tiou * p_cls
}

/// Linear Soft-NMS inside every `(video, label)` group.
///
/// Repeatedly takes the highest-scoring remaining detection (lowest input
/// index on ties) and multiplies the score of every remaining detection whose
/// tIoU with it exceeds `threshold` by `1 − tIoU`. Detections whose score
/// falls below `score_floor` are dropped. The result is sorted by final score,
/// descending, ties in input order.
pub fn soft_nms(dets: &[Detection], threshold: f64, score_floor: f64) -> Vec<Detection> {
    let mut groups: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups.entry((&d.video, &d.label)).or_default().push(i);
    }
    let mut scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut keep = vec![false; dets.len()];
    for idx in groups.values() {
        let mut live: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| scores[i] >= score_floor)
            .collect();
        while !live.is_empty() {
            let mut best = 0;
            for k in 1..live.len() {
                if scores[live[k]] > scores[live[best]] {
                    best = k;
                }
            }
            let top = live.remove(best);
            keep[top] = true;
            live.retain(|&j| {
                let o = tiou(&dets[top].segment, &dets[j].segment);
                if o > threshold {
                    scores[j] *= 1.0 - o;
                }
                scores[j] >= score_floor
            });
        }
    }
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| keep[i]).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .map(|i| Detection {
            score: scores[i],
            ..dets[i].clone()
        })
        .collect()
}

/// The `q` highest-scoring detections of every video, videos in order of
/// first appearance, ties in input order.
pub fn top_q(dets: &[Detection], q: usize) -> Vec<Detection> {
    let mut videos: Vec<&str> = Vec::new();
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_video
            .entry(&d.video)
            .or_insert_with(|| {
                videos.push(&d.video);
                Vec::new()
            })
            .push(i);
    }
    let mut out = Vec::new();
    for v in videos {
        let mut idx = by_video.remove(v).unwrap_or_default();
        idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        out.extend(idx.into_iter().take(q).map(|i| dets[i].clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(v: &str, l: &str, s: f64, e: f64, score: f64) -> Detection {
        Detection {
            video: v.into(),
            label: l.into(),
            segment: Segment { start: s, end: e },
            score,
        }
    }

    #[test]
    fn fusion_is_a_product() {
        assert!((fuse_scores(0.9, 0.8) - 0.72).abs() < 1e-15);
        assert_eq!(fuse_scores(0.37, 1.0), 0.37);
        assert_eq!(fuse_scores(0.0, 0.6), 0.0);
    }

    #[test]
    fn soft_nms_hand_cases() {
        let one = vec![det("a", "x", 1.0, 4.0, 0.6)];
        assert_eq!(soft_nms(&one, 0.3, 1e-4), one);

        let twins = vec![det("a", "x", 0.0, 10.0, 0.9), det("a", "x", 0.0, 10.0, 0.8)];
        let out = soft_nms(&twins, 0.3, 0.0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].score, 0.9);
        assert_eq!(out[1].score, 0.0);
        assert_eq!(soft_nms(&twins, 0.3, 1e-4).len(), 1);

        let apart = vec![det("a", "x", 0.0, 1.0, 0.5), det("a", "x", 2.0, 3.0, 0.7)];
        let out = soft_nms(&apart, 0.3, 1e-4);
        assert_eq!(out, vec![apart[1].clone(), apart[0].clone()]);
    }

    #[test]
    fn soft_nms_leaves_other_classes_and_videos_alone() {
        let d = vec![
            det("a", "x", 0.0, 10.0, 0.9),
            det("a", "y", 0.0, 10.0, 0.8),
            det("b", "x", 0.0, 10.0, 0.7),
        ];
        assert_eq!(soft_nms(&d, 0.3, 1e-4), d);
    }

    #[test]
    fn partial_overlap_decays_linearly() {
        let d = vec![det("a", "x", 0.0, 10.0, 0.9), det("a", "x", 2.0, 10.0, 0.5)];
        let out = soft_nms(&d, 0.3, 1e-4);
        assert!((out[1].score - 0.5 * 0.2).abs() < 1e-15);
        let out = soft_nms(&d, 0.85, 1e-4);
        assert_eq!(out[1].score, 0.5);
    }

    #[test]
    fn top_q_examples() {
        let d: Vec<_> = [0.3, 0.9, 0.1, 0.5, 0.7]
            .iter()
            .enumerate()
            .map(|(i, &s)| det("a", "x", i as f64, i as f64 + 1.0, s))
            .collect();
        let t = top_q(&d, 3);
        assert_eq!(
            t.iter().map(|x| x.score).collect::<Vec<_>>(),
            vec![0.9, 0.7, 0.5]
        );
        assert!(top_q(&d, 0).is_empty());
        let sorted = soft_nms(&d, 0.3, 0.0);
        assert_eq!(top_q(&sorted, 10), sorted);
    }

    #[test]
    fn top_q_is_per_video() {
        let d = vec![
            det("a", "x", 0.0, 1.0, 0.9),
            det("b", "x", 0.0, 1.0, 0.8),
            det("a", "x", 2.0, 3.0, 0.7),
        ];
        let t = top_q(&d, 1);
        assert_eq!(t, vec![d[0].clone(), d[1].clone()]);
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec((0.0..20.0f64, 0.1..8.0f64, 0.0..1.0f64, 0..2usize), 0..25).prop_map(
            |v| {
                v.into_iter()
                    .map(|(s, l, p, c)| det("v", if c == 0 { "x" } else { "y" }, s, s + l, p))
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn soft_nms_never_raises_scores_or_moves_segments(d in arb_dets()) {
            let out = soft_nms(&d, 0.3, 1e-4);
            for o in &out {
                let src = d.iter().find(|x| x.segment == o.segment && x.label == o.label).unwrap();
                prop_assert!(o.score <= src.score);
            }
            if let Some(best) = d.iter().filter(|x| x.score >= 1e-4).map(|x| x.score).reduce(f64::max) {
                prop_assert_eq!(out[0].score, best);
            }
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }

        #[test]
        fn soft_nms_is_idempotent_once_separated(d in arb_dets()) {
            let once = soft_nms(&d, 0.3, 1e-4);
            let crowded = once.iter().enumerate().any(|(i, a)| {
                once[i + 1..].iter().any(|b| a.label == b.label && tiou(&a.segment, &b.segment) > 0.3)
            });
            if !crowded {
                prop_assert_eq!(soft_nms(&once, 0.3, 1e-4), once);
            }
        }
    }
}
