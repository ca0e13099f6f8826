//! Detection metrics: AP with greedy tIoU matching, mAP over thresholds,
//! recall at Q, and length-group sensitivity / false-negative profiles.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{tiou, Segment};
use crate::postproc::Detection;

/// A labelled ground-truth segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video: String,
    pub label: String,
    pub segment: Segment,
}

/// The ten thresholds 0.50, 0.55, …, 0.95.
pub fn average_map_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Duration buckets in seconds: XS (0,30], S (30,60], M (60,120], L (120,180], XL (180,∞).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LengthGroup {
    XS,
    S,
    M,
    L,
    XL,
}

impl LengthGroup {
    pub const ALL: [LengthGroup; 5] = [
        LengthGroup::XS,
        LengthGroup::S,
        LengthGroup::M,
        LengthGroup::L,
        LengthGroup::XL,
    ];

    pub fn of(length: f64) -> LengthGroup {
        if length <= 30.0 {
            LengthGroup::XS
        } else if length <= 60.0 {
            LengthGroup::S
        } else if length <= 120.0 {
            LengthGroup::M
        } else if length <= 180.0 {
            LengthGroup::L
        } else {
            LengthGroup::XL
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LengthGroup::XS => "XS",
            LengthGroup::S => "S",
            LengthGroup::M => "M",
            LengthGroup::L => "L",
            LengthGroup::XL => "XL",
        }
    }
}

/// Indices of `dets` sorted by score, descending, ties in input order.
fn ranked(dets: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching of one class. Returns, per detection in rank order, its
/// input index and the matched ground-truth index.
fn greedy_match(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    threshold: f64,
) -> Vec<(usize, Option<usize>)> {
    let mut by_video: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, g) in gts.iter().enumerate() {
        by_video.entry(&g.video).or_default().push(j);
    }
    let mut taken = vec![false; gts.len()];
    ranked(dets)
        .into_iter()
        .map(|i| {
            let mut best: Option<(f64, usize)> = None;
            for &j in by_video
                .get(dets[i].video.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[])
            {
                if taken[j] {
                    continue;
                }
                let o = tiou(&dets[i].segment, &gts[j].segment);
                if o >= threshold && best.is_none_or(|(b, _)| o > b) {
                    best = Some((o, j));
                }
            }
            if let Some((_, j)) = best {
                taken[j] = true;
            }
            (i, best.map(|(_, j)| j))
        })
        .collect()
}

/// Non-interpolated AP of a ranked hit list against `n_gt` positives.
fn ap_from_hits(hits: impl Iterator<Item = bool>, n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let (mut tp, mut seen, mut sum) = (0usize, 0usize, 0.0);
    for h in hits {
        seen += 1;
        if h {
            tp += 1;
            sum += tp as f64 / seen as f64;
        }
    }
    sum / n_gt as f64
}

/// Average precision of one class. Each detection, in score order, takes the
/// unmatched ground truth in its video with the highest tIoU if that tIoU is
/// at least `threshold`; AP is the sum of precision at every true positive
/// divided by the number of ground truths.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], threshold: f64) -> f64 {
    let d: Vec<&Detection> = dets.iter().collect();
    let g: Vec<&GroundTruth> = gts.iter().collect();
    ap_from_hits(
        greedy_match(&d, &g, threshold)
            .into_iter()
            .map(|(_, m)| m.is_some()),
        g.len(),
    )
}

fn classes(gts: &[GroundTruth]) -> BTreeSet<&str> {
    gts.iter().map(|g| g.label.as_str()).collect()
}

fn split_class<'a>(
    dets: &'a [Detection],
    gts: &'a [GroundTruth],
    label: &str,
) -> (Vec<&'a Detection>, Vec<&'a GroundTruth>) {
    (
        dets.iter().filter(|d| d.label == label).collect(),
        gts.iter().filter(|g| g.label == label).collect(),
    )
}

/// mAP (mean AP over the classes present in `gts`) at each threshold.
pub fn map_at(dets: &[Detection], gts: &[GroundTruth], thresholds: &[f64]) -> Vec<f64> {
    let cls = classes(gts);
    thresholds
        .iter()
        .map(|&t| {
            if cls.is_empty() {
                return 0.0;
            }
            let sum: f64 = cls
                .iter()
                .map(|c| {
                    let (d, g) = split_class(dets, gts, c);
                    ap_from_hits(
                        greedy_match(&d, &g, t)
                            .into_iter()
                            .map(|(_, m)| m.is_some()),
                        g.len(),
                    )
                })
                .sum();
            sum / cls.len() as f64
        })
        .collect()
}

/// Mean of [`map_at`] over 0.50:0.05:0.95.
pub fn average_map(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
    let v = map_at(dets, gts, &average_map_thresholds());
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-group mAP and false-negative rate at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub group: LengthGroup,
    pub num_gts: usize,
    pub map: f64,
    pub fn_rate: f64,
}

/// mAP restricted to the ground truths whose group is in `groups`, plus the
/// fraction of them left unmatched.
///
/// Detections are matched against the full ground-truth set first; the
/// restricted evaluation then keeps only the selected ground truths and drops
/// detections matched to ground truths outside the selection. `None` when no
/// ground truth falls in `groups`.
pub fn restricted_map(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
    groups: &[LengthGroup],
) -> Option<(usize, f64, f64)> {
    let inside = |g: &GroundTruth| groups.contains(&LengthGroup::of(g.segment.length()));
    let total = gts.iter().filter(|g| inside(g)).count();
    if total == 0 {
        return None;
    }
    let mut ap_sum = 0.0;
    let mut n_cls = 0;
    let mut matched = 0;
    for c in classes(gts) {
        let (d, g) = split_class(dets, gts, c);
        let n_in = g.iter().filter(|g| inside(g)).count();
        if n_in == 0 {
            continue;
        }
        let m = greedy_match(&d, &g, threshold);
        let hits = m.iter().filter_map(|&(_, mg)| match mg {
            Some(j) if inside(g[j]) => Some(true),
            Some(_) => None,
            None => Some(false),
        });
        ap_sum += ap_from_hits(hits, n_in);
        n_cls += 1;
        matched += m
            .iter()
            .filter(|(_, mg)| mg.is_some_and(|j| inside(g[j])))
            .count();
    }
    Some((
        total,
        ap_sum / n_cls as f64,
        1.0 - matched as f64 / total as f64,
    ))
}

/// Per length group (groups without ground truth omitted): restricted mAP
/// and false-negative rate.
pub fn length_group_profiles(
    dets: &[Detection],
    gts: &[GroundTruth],
    threshold: f64,
) -> Vec<GroupProfile> {
    LengthGroup::ALL
        .iter()
        .filter_map(|&group| {
            restricted_map(dets, gts, threshold, &[group]).map(|(num_gts, map, fn_rate)| {
                GroupProfile {
                    group,
                    num_gts,
                    map,
                    fn_rate,
                }
            })
        })
        .collect()
}

/// Fraction of ground truths overlapped at `threshold` by at least one of
/// the `q` highest-scoring detections of their video, regardless of label.
pub fn recall_at(dets: &[Detection], gts: &[GroundTruth], threshold: f64, q: usize) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut by_video: HashMap<&str, Vec<&Detection>> = HashMap::new();
    for d in dets {
        by_video.entry(&d.video).or_default().push(d);
    }
    for v in by_video.values_mut() {
        let order = ranked(v);
        let top: Vec<&Detection> = order.into_iter().take(q).map(|i| v[i]).collect();
        *v = top;
    }
    let hit = gts
        .iter()
        .filter(|g| {
            by_video
                .get(g.video.as_str())
                .is_some_and(|v| v.iter().any(|d| tiou(&d.segment, &g.segment) >= threshold))
        })
        .count();
    hit as f64 / gts.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Thresholds reported individually.
    pub thresholds: Vec<f64>,
    /// Threshold of the length-group profiles and of the short-action mAP.
    pub profile_threshold: f64,
    pub recall_threshold: f64,
    pub recall_q: usize,
    /// Groups pooled into the short-action mAP.
    pub short_groups: Vec<LengthGroup>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            profile_threshold: 0.5,
            recall_threshold: 0.5,
            recall_q: 100,
            short_groups: vec![LengthGroup::XS, LengthGroup::S],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    pub threshold: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_threshold_map: Vec<ThresholdMap>,
    /// mAP at each of 0.50:0.05:0.95.
    pub average_map_terms: Vec<ThresholdMap>,
    pub average_map: f64,
    pub groups: Vec<GroupProfile>,
    pub short_map: Option<f64>,
    pub recall_at_q: f64,
    pub num_detections: usize,
    pub num_gts: usize,
}

pub fn evaluate(dets: &[Detection], gts: &[GroundTruth], cfg: &EvalConfig) -> EvalReport {
    let pair = |ts: &[f64]| -> Vec<ThresholdMap> {
        ts.iter()
            .zip(map_at(dets, gts, ts))
            .map(|(&threshold, map)| ThresholdMap { threshold, map })
            .collect()
    };
    let terms = pair(&average_map_thresholds());
    EvalReport {
        per_threshold_map: pair(&cfg.thresholds),
        average_map: terms.iter().map(|t| t.map).sum::<f64>() / terms.len() as f64,
        average_map_terms: terms,
        groups: length_group_profiles(dets, gts, cfg.profile_threshold),
        short_map: restricted_map(dets, gts, cfg.profile_threshold, &cfg.short_groups).map(|r| r.1),
        recall_at_q: recall_at(dets, gts, cfg.recall_threshold, cfg.recall_q),
        num_detections: dets.len(),
        num_gts: gts.len(),
    }
}

impl EvalReport {
    /// Plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "detections {}  ground truths {}\n",
            self.num_detections, self.num_gts
        ));
        for t in &self.per_threshold_map {
            s.push_str(&format!("mAP@{:.2}  {:.4}\n", t.threshold, t.map));
        }
        s.push_str(&format!(
            "average mAP (0.50:0.05:0.95)  {:.4}\n",
            self.average_map
        ));
        if let Some(m) = self.short_map {
            s.push_str(&format!("short mAP  {m:.4}\n"));
        }
        s.push_str(&format!("recall  {:.4}\n", self.recall_at_q));
        s.push_str("group  n  mAP  FN-rate\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{}  {}  {:.4}  {:.4}\n",
                g.group.name(),
                g.num_gts,
                g.map,
                g.fn_rate
            ));
        }
        s
    }
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

    fn gt(v: &str, l: &str, s: f64, e: f64) -> GroundTruth {
        GroundTruth {
            video: v.into(),
            label: l.into(),
            segment: Segment { start: s, end: e },
        }
    }

    #[test]
    fn ap_examples() {
        let g = vec![gt("a", "x", 0.0, 10.0), gt("a", "x", 20.0, 30.0)];
        let d = vec![
            det("a", "x", 0.0, 10.0, 0.9),
            det("a", "x", 50.0, 60.0, 0.8),
            det("a", "x", 20.0, 30.0, 0.7),
        ];
        assert!((average_precision(&d, &g, 0.5) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&d[..1], &g[..1], 0.5), 1.0);
        assert_eq!(average_precision(&[], &g, 0.5), 0.0);
        assert_eq!(average_precision(&d, &[], 0.5), 0.0);
    }

    #[test]
    fn duplicate_detections_are_false_positives() {
        let g = vec![gt("a", "x", 0.0, 10.0)];
        let d = vec![det("a", "x", 0.0, 10.0, 0.9), det("a", "x", 0.0, 10.0, 0.8)];
        assert_eq!(average_precision(&d, &g, 0.5), 1.0);
        let d = vec![det("a", "x", 0.0, 10.0, 0.8), det("a", "x", 0.0, 10.0, 0.9)];
        assert_eq!(average_precision(&d, &g, 0.5), 1.0);
    }

    #[test]
    fn perfect_detections_score_one() {
        let g = vec![
            gt("a", "x", 0.0, 10.0),
            gt("a", "y", 5.0, 15.0),
            gt("b", "x", 1.0, 2.0),
        ];
        let d: Vec<_> = g
            .iter()
            .map(|g| det(&g.video, &g.label, g.segment.start, g.segment.end, 0.5))
            .collect();
        assert!(map_at(&d, &g, &[0.3, 0.5, 0.95]).iter().all(|&m| m == 1.0));
        assert_eq!(average_map(&d, &g), 1.0);
        assert_eq!(average_map(&[], &g), 0.0);
        assert_eq!(recall_at(&d, &g, 0.5, 2), 1.0);
        assert_eq!(recall_at(&[], &g, 0.5, 1), 0.0);
    }

    #[test]
    fn detections_only_match_their_own_video() {
        let g = vec![gt("a", "x", 0.0, 10.0)];
        let d = vec![det("b", "x", 0.0, 10.0, 0.9)];
        assert_eq!(average_precision(&d, &g, 0.5), 0.0);
    }

    #[test]
    fn length_groups_bucket_at_boundaries() {
        assert_eq!(LengthGroup::of(30.0), LengthGroup::XS);
        assert_eq!(LengthGroup::of(30.0001), LengthGroup::S);
        assert_eq!(LengthGroup::of(180.0), LengthGroup::L);
        let g = vec![
            gt("a", "x", 0.0, 10.0),
            gt("a", "x", 0.0, 40.0),
            gt("a", "x", 0.0, 90.0),
            gt("a", "x", 0.0, 200.0),
        ];
        let p = length_group_profiles(&[], &g, 0.5);
        assert_eq!(
            p.iter().map(|p| p.group).collect::<Vec<_>>(),
            vec![
                LengthGroup::XS,
                LengthGroup::S,
                LengthGroup::M,
                LengthGroup::XL
            ]
        );
        assert!(p.iter().all(|p| p.num_gts == 1 && p.fn_rate == 1.0));
    }

    #[test]
    fn restricted_map_ignores_other_groups_matches() {
        let g = vec![gt("a", "x", 0.0, 10.0), gt("a", "x", 100.0, 300.0)];
        let d = vec![
            det("a", "x", 100.0, 300.0, 0.9),
            det("a", "x", 0.0, 10.0, 0.8),
        ];
        let p = length_group_profiles(&d, &g, 0.5);
        assert_eq!(p[0].group, LengthGroup::XS);
        assert_eq!(p[0].map, 1.0);
        assert_eq!(p[0].fn_rate, 0.0);
    }

    #[test]
    fn report_average_is_mean_of_terms() {
        let g = vec![gt("a", "x", 0.0, 10.0), gt("a", "y", 3.0, 50.0)];
        let d = vec![det("a", "x", 1.0, 10.0, 0.9), det("a", "y", 5.0, 45.0, 0.6)];
        let r = evaluate(&d, &g, &EvalConfig::default());
        let mean = r.average_map_terms.iter().map(|t| t.map).sum::<f64>() / 10.0;
        assert!((r.average_map - mean).abs() < 1e-12);
        assert!(r.to_text().contains("average mAP"));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
        let g = prop::collection::vec((0.0..50.0f64, 0.5..20.0f64), 1..6);
        let d = prop::collection::vec((0.0..50.0f64, 0.5..20.0f64, 0.01..1.0f64), 0..12);
        (g, d).prop_map(|(g, d)| {
            (
                d.into_iter()
                    .map(|(s, l, p)| det("v", "x", s, s + l, p))
                    .collect(),
                g.into_iter().map(|(s, l)| gt("v", "x", s, s + l)).collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn ap_depends_only_on_ranking((d, g) in arb_case()) {
            let scaled: Vec<_> = d.iter().map(|x| Detection { score: x.score.powi(3) * 0.5, ..x.clone() }).collect();
            prop_assert_eq!(average_precision(&d, &g, 0.5), average_precision(&scaled, &g, 0.5));
        }

        #[test]
        fn map_is_monotone_in_threshold((d, g) in arb_case()) {
            let m = map_at(&d, &g, &[0.3, 0.5, 0.7, 0.9]);
            for w in m.windows(2) {
                prop_assert!(w[0] >= w[1] - 1e-12);
            }
        }

        #[test]
        fn adding_detections_never_raises_fn_rate((d, g) in arb_case(), extra in (0.0..50.0f64, 0.5..20.0f64)) {
            let before = length_group_profiles(&d, &g, 0.5);
            let mut more = d.clone();
            more.push(det("v", "x", extra.0, extra.0 + extra.1, 1.5));
            let after = length_group_profiles(&more, &g, 0.5);
            for (a, b) in before.iter().zip(&after) {
                prop_assert!(b.fn_rate <= a.fn_rate + 1e-12);
            }
        }
    }
}
