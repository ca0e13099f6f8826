//! Interval arithmetic, tIoU, and the coordinate transforms of the four
//! anchoring families (bottom-up boundary fusion, multi-scale anchors,
//! anchor-free centers, and continuous coordinates).
//!
//! Every transform is total: regressed boundaries that cross are re-ordered and
//! the result is clamped at zero (and, where a duration is known, at the video
//! end).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed temporal interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    /// Checked constructor: both endpoints finite, non-negative and ordered.
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let seg = Segment { start, end };
        if seg.is_valid() {
            Ok(seg)
        } else {
            Err(Error::InvalidSegment { start, end })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.start.is_finite()
            && self.end.is_finite()
            && self.start >= 0.0
            && self.start <= self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn shifted(&self, by: f64) -> Segment {
        Segment {
            start: self.start + by,
            end: self.end + by,
        }
    }

    /// Whether the segment lies inside `[0, duration]`.
    pub fn within(&self, duration: f64) -> bool {
        self.is_valid() && self.end <= duration
    }
}

/// The snippet lattice of one video: `num_snippets` columns spaced `step`
/// seconds apart, with `step = duration / num_snippets`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub num_snippets: usize,
    pub step: f64,
    pub duration: f64,
}

impl TimeGrid {
    pub fn new(num_snippets: usize, duration: f64) -> Result<Self> {
        if num_snippets == 0 {
            return Err(Error::InvalidGrid("num_snippets must be at least 1".into()));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "duration {duration} must be positive"
            )));
        }
        Ok(TimeGrid {
            num_snippets,
            step: duration / num_snippets as f64,
            duration,
        })
    }

    /// Seconds per frame: the shortest duration the output may represent.
    pub fn spf(&self, frames_per_snippet: usize) -> f64 {
        self.step / frames_per_snippet.max(1) as f64
    }
}

/// A pair of regressed offsets. For the anchor-free transform `delta_end`
/// carries the predicted length instead.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetPair {
    pub delta_start: f64,
    pub delta_end: f64,
}

impl OffsetPair {
    pub fn new(delta_start: f64, delta_end: f64) -> Self {
        OffsetPair {
            delta_start,
            delta_end,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.delta_start.is_finite() && self.delta_end.is_finite()
    }
}

/// Overlap length of two intervals (zero when disjoint).
#[inline]
pub fn intersection(a: &Segment, b: &Segment) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// Temporal intersection-over-union. Zero when the union has zero length.
#[inline]
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = intersection(a, b);
    let union = a.length() + b.length() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Highest tIoU of `x` against `gts` and the index achieving it (lowest index
/// on ties).
pub fn best_tiou(x: &Segment, gts: &[Segment]) -> Result<(f64, usize)> {
    if gts.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let mut best = (tiou(x, &gts[0]), 0);
    for (i, g) in gts.iter().enumerate().skip(1) {
        let v = tiou(x, g);
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

fn ordered_clamped(start: f64, end: f64, duration: Option<f64>) -> Segment {
    let (mut s, mut e) = if start <= end {
        (start, end)
    } else {
        (end, start)
    };
    s = s.max(0.0);
    e = e.max(0.0);
    if let Some(d) = duration {
        s = s.min(d);
        e = e.min(d);
    }
    Segment { start: s, end: e }
}

/// Multi-scale anchor regression: `(Δs·l + a_s, Δe·l + a_e)` with `l` the
/// anchor length.
pub fn apply_anchor_offset(anchor: &Segment, off: &OffsetPair) -> Segment {
    let l = anchor.length();
    ordered_clamped(
        off.delta_start * l + anchor.start,
        off.delta_end * l + anchor.end,
        None,
    )
}

/// Anchor-free regression around a center: `c* = Δc + c`, segment
/// `[c* − l/2, c* + l/2]` where `off.delta_end` is the predicted length
/// (negative lengths clamp to zero).
pub fn apply_center_offset(center: f64, off: &OffsetPair) -> Segment {
    let c = off.delta_start + center;
    let half = 0.5 * off.delta_end.max(0.0);
    ordered_clamped(c - half, c + half, None)
}

/// Continuous-coordinate regression: offsets scale with the queried
/// segment's own length.
pub fn apply_continuous_offset(x: &Segment, off: &OffsetPair) -> Segment {
    let l = x.length();
    ordered_clamped(
        off.delta_start * l + x.start,
        off.delta_end * l + x.end,
        None,
    )
}

/// Widens `x` symmetrically about its center to at least one frame
/// (`grid.step / frames_per_snippet` seconds), staying inside the video.
pub fn clamp_spf(x: &Segment, grid: &TimeGrid, frames_per_snippet: usize) -> Segment {
    floor_length(*x, grid.spf(frames_per_snippet), grid.duration)
}

fn floor_length(x: Segment, min_len: f64, duration: f64) -> Segment {
    if x.length() >= min_len {
        return x;
    }
    if duration <= min_len {
        return Segment {
            start: 0.0,
            end: duration.max(0.0),
        };
    }
    let c = x.center();
    let (s, e) = (c - 0.5 * min_len, c + 0.5 * min_len);
    if s < 0.0 {
        Segment {
            start: 0.0,
            end: min_len,
        }
    } else if e > duration {
        Segment {
            start: duration - min_len,
            end: duration,
        }
    } else {
        Segment { start: s, end: e }
    }
}

/// Bottom-up confidence: start × end × proposal quality.
#[inline]
pub fn bottom_up_fuse(s_score: f64, e_score: f64, q_score: f64) -> f64 {
    s_score * e_score * q_score
}

/// Partial derivatives of a transformed segment with respect to the input
/// coordinates and to the offsets. Rows are `(start, end)` of the output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct TransformJacobian {
    pub d_coords: [[f64; 2]; 2],
    pub d_offset: [[f64; 2]; 2],
}

impl TransformJacobian {
    /// Pulls an output gradient back to `(coords, offset)` gradients.
    pub fn pullback(&self, g: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let c = &self.d_coords;
        let o = &self.d_offset;
        (
            [
                c[0][0] * g[0] + c[1][0] * g[1],
                c[0][1] * g[0] + c[1][1] * g[1],
            ],
            [
                o[0][0] * g[0] + o[1][0] * g[1],
                o[0][1] * g[0] + o[1][1] * g[1],
            ],
        )
    }
}

/// The refinement-stage coordinate update: continuous offset, re-order, clamp
/// to `[0, duration]`, then the seconds-per-frame floor. Returns the
/// piecewise-linear Jacobian alongside the result.
pub(crate) fn refine_transform(
    x: &Segment,
    off: &OffsetPair,
    duration: f64,
    min_len: f64,
) -> (Segment, TransformJacobian) {
    let l = x.length();
    let raw_s = x.start + off.delta_start * l;
    let raw_e = x.end + off.delta_end * l;
    // rows: d(raw)/d(s, e) and d(raw)/d(Δs, Δe)
    let mut rs = ([1.0 - off.delta_start, off.delta_start], [l, 0.0]);
    let mut re = ([-off.delta_end, 1.0 + off.delta_end], [0.0, l]);
    let (mut s, mut e) = (raw_s, raw_e);
    if s > e {
        std::mem::swap(&mut s, &mut e);
        std::mem::swap(&mut rs, &mut re);
    }
    let zero = ([0.0; 2], [0.0; 2]);
    if s < 0.0 {
        s = 0.0;
        rs = zero;
    } else if s > duration {
        s = duration;
        rs = zero;
    }
    if e < 0.0 {
        e = 0.0;
        re = zero;
    } else if e > duration {
        e = duration;
        re = zero;
    }
    let seg = Segment { start: s, end: e };
    if seg.length() < min_len {
        let floored = floor_length(seg, min_len, duration);
        let interior = floored.start > 0.0 && floored.end < duration;
        let row = if interior {
            (
                [0.5 * (rs.0[0] + re.0[0]), 0.5 * (rs.0[1] + re.0[1])],
                [0.5 * (rs.1[0] + re.1[0]), 0.5 * (rs.1[1] + re.1[1])],
            )
        } else {
            zero
        };
        return (
            floored,
            TransformJacobian {
                d_coords: [row.0, row.0],
                d_offset: [row.1, row.1],
            },
        );
    }
    (
        seg,
        TransformJacobian {
            d_coords: [rs.0, re.0],
            d_offset: [rs.1, re.1],
        },
    )
}

/// tIoU together with its partial derivatives with respect to `x`'s start and
/// end (`g` held fixed). Derivatives are one-sided at kinks.
pub(crate) fn tiou_with_grad(x: &Segment, g: &Segment) -> (f64, [f64; 2]) {
    let lo = x.start.max(g.start);
    let hi = x.end.min(g.end);
    let inter = hi - lo;
    if inter <= 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    let union = x.length() + g.length() - inter;
    if union <= 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    // d(inter)/ds, d(inter)/de
    let di = [
        if x.start > g.start { -1.0 } else { 0.0 },
        if x.end < g.end { 1.0 } else { 0.0 },
    ];
    // union = (e - s) + lg - inter
    let du = [-1.0 - di[0], 1.0 - di[1]];
    let v = inter / union;
    let grad = [
        (di[0] * union - inter * du[0]) / (union * union),
        (di[1] * union - inter * du[1]) / (union * union),
    ];
    (v, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(s: f64, e: f64) -> Segment {
        Segment::new(s, e).unwrap()
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou(&seg(3.0, 7.0), &seg(3.0, 7.0)), 1.0);
        assert_eq!(tiou(&seg(0.0, 1.0), &seg(5.0, 9.0)), 0.0);
        assert!((tiou(&seg(0.0, 2.0), &seg(1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-15);
        // coincident zero-length segments carry no evidence
        assert_eq!(tiou(&seg(4.0, 4.0), &seg(4.0, 4.0)), 0.0);
    }

    #[test]
    fn best_tiou_examples() {
        let x = seg(0.0, 2.0);
        assert_eq!(
            best_tiou(&x, &[seg(1.0, 3.0), seg(0.0, 2.0)]).unwrap(),
            (1.0, 1)
        );
        let (v, i) = best_tiou(&x, &[seg(1.0, 3.0)]).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(i, 0);
        assert_eq!(
            best_tiou(&seg(10.0, 11.0), &[seg(0.0, 1.0), seg(20.0, 21.0)]).unwrap(),
            (0.0, 0)
        );
        assert!(matches!(best_tiou(&x, &[]), Err(Error::EmptyGroundTruth)));
    }

    #[test]
    fn anchor_offset_examples() {
        let a = seg(10.0, 20.0);
        let r = apply_anchor_offset(&a, &OffsetPair::new(0.1, -0.1));
        assert!((r.start - 11.0).abs() < 1e-12 && (r.end - 19.0).abs() < 1e-12);
        assert_eq!(apply_anchor_offset(&a, &OffsetPair::default()), a);
        let p = seg(5.0, 5.0);
        assert_eq!(apply_anchor_offset(&p, &OffsetPair::new(3.0, -7.0)), p);
    }

    #[test]
    fn center_offset_examples() {
        assert_eq!(
            apply_center_offset(10.0, &OffsetPair::new(0.0, 4.0)),
            seg(8.0, 12.0)
        );
        assert_eq!(
            apply_center_offset(10.0, &OffsetPair::new(2.0, 0.0)),
            seg(12.0, 12.0)
        );
        assert_eq!(
            apply_center_offset(1.0, &OffsetPair::new(-5.0, 2.0)),
            seg(0.0, 0.0)
        );
        // negative predicted length behaves as zero
        assert_eq!(
            apply_center_offset(10.0, &OffsetPair::new(0.0, -3.0)),
            seg(10.0, 10.0)
        );
    }

    #[test]
    fn continuous_offset_examples() {
        assert_eq!(
            apply_continuous_offset(&seg(4.0, 8.0), &OffsetPair::new(0.25, -0.25)),
            seg(5.0, 7.0)
        );
        assert_eq!(
            apply_continuous_offset(&seg(4.0, 8.0), &OffsetPair::default()),
            seg(4.0, 8.0)
        );
        assert_eq!(
            apply_continuous_offset(&seg(6.0, 6.0), &OffsetPair::new(0.5, 0.5)),
            seg(6.0, 6.0)
        );
        // crossing offsets are re-ordered, negatives clamp at zero
        assert_eq!(
            apply_continuous_offset(&seg(4.0, 8.0), &OffsetPair::new(1.5, -1.5)),
            seg(2.0, 10.0)
        );
        assert_eq!(
            apply_continuous_offset(&seg(1.0, 2.0), &OffsetPair::new(-3.0, 0.0)),
            seg(0.0, 2.0)
        );
    }

    #[test]
    fn spf_examples() {
        let g = TimeGrid::new(10, 10.0).unwrap();
        assert_eq!(clamp_spf(&seg(5.0, 5.0), &g, 4), seg(4.875, 5.125));
        assert_eq!(clamp_spf(&seg(2.0, 6.0), &g, 4), seg(2.0, 6.0));
        assert_eq!(clamp_spf(&seg(0.0, 0.0), &g, 2), seg(0.0, 0.5));
        assert_eq!(clamp_spf(&seg(10.0, 10.0), &g, 2), seg(9.5, 10.0));
        let tiny = TimeGrid::new(1, 0.1).unwrap();
        assert_eq!(clamp_spf(&seg(0.05, 0.05), &tiny, 1), seg(0.0, 0.1));
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(bottom_up_fuse(1.0, 1.0, 1.0), 1.0);
        assert!((bottom_up_fuse(0.5, 0.5, 0.8) - 0.2).abs() < 1e-15);
        assert_eq!(bottom_up_fuse(0.0, 0.3, 0.9), 0.0);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        assert!(TimeGrid::new(0, 1.0).is_err());
        assert!(TimeGrid::new(3, 0.0).is_err());
        assert!(Segment::new(2.0, 1.0).is_err());
        assert!(Segment::new(-1.0, 1.0).is_err());
        assert!(Segment::new(0.0, f64::NAN).is_err());
    }

    fn transform_fd(x: Segment, off: OffsetPair, dur: f64, min_len: f64) {
        let (_, jac) = refine_transform(&x, &off, dur, min_len);
        let h = 1e-7;
        let eval = |s: f64, e: f64, ds: f64, de: f64| {
            let (r, _) = refine_transform(
                &Segment { start: s, end: e },
                &OffsetPair::new(ds, de),
                dur,
                min_len,
            );
            [r.start, r.end]
        };
        let inputs = [x.start, x.end, off.delta_start, off.delta_end];
        for k in 0..4 {
            let mut p = inputs;
            let mut m = inputs;
            p[k] += h;
            m[k] -= h;
            let fp = eval(p[0], p[1], p[2], p[3]);
            let fm = eval(m[0], m[1], m[2], m[3]);
            for row in 0..2 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let an = if k < 2 {
                    jac.d_coords[row][k]
                } else {
                    jac.d_offset[row][k - 2]
                };
                assert!(
                    (fd - an).abs() < 1e-5,
                    "row {row} input {k}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn refine_transform_jacobian_matches_finite_differences() {
        transform_fd(seg(4.0, 8.0), OffsetPair::new(0.1, -0.2), 20.0, 0.1);
        // swapped endpoints
        transform_fd(seg(4.0, 8.0), OffsetPair::new(1.3, -1.4), 20.0, 0.1);
        // start clamp at zero
        transform_fd(seg(1.0, 8.0), OffsetPair::new(-0.5, 0.1), 20.0, 0.1);
        // end clamp at duration
        transform_fd(seg(10.0, 18.0), OffsetPair::new(0.0, 0.5), 20.0, 0.1);
        // interior length floor
        transform_fd(seg(4.0, 8.0), OffsetPair::new(0.49, -0.49), 20.0, 0.5);
    }

    #[test]
    fn tiou_grad_matches_finite_differences() {
        let g = seg(3.0, 9.0);
        for x in [seg(2.0, 5.0), seg(4.0, 7.0), seg(5.0, 12.0), seg(1.0, 11.0)] {
            let (v, grad) = tiou_with_grad(&x, &g);
            assert!((v - tiou(&x, &g)).abs() < 1e-15);
            let h = 1e-7;
            let ds = (tiou(
                &Segment {
                    start: x.start + h,
                    ..x
                },
                &g,
            ) - tiou(
                &Segment {
                    start: x.start - h,
                    ..x
                },
                &g,
            )) / (2.0 * h);
            let de = (tiou(
                &Segment {
                    end: x.end + h,
                    ..x
                },
                &g,
            ) - tiou(
                &Segment {
                    end: x.end - h,
                    ..x
                },
                &g,
            )) / (2.0 * h);
            assert!((ds - grad[0]).abs() < 1e-6 && (de - grad[1]).abs() < 1e-6);
        }
    }

    fn arb_segment() -> impl Strategy<Value = Segment> {
        (0.0..100.0f64, 0.0..50.0f64).prop_map(|(s, l)| Segment {
            start: s,
            end: s + l,
        })
    }

    proptest! {
        #[test]
        fn tiou_is_symmetric_and_bounded(a in arb_segment(), b in arb_segment()) {
            let ab = tiou(&a, &b);
            prop_assert_eq!(ab, tiou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn tiou_self_is_one(a in arb_segment()) {
            prop_assume!(a.length() > 0.0);
            prop_assert_eq!(tiou(&a, &a), 1.0);
        }

        #[test]
        fn zero_offset_is_identity(a in arb_segment()) {
            prop_assert_eq!(apply_continuous_offset(&a, &OffsetPair::default()), a);
        }

        #[test]
        fn anchor_and_continuous_forms_agree(a in arb_segment(), ds in -2.0..2.0f64, de in -2.0..2.0f64) {
            let off = OffsetPair::new(ds, de);
            prop_assert_eq!(apply_anchor_offset(&a, &off), apply_continuous_offset(&a, &off));
        }

        #[test]
        fn spf_floor_holds(a in arb_segment(), n in 1usize..64, fps in 1usize..32, dur in 1.0..200.0f64) {
            let grid = TimeGrid::new(n, dur).unwrap();
            let x = Segment { start: a.start.min(dur), end: a.end.min(dur) };
            let y = clamp_spf(&x, &grid, fps);
            let spf = grid.spf(fps);
            prop_assert!(y.within(dur));
            prop_assert!(y.length() >= spf - 1e-9 || dur < spf);
        }
    }
}
