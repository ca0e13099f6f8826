//! Training samples over the continuous `(start, end)` plane.
//!
//! Three sources are combined per video: the regular grid (which reproduces a
//! discretized boundary-matching map), grid points jittered uniformly within
//! their cell, and scale-invariant draws around each ground truth whose spread
//! is proportional to the ground-truth length.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Segment, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOrigin {
    Grid,
    Uniform,
    GtLocal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub segment: Segment,
    pub origin: SampleOrigin,
    /// Index of the ground truth a `GtLocal` sample was drawn around.
    pub gt_hint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
    pub grid: TimeGrid,
}

impl SampleSet {
    pub fn empty(grid: TimeGrid) -> Self {
        SampleSet {
            points: Vec::new(),
            grid,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.points.iter().map(|p| p.segment).collect()
    }
}

/// Sampler knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Scale-invariant samples drawn per ground truth.
    pub n_per_gt: usize,
    /// Endpoint noise standard deviation as a fraction of the ground-truth length.
    pub kappa: f64,
    /// Redraws allowed for a degenerate scale-invariant sample before snapping to the ground truth.
    pub retry_cap: usize,
    pub use_grid: bool,
    pub use_uniform: bool,
    pub use_scale_invariant: bool,
    /// Upper bound on samples per video per step; 0 keeps everything.
    /// Scale-invariant samples are kept first, the rest is filled from the grid and uniform pools.
    pub max_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_per_gt: 16,
            kappa: 0.25,
            retry_cap: 8,
            use_grid: true,
            use_uniform: true,
            use_scale_invariant: true,
            max_samples: 256,
        }
    }
}

impl SamplerConfig {
    pub fn grid_only() -> Self {
        SamplerConfig {
            use_uniform: false,
            use_scale_invariant: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_gt == 0 {
            return Err(Error::Config("sampler.n_per_gt must be at least 1".into()));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Config(
                "sampler.kappa must be finite and non-negative".into(),
            ));
        }
        if !(self.use_grid || self.use_uniform || self.use_scale_invariant) {
            return Err(Error::Config("at least one sampler must be enabled".into()));
        }
        Ok(())
    }
}

#[inline]
fn grid_segment(grid: &TimeGrid, i: usize, j: usize) -> Segment {
    Segment {
        start: i as f64 * grid.step,
        end: ((j + 1) as f64 * grid.step).min(grid.duration),
    }
}

/// One sample per valid lattice point `(i, j)` with `i ≤ j`: the segment
/// `[i·σ, (j+1)·σ]`, enumerated start-major.
pub fn grid_samples(grid: &TimeGrid) -> SampleSet {
    let t = grid.num_snippets;
    let mut points = Vec::with_capacity(t * (t + 1) / 2);
    for i in 0..t {
        for j in i..t {
            points.push(SamplePoint {
                segment: grid_segment(grid, i, j),
                origin: SampleOrigin::Grid,
                gt_hint: None,
            });
        }
    }
    SampleSet {
        points,
        grid: *grid,
    }
}

/// Grid points with each endpoint jittered uniformly by up to half a cell.
pub fn uniform_samples<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> SampleSet {
    uniform_samples_with_jitter(grid, 0.5 * grid.step, rng)
}

/// As [`uniform_samples`] with an explicit jitter half-width.
pub fn uniform_samples_with_jitter<R: Rng + ?Sized>(
    grid: &TimeGrid,
    half_width: f64,
    rng: &mut R,
) -> SampleSet {
    let mut set = grid_samples(grid);
    let clip = |v: f64| v.clamp(0.0, grid.duration);
    for p in &mut set.points {
        let js = (2.0 * rng.random::<f64>() - 1.0) * half_width;
        let je = (2.0 * rng.random::<f64>() - 1.0) * half_width;
        let s = clip(p.segment.start + js);
        let e = clip(p.segment.end + je);
        p.segment = Segment {
            start: s.min(e),
            end: s.max(e),
        };
        p.origin = SampleOrigin::Uniform;
    }
    set
}

/// Draws `cfg.n_per_gt` samples around every ground truth, perturbing both
/// endpoints with zero-mean Gaussian noise of standard deviation
/// `cfg.kappa · length`.
pub fn scale_invariant_samples<R: Rng + ?Sized>(
    gts: &[Segment],
    cfg: &SamplerConfig,
    grid: &TimeGrid,
    rng: &mut R,
) -> SampleSet {
    let mut points = Vec::with_capacity(gts.len() * cfg.n_per_gt);
    for (gi, gt) in gts.iter().enumerate() {
        let std = cfg.kappa * gt.length();
        let noise = Normal::new(0.0, std).ok().filter(|_| std > 0.0);
        for _ in 0..cfg.n_per_gt {
            let mut seg = None;
            if let Some(noise) = &noise {
                for _ in 0..cfg.retry_cap.max(1) {
                    let s = (gt.start + noise.sample(rng)).clamp(0.0, grid.duration);
                    let e = (gt.end + noise.sample(rng)).clamp(0.0, grid.duration);
                    if e > s {
                        seg = Some(Segment { start: s, end: e });
                        break;
                    }
                }
            }
            points.push(SamplePoint {
                segment: seg.unwrap_or(*gt),
                origin: SampleOrigin::GtLocal,
                gt_hint: Some(gi),
            });
        }
    }
    SampleSet {
        points,
        grid: *grid,
    }
}

/// Concatenates grid, uniform and ground-truth-local samples in that order.
pub fn compose_training_batch(
    grid_s: SampleSet,
    uni_s: SampleSet,
    si_s: SampleSet,
) -> Result<SampleSet> {
    if grid_s.grid != uni_s.grid || grid_s.grid != si_s.grid {
        return Err(Error::GridMismatch);
    }
    let mut points = grid_s.points;
    points.extend(uni_s.points);
    points.extend(si_s.points);
    Ok(SampleSet {
        points,
        grid: grid_s.grid,
    })
}

/// Builds one video's training batch according to `cfg`, including the
/// `max_samples` cap.
pub fn training_batch<R: Rng + ?Sized>(
    grid: &TimeGrid,
    gts: &[Segment],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> SampleSet {
    let grid_s = if cfg.use_grid {
        grid_samples(grid)
    } else {
        SampleSet::empty(*grid)
    };
    let uni_s = if cfg.use_uniform {
        uniform_samples(grid, rng)
    } else {
        SampleSet::empty(*grid)
    };
    let si_s = if cfg.use_scale_invariant {
        scale_invariant_samples(gts, cfg, grid, rng)
    } else {
        SampleSet::empty(*grid)
    };
    let cap = cfg.max_samples;
    if cap == 0 || grid_s.len() + uni_s.len() + si_s.len() <= cap {
        return compose_training_batch(grid_s, uni_s, si_s).expect("shared grid");
    }
    let mut si_points = si_s.points;
    if si_points.len() >= cap {
        let keep = rand::seq::index::sample(rng, si_points.len(), cap).into_vec();
        let mut keep = keep;
        keep.sort_unstable();
        si_points = keep.into_iter().map(|i| si_points[i]).collect();
        return SampleSet {
            points: si_points,
            grid: *grid,
        };
    }
    let mut pool = grid_s.points;
    pool.extend(uni_s.points);
    let room = cap - si_points.len();
    let mut keep = rand::seq::index::sample(rng, pool.len(), room).into_vec();
    keep.sort_unstable();
    let mut points: Vec<SamplePoint> = keep.into_iter().map(|i| pool[i]).collect();
    points.extend(si_points);
    SampleSet {
        points,
        grid: *grid,
    }
}
