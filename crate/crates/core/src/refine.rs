//! Recurrent refinement: each stage re-scores the current coordinates with
//! the hidden state carried over from the previous stage, then moves the
//! coordinates by the predicted relative offset (clamped to the video and
//! floored at one frame).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{refine_transform, Segment, TransformJacobian};
use crate::model::network::{check_dims, stage_forward, ScorerOutput, StageCache};
use crate::model::{FeatureSequence, ScorerParams};
use crate::par::{self, ExecMode};
use crate::sampling::SampleSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Number of stages `M`.
    pub iterations: usize,
    /// Frames per snippet; one frame (`step / frames_per_snippet`) is the shortest output.
    pub frames_per_snippet: usize,
    /// Detach coordinates between stages during training. When off, gradients
    /// also flow through every coordinate update and through the targets
    /// recomputed at the moved coordinates.
    pub stop_gradient: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 10,
            frames_per_snippet: 16,
            stop_gradient: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("refine.iterations must be at least 1".into()));
        }
        if self.frames_per_snippet == 0 {
            return Err(Error::Config(
                "refine.frames_per_snippet must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn min_len(&self, f: &FeatureSequence) -> f64 {
        f.step() / self.frames_per_snippet as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineState {
    pub hidden: Vec<Vec<f64>>,
    pub coords: Vec<Segment>,
    pub iteration: usize,
}

impl RefineState {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Coordinates after a stage together with the outputs scored at its input.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineStage {
    pub coords: Vec<Segment>,
    pub outputs: Vec<ScorerOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrajectory {
    pub stages: Vec<RefineStage>,
}

impl RefineTrajectory {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn last(&self) -> Option<&RefineStage> {
        self.stages.last()
    }
}

pub fn init_state(samples: &SampleSet, hidden_dim: usize) -> Result<RefineState> {
    init_state_from(&samples.segments(), hidden_dim)
}

pub fn init_state_from(coords: &[Segment], hidden_dim: usize) -> Result<RefineState> {
    if hidden_dim == 0 {
        return Err(Error::Config("hidden_dim must be at least 1".into()));
    }
    Ok(RefineState {
        hidden: vec![vec![0.0; hidden_dim]; coords.len()],
        coords: coords.to_vec(),
        iteration: 0,
    })
}

/// One refinement stage over every sample of `state`.
pub fn update_step(
    state: &RefineState,
    params: &ScorerParams,
    f: &FeatureSequence,
    cfg: &RefineConfig,
    mode: ExecMode,
) -> Result<(RefineState, Vec<ScorerOutput>)> {
    check_dims(params, f)?;
    if state.iteration >= cfg.iterations {
        return Err(Error::IterationOverflow(state.iteration));
    }
    if state
        .hidden
        .iter()
        .any(|h| h.len() != params.arch().hidden_dim)
    {
        return Err(Error::Dimension(
            "hidden state width does not match the scorer".into(),
        ));
    }
    let duration = f.duration();
    let min_len = cfg.min_len(f);
    let idx: Vec<usize> = (0..state.len()).collect();
    let results = par::map(mode, &idx, |&i| {
        let cache = stage_forward(params, f, &state.coords[i], &state.hidden[i]);
        let (next, _) = refine_transform(&state.coords[i], &cache.output.offset, duration, min_len);
        (next, cache.h, cache.output)
    });
    let mut next = RefineState {
        hidden: Vec::with_capacity(results.len()),
        coords: Vec::with_capacity(results.len()),
        iteration: state.iteration + 1,
    };
    let mut outputs = Vec::with_capacity(results.len());
    for (c, h, o) in results {
        next.coords.push(c);
        next.hidden.push(h);
        outputs.push(o);
    }
    Ok((next, outputs))
}

/// Applies `cfg.iterations` stages and records every one of them.
pub fn run_refinement(
    samples: &[Segment],
    params: &ScorerParams,
    f: &FeatureSequence,
    cfg: &RefineConfig,
    mode: ExecMode,
) -> Result<RefineTrajectory> {
    cfg.validate()?;
    let mut state = init_state_from(samples, params.arch().hidden_dim)?;
    let mut stages = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (next, outputs) = update_step(&state, params, f, cfg, mode)?;
        stages.push(RefineStage {
            coords: next.coords.clone(),
            outputs,
        });
        state = next;
    }
    Ok(RefineTrajectory { stages })
}

/// Everything the backward pass needs for one sample: stage caches, the
/// coordinates entering each stage (`coords[m]`) plus the final ones, and the
/// coordinate-update Jacobians.
pub(crate) struct SampleTrace {
    pub caches: Vec<StageCache>,
    pub coords: Vec<Segment>,
    pub jacobians: Vec<TransformJacobian>,
}

pub(crate) fn trace_sample(
    params: &ScorerParams,
    f: &FeatureSequence,
    x0: &Segment,
    cfg: &RefineConfig,
) -> SampleTrace {
    let duration = f.duration();
    let min_len = cfg.min_len(f);
    let mut h = vec![0.0; params.arch().hidden_dim];
    let mut x = *x0;
    let mut caches = Vec::with_capacity(cfg.iterations);
    let mut coords = Vec::with_capacity(cfg.iterations + 1);
    let mut jacobians = Vec::with_capacity(cfg.iterations);
    coords.push(x);
    for _ in 0..cfg.iterations {
        let cache = stage_forward(params, f, &x, &h);
        let (next, jac) = refine_transform(&x, &cache.output.offset, duration, min_len);
        h.clone_from(&cache.h);
        caches.push(cache);
        jacobians.push(jac);
        coords.push(next);
        x = next;
    }
    SampleTrace {
        caches,
        coords,
        jacobians,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_continuous_offset, TimeGrid};
    use crate::model::{forward, Arch, ModelConfig};
    use crate::sampling::grid_samples;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ScorerParams, FeatureSequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Arch::new(
            3,
            &ModelConfig {
                trunk_widths: vec![16],
                hidden_dim: 6,
                soi_bins: 4,
            },
        )
        .unwrap();
        let v = (0..3 * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        (
            ScorerParams::init(arch, seed),
            FeatureSequence::new(3, 10, 2.0, v).unwrap(),
        )
    }

    #[test]
    fn init_state_examples() {
        let grid = TimeGrid::new(2, 4.0).unwrap();
        let mut samples = grid_samples(&grid);
        samples
            .points
            .extend(grid_samples(&grid).points[..2].iter().copied());
        let s = init_state(&samples, 32).unwrap();
        assert_eq!(s.hidden.len(), 5);
        assert!(s
            .hidden
            .iter()
            .all(|h| h.len() == 32 && h.iter().all(|&v| v == 0.0)));
        assert_eq!(s.coords, samples.segments());
        assert_eq!(s.iteration, 0);
        assert!(init_state(&SampleSet::empty(grid), 4).unwrap().is_empty());
        assert!(init_state(&samples, 0).is_err());
    }

    #[test]
    fn zero_offset_head_freezes_coordinates() {
        let (mut p, f) = setup(1);
        p.zero_offset_head();
        let xs = [
            Segment {
                start: 2.0,
                end: 9.0,
            },
            Segment {
                start: 0.5,
                end: 3.5,
            },
        ];
        let cfg = RefineConfig {
            iterations: 4,
            ..Default::default()
        };
        let t = run_refinement(&xs, &p, &f, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(t.len(), 4);
        for st in &t.stages {
            assert_eq!(st.coords, xs);
        }
    }

    #[test]
    fn single_stage_matches_plain_forward() {
        let (p, f) = setup(2);
        let x = Segment {
            start: 3.1,
            end: 11.4,
        };
        let cfg = RefineConfig {
            iterations: 1,
            frames_per_snippet: 1_000_000,
            ..Default::default()
        };
        let t = run_refinement(&[x], &p, &f, &cfg, ExecMode::Sequential).unwrap();
        let (plain, _) = forward(&p, &f, &x).unwrap();
        assert_eq!(t.stages[0].outputs[0], plain);
        let once = apply_continuous_offset(&x, &plain.offset);
        let c = t.stages[0].coords[0];
        assert!((c.start - once.start.min(f.duration())).abs() < 1e-12);
        assert!((c.end - once.end.min(f.duration())).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_bounded_under_wild_parameters() {
        let (mut p, f) = setup(3);
        for v in p.as_mut_slice() {
            *v *= 25.0;
        }
        let xs: Vec<Segment> = grid_samples(&TimeGrid::new(10, 20.0).unwrap()).segments();
        let cfg = RefineConfig {
            iterations: 6,
            ..Default::default()
        };
        let a = run_refinement(&xs, &p, &f, &cfg, ExecMode::Parallel).unwrap();
        let b = run_refinement(&xs, &p, &f, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(a, b);
        let spf = f.step() / 16.0;
        for st in &a.stages {
            for c in &st.coords {
                assert!(c.within(f.duration()));
                assert!(c.length() >= spf - 1e-12);
            }
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let (p, f) = setup(4);
        let cfg = RefineConfig {
            iterations: 1,
            ..Default::default()
        };
        let s = init_state_from(
            &[Segment {
                start: 1.0,
                end: 2.0,
            }],
            6,
        )
        .unwrap();
        let (s, _) = update_step(&s, &p, &f, &cfg, ExecMode::Sequential).unwrap();
        assert!(matches!(
            update_step(&s, &p, &f, &cfg, ExecMode::Sequential),
            Err(Error::IterationOverflow(1))
        ));
    }
}
