//! Seeded synthetic corpora with planted action segments.
//!
//! Every class owns a fixed random signature vector. A snippet column `k`
//! (window `[kσ − σ/2, kσ + σ/2]`) carries each segment's signature scaled by
//! the fraction of the window the segment covers, plus start and end onset
//! vectors weighted by a triangle kernel of half-width σ around every
//! boundary, plus Gaussian noise of standard deviation `1 / snr`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Annotation, ClassScores, Split, VideoRecord};
use crate::config::derive_seed;
use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::model::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub classes: usize,
    /// Video durations are uniform in this range (seconds).
    pub duration_range: [f64; 2],
    /// Segments per video, uniform over this inclusive range.
    pub segments_per_video: [usize; 2],
    /// Segment lengths are log-uniform in this range (seconds).
    pub length_range: [f64; 2],
    pub feature_dim: usize,
    pub num_snippets: usize,
    /// Signal-to-noise ratio; `inf` disables noise.
    pub snr: f64,
    /// Planted lengths are floored at one frame, `step / frames_per_snippet`.
    pub frames_per_snippet: usize,
    /// Redraws of a video's segment lengths before giving up on packing.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_train: 200,
            num_val: 50,
            num_test: 0,
            classes: 3,
            duration_range: [300.0, 600.0],
            segments_per_video: [1, 3],
            length_range: [1.0, 200.0],
            feature_dim: 16,
            num_snippets: 64,
            snr: 2.0,
            frames_per_snippet: 16,
            max_attempts: 100,
        }
    }
}

impl SynthConfig {
    pub fn num_videos(&self) -> usize {
        self.num_train + self.num_val + self.num_test
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.num_videos() == 0 || self.classes == 0 || self.feature_dim == 0 {
            return bad("video, class and feature counts must be at least 1");
        }
        if self.num_snippets < 2 {
            return bad("num_snippets must be at least 2");
        }
        let [d0, d1] = self.duration_range;
        if !(d0.is_finite() && d0 > 0.0 && d1 >= d0 && d1.is_finite()) {
            return bad("duration_range must be positive and ordered");
        }
        let [n0, n1] = self.segments_per_video;
        if n0 == 0 || n1 < n0 {
            return bad("segments_per_video must be at least 1 and ordered");
        }
        let [l0, l1] = self.length_range;
        if !(l0.is_finite() && l0 > 0.0 && l1 >= l0 && l1.is_finite()) {
            return bad("length_range must be positive and ordered");
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            return bad("snr must be positive");
        }
        if self.frames_per_snippet == 0 || self.max_attempts == 0 {
            return bad("frames_per_snippet and max_attempts must be at least 1");
        }
        Ok(())
    }

    fn split_of(&self, i: usize) -> Split {
        if i < self.num_train {
            Split::Train
        } else if i < self.num_train + self.num_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<VideoRecord>,
    pub features: Vec<FeatureSequence>,
}

pub fn class_label(c: usize) -> String {
    format!("class_{c}")
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32 as f64
        })
        .collect()
}

/// Draws one log-uniform length.
pub fn sample_length<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    let (a, b) = (range[0].ln(), range[1].ln());
    if b > a {
        rng.random_range(a..b).exp()
    } else {
        range[0]
    }
}

fn place_segments(
    cfg: &SynthConfig,
    id: &str,
    duration: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Annotation>> {
    let [n0, n1] = cfg.segments_per_video;
    let k = rng.random_range(n0..=n1);
    let spf = duration / cfg.num_snippets as f64 / cfg.frames_per_snippet as f64;
    for _ in 0..cfg.max_attempts {
        let lengths: Vec<f64> = (0..k)
            .map(|_| sample_length(cfg.length_range, rng).max(spf))
            .collect();
        let total: f64 = lengths.iter().sum();
        if total > duration {
            continue;
        }
        let gaps: Vec<f64> = (0..=k).map(|_| Exp1.sample(rng)).collect();
        let norm = (duration - total) / gaps.iter().sum::<f64>();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(k);
        for (i, &l) in lengths.iter().enumerate() {
            t += gaps[i] * norm;
            let end = (t + l).min(duration);
            out.push(Annotation {
                segment: Segment { start: t, end },
                label: class_label(rng.random_range(0..cfg.classes)),
            });
            t = end;
        }
        return Ok(out);
    }
    Err(Error::InfeasiblePacking {
        video: id.to_string(),
        segments: k,
        attempts: cfg.max_attempts,
    })
}

/// Fraction of snippet `k`'s window covered by `s`.
fn coverage(s: &Segment, k: usize, step: f64) -> f64 {
    let (lo, hi) = ((k as f64 - 0.5) * step, (k as f64 + 0.5) * step);
    if lo >= s.start && hi <= s.end {
        return 1.0;
    }
    (s.end.min(hi) - s.start.max(lo)).max(0.0) / step
}

fn triangle(t: f64, at: f64, half_width: f64) -> f64 {
    (1.0 - (t - at).abs() / half_width).max(0.0)
}

/// Generates records and features for `cfg.num_videos()` videos, assigned to
/// the train, validation and test splits in that order. Every value is a
/// function of `seed`, and features are exactly representable as `f32`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let (dim, len) = (cfg.feature_dim, cfg.num_snippets);
    let mut shared = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let signatures: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| normal_vec(&mut shared, dim))
        .collect();
    let onset_start = normal_vec(&mut shared, dim);
    let onset_end = normal_vec(&mut shared, dim);
    let noise = if cfg.snr.is_infinite() {
        0.0
    } else {
        1.0 / cfg.snr
    };

    let mut records = Vec::with_capacity(cfg.num_videos());
    let mut features = Vec::with_capacity(cfg.num_videos());
    for i in 0..cfg.num_videos() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, i as u64]));
        let id = format!("video_{i:05}");
        let [d0, d1] = cfg.duration_range;
        let duration = if d1 > d0 {
            rng.random_range(d0..d1)
        } else {
            d0
        };
        let annotations = place_segments(cfg, &id, duration, &mut rng)?;
        let step = duration / len as f64;

        let mut values = vec![0.0; dim * len];
        for a in &annotations {
            let c: usize = a.label["class_".len()..].parse().expect("generated label");
            for k in 0..len {
                let w = coverage(&a.segment, k, step);
                let ws = triangle(k as f64 * step, a.segment.start, step);
                let we = triangle(k as f64 * step, a.segment.end, step);
                if w == 0.0 && ws == 0.0 && we == 0.0 {
                    continue;
                }
                for d in 0..dim {
                    values[d * len + k] +=
                        w * signatures[c][d] + ws * onset_start[d] + we * onset_end[d];
                }
            }
        }
        if noise > 0.0 {
            for v in values.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += noise * z;
            }
        }
        for v in values.iter_mut() {
            *v = *v as f32 as f64;
        }
        features.push(FeatureSequence::new(dim, len, step, values)?);
        records.push(VideoRecord {
            id,
            duration,
            annotations,
            split: cfg.split_of(i),
        });
    }
    Ok(SyntheticCorpus { records, features })
}

/// Oracle video-level class scores: 1 for every class present in a video, 0 otherwise.
pub fn oracle_class_scores(records: &[VideoRecord], classes: &[String]) -> ClassScores {
    records
        .iter()
        .map(|r| {
            let m = classes
                .iter()
                .map(|c| {
                    (
                        c.clone(),
                        if r.annotations.iter().any(|a| &a.label == c) {
                            1.0
                        } else {
                            0.0
                        },
                    )
                })
                .collect();
            (r.id.clone(), m)
        })
        .collect()
}
