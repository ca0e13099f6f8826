//! Video records, the synthetic corpus generator and the on-disk formats.
//!
//! A dataset directory holds `annotations.json` (ActivityNet-style),
//! `features/<video>.feat` (binary, see [`features`]) and optionally
//! `class_scores.json` with video-level class confidences.

mod features;
mod formats;
mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use features::{
    decode_features, encode_features, load_features, save_features, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use formats::{
    load_annotations, load_class_scores, load_detections, save_annotations, save_class_scores,
    save_detections, ClassScores,
};
pub use synth::{
    class_label, generate_synthetic, oracle_class_scores, sample_length, SynthConfig,
    SyntheticCorpus,
};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::geometry::Segment;
use crate::model::{FeatureSequence, TrainingVideo};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const CLASS_SCORES_FILE: &str = "class_scores.json";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "training")]
    Train,
    #[serde(rename = "validation")]
    Val,
    #[serde(rename = "testing")]
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" | "training" => Some(Split::Train),
            "val" | "validation" => Some(Split::Val),
            "test" | "testing" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub segment: Segment,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub duration: f64,
    pub annotations: Vec<Annotation>,
    pub split: Split,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::validation(
                &self.id,
                format!("duration {} must be positive", self.duration),
            ));
        }
        for a in &self.annotations {
            let s = a.segment;
            if !s.is_valid() || s.end > self.duration {
                return Err(Error::validation(
                    &self.id,
                    format!(
                        "segment [{}, {}] outside [0, {}]",
                        s.start, s.end, self.duration
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.annotations.iter().map(|a| a.segment).collect()
    }

    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.annotations
            .iter()
            .map(|a| GroundTruth {
                video: self.id.clone(),
                label: a.label.clone(),
                segment: a.segment,
            })
            .collect()
    }
}

/// Sorted distinct labels over `records`.
pub fn class_names(records: &[VideoRecord]) -> Vec<String> {
    let mut v: Vec<String> = records
        .iter()
        .flat_map(|r| r.annotations.iter().map(|a| a.label.clone()))
        .collect();
    v.sort();
    v.dedup();
    v
}

pub fn feature_path(dir: &Path, video: &str) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{video}.feat"))
}

/// Loads the features of `record` from `dir` and checks they span its duration.
pub fn load_video_features(dir: &Path, record: &VideoRecord) -> Result<FeatureSequence> {
    let f = load_features(feature_path(dir, &record.id))?;
    if (f.duration() - record.duration).abs() > 1e-6 * record.duration.max(1.0) {
        return Err(Error::validation(
            &record.id,
            format!(
                "features span {} s but the video lasts {} s",
                f.duration(),
                record.duration
            ),
        ));
    }
    Ok(f)
}

pub fn training_videos(dir: &Path, records: &[VideoRecord]) -> Result<Vec<TrainingVideo>> {
    records
        .iter()
        .map(|r| {
            Ok(TrainingVideo {
                id: r.id.clone(),
                features: load_video_features(dir, r)?,
                gts: r.segments(),
            })
        })
        .collect()
}

/// Writes `bytes` to a temporary sibling of `path`, syncs it, then renames it
/// over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "path has no file name",
        ))
    })?;
    let tmp = path.with_file_name(format!(
        ".{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id()
    ));
    let res = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

/// Public wrapper around the atomic writer for front ends.
pub fn write_file_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_atomic(path.as_ref(), bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn record_validation_names_the_video() {
        let r = VideoRecord {
            id: "vid7".into(),
            duration: 10.0,
            annotations: vec![Annotation {
                segment: Segment {
                    start: 2.0,
                    end: 12.0,
                },
                label: "a".into(),
            }],
            split: Split::Train,
        };
        let e = r.validate().unwrap_err().to_string();
        assert!(e.contains("vid7"), "{e}");
    }
}
