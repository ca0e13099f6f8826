//! JSON formats: ActivityNet-style annotations, detection results and
//! video-level class scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, Annotation, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::postproc::Detection;

const FORMAT_VERSION: &str = "ctal-1.0";

#[derive(Serialize, Deserialize)]
struct AnnotationFile {
    version: String,
    database: BTreeMap<String, VideoEntry>,
}

#[derive(Serialize, Deserialize)]
struct VideoEntry {
    duration: f64,
    subset: Split,
    annotations: Vec<AnnotationEntry>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    segment: [f64; 2],
    label: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &'static str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(kind, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn save_annotations(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    let mut database = BTreeMap::new();
    for r in records {
        r.validate()?;
        let entry = VideoEntry {
            duration: r.duration,
            subset: r.split,
            annotations: r
                .annotations
                .iter()
                .map(|a| AnnotationEntry {
                    segment: [a.segment.start, a.segment.end],
                    label: a.label.clone(),
                })
                .collect(),
        };
        if database.insert(r.id.clone(), entry).is_some() {
            return Err(Error::validation(&r.id, "duplicate video id"));
        }
    }
    write_json(
        path.as_ref(),
        &AnnotationFile {
            version: FORMAT_VERSION.into(),
            database,
        },
    )
}

/// Reads and validates an annotation file; records come back sorted by id.
/// Extra keys (such as `url` or `resolution`) are ignored.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let file: AnnotationFile = read_json(path.as_ref(), "annotation")?;
    file.database
        .into_iter()
        .map(|(id, e)| {
            let r = VideoRecord {
                annotations: e
                    .annotations
                    .into_iter()
                    .map(|a| Annotation {
                        segment: Segment {
                            start: a.segment[0],
                            end: a.segment[1],
                        },
                        label: a.label,
                    })
                    .collect(),
                id,
                duration: e.duration,
                split: e.subset,
            };
            r.validate()?;
            Ok(r)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DetectionFile {
    version: String,
    results: BTreeMap<String, Vec<DetectionEntry>>,
    #[serde(default)]
    external_data: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct DetectionEntry {
    label: String,
    score: f64,
    segment: [f64; 2],
}

/// Detections grouped by video; within a video the input order is kept.
pub fn save_detections(path: impl AsRef<Path>, dets: &[Detection]) -> Result<()> {
    let mut results: BTreeMap<String, Vec<DetectionEntry>> = BTreeMap::new();
    for d in dets {
        d.validate()?;
        results
            .entry(d.video.clone())
            .or_default()
            .push(DetectionEntry {
                label: d.label.clone(),
                score: d.score,
                segment: [d.segment.start, d.segment.end],
            });
    }
    write_json(
        path.as_ref(),
        &DetectionFile {
            version: FORMAT_VERSION.into(),
            results,
            external_data: serde_json::json!({}),
        },
    )
}

/// Videos come back sorted by id, detections in file order within a video.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let file: DetectionFile = read_json(path.as_ref(), "detection")?;
    let mut out = Vec::new();
    for (video, entries) in file.results {
        for e in entries {
            let d = Detection {
                video: video.clone(),
                label: e.label,
                segment: Segment {
                    start: e.segment[0],
                    end: e.segment[1],
                },
                score: e.score,
            };
            d.validate()?;
            out.push(d);
        }
    }
    Ok(out)
}

/// Video-level class confidences: video id → label → score in `[0, 1]`.
pub type ClassScores = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Serialize, Deserialize)]
struct ClassScoreFile {
    version: String,
    results: ClassScores,
}

pub fn save_class_scores(path: impl AsRef<Path>, scores: &ClassScores) -> Result<()> {
    write_json(
        path.as_ref(),
        &ClassScoreFile {
            version: FORMAT_VERSION.into(),
            results: scores.clone(),
        },
    )
}

pub fn load_class_scores(path: impl AsRef<Path>) -> Result<ClassScores> {
    let file: ClassScoreFile = read_json(path.as_ref(), "class-score")?;
    for (video, m) in &file.results {
        for (label, &s) in m {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::validation(
                    video,
                    format!("class score {s} for {label} outside [0, 1]"),
                ));
            }
        }
    }
    Ok(file.results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn records() -> Vec<VideoRecord> {
        vec![
            VideoRecord {
                id: "a".into(),
                duration: 100.5,
                annotations: vec![
                    Annotation {
                        segment: Segment {
                            start: 1.25,
                            end: 30.0,
                        },
                        label: "run".into(),
                    },
                    Annotation {
                        segment: Segment {
                            start: 40.0,
                            end: 100.5,
                        },
                        label: "jump".into(),
                    },
                ],
                split: Split::Train,
            },
            VideoRecord {
                id: "b".into(),
                duration: 7.0,
                annotations: vec![],
                split: Split::Val,
            },
        ]
    }

    #[test]
    fn annotations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.json");
        save_annotations(&p, &records()).unwrap();
        assert_eq!(load_annotations(&p).unwrap(), records());
    }

    #[test]
    fn empty_database_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.json");
        fs::write(&p, r#"{"version": "1.3", "database": {}}"#).unwrap();
        assert!(load_annotations(&p).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_segment_names_the_video() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.json");
        fs::write(
            &p,
            r#"{"version": "1.3", "database": {"v_bad": {"duration": 10.0, "subset": "validation", "url": "x",
                "annotations": [{"segment": [2.0, 11.0], "label": "a"}]}}}"#,
        )
        .unwrap();
        let e = load_annotations(&p).unwrap_err();
        assert!(
            matches!(&e, Error::Validation { video, .. } if video == "v_bad"),
            "{e}"
        );
        fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_annotations(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn detections_round_trip_at_full_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dets: Vec<Detection> = (0..1000)
            .map(|i| {
                let s: f64 = rng.random_range(0.0..100.0);
                Detection {
                    video: format!("v{:02}", i % 37),
                    label: format!("c{}", rng.random_range(0..3)),
                    segment: Segment {
                        start: s,
                        end: s + rng.random_range(0.0..50.0),
                    },
                    score: rng.random(),
                }
            })
            .collect();
        dets.sort_by(|a, b| a.video.cmp(&b.video));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("det.json");
        save_detections(&p, &dets).unwrap();
        let back = load_detections(&p).unwrap();
        assert_eq!(back, dets);
        for (a, b) in back.iter().zip(&dets) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
        save_detections(&p, &[]).unwrap();
        assert!(load_detections(&p).unwrap().is_empty());
    }

    #[test]
    fn class_scores_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cls.json");
        let mut s = ClassScores::new();
        s.entry("v".into()).or_default().insert("a".into(), 0.25);
        save_class_scores(&p, &s).unwrap();
        assert_eq!(load_class_scores(&p).unwrap(), s);
        fs::write(&p, r#"{"version": "x", "results": {"v": {"a": 1.5}}}"#).unwrap();
        assert!(load_class_scores(&p).is_err());
    }
}
