use std::collections::HashMap;

use ctal_core::data::{
    class_names, feature_path, generate_synthetic, load_annotations, load_detections,
    oracle_class_scores, save_annotations, save_detections, save_features, training_videos, Split,
    SynthConfig, ANNOTATIONS_FILE,
};
use ctal_core::eval::{evaluate, EvalConfig};
use ctal_core::model::{fit, init_params, ModelConfig, TrainConfig, TrainState};
use ctal_core::par::ExecMode;
use ctal_core::pipeline::{detect_video, propose, InferenceConfig};

fn tiny_cfg(mode: ExecMode) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: 3,
        mode,
        model: ModelConfig {
            trunk_widths: vec![16, 16],
            hidden_dim: 8,
            soi_bins: 8,
        },
        ..TrainConfig::default()
    };
    cfg.refine.iterations = 3;
    cfg.sampler.max_samples = 48;
    cfg.optim.batch_size = 2;
    cfg.optim.epochs = 3;
    cfg
}

#[test]
fn dataset_on_disk_trains_detects_and_evaluates() {
    let synth = SynthConfig {
        num_train: 6,
        num_val: 3,
        num_snippets: 16,
        feature_dim: 6,
        duration_range: [60.0, 120.0],
        length_range: [2.0, 60.0],
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&synth, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("features")).unwrap();
    save_annotations(dir.path().join(ANNOTATIONS_FILE), &corpus.records).unwrap();
    for (r, f) in corpus.records.iter().zip(&corpus.features) {
        save_features(feature_path(dir.path(), &r.id), f).unwrap();
    }

    let records = load_annotations(dir.path().join(ANNOTATIONS_FILE)).unwrap();
    let (train, val): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| r.split == Split::Train);
    let videos = training_videos(dir.path(), &train).unwrap();
    let cfg = tiny_cfg(ExecMode::Parallel);
    let mut params = init_params(6, &cfg).unwrap();
    let mut state = TrainState::new(&params);
    let mut losses = Vec::new();
    fit(&mut params, &videos, &cfg, &mut state, |_, _, r| {
        losses.push(r.total)
    })
    .unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.is_finite()));

    let classes = class_names(&records);
    let scores = oracle_class_scores(&records, &classes);
    let val_videos = training_videos(dir.path(), &val).unwrap();
    let inf = InferenceConfig::default();
    let mut dets = Vec::new();
    for v in &val_videos {
        let cs: Vec<(String, f64)> = scores[&v.id].iter().map(|(k, s)| (k.clone(), *s)).collect();
        let d = detect_video(
            &v.id,
            &params,
            &v.features,
            &cs,
            &cfg.refine,
            &inf,
            cfg.mode,
        )
        .unwrap();
        assert!(d.len() <= inf.top_q);
        for x in &d {
            assert!(x.segment.within(v.features.duration()));
            assert!((0.0..=1.0).contains(&x.score));
        }
        let seq = detect_video(
            &v.id,
            &params,
            &v.features,
            &cs,
            &cfg.refine,
            &inf,
            ExecMode::Sequential,
        )
        .unwrap();
        assert_eq!(seq, d);
        dets.extend(d);
    }
    let p = dir.path().join("detections.json");
    save_detections(&p, &dets).unwrap();
    assert_eq!(load_detections(&p).unwrap(), dets);

    let gts: Vec<_> = val.iter().flat_map(|r| r.ground_truths()).collect();
    let report = evaluate(&dets, &gts, &EvalConfig::default());
    assert_eq!(report.num_gts, gts.len());
    assert!((0.0..=1.0).contains(&report.average_map));
    let n: usize = report.groups.iter().map(|g| g.num_gts).sum();
    assert_eq!(n, gts.len());
}

#[test]
fn sequential_and_parallel_training_agree_bitwise() {
    let synth = SynthConfig {
        num_train: 5,
        num_val: 0,
        num_snippets: 12,
        feature_dim: 4,
        duration_range: [30.0, 60.0],
        length_range: [2.0, 20.0],
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&synth, 1).unwrap();
    let videos: Vec<_> = corpus
        .records
        .iter()
        .zip(&corpus.features)
        .map(|(r, f)| ctal_core::model::TrainingVideo {
            id: r.id.clone(),
            features: f.clone(),
            gts: r.segments(),
        })
        .collect();
    let run = |mode| {
        let cfg = tiny_cfg(mode);
        let mut p = init_params(4, &cfg).unwrap();
        let mut st = TrainState::new(&p);
        let mut bits = Vec::new();
        fit(&mut p, &videos, &cfg, &mut st, |_, _, r| {
            bits.push(r.total.to_bits())
        })
        .unwrap();
        let props = propose(&p, &videos[0].features, &cfg.refine, mode).unwrap();
        (bits, p, props)
    };
    let (a, pa, qa) = run(ExecMode::Sequential);
    let (b, pb, qb) = run(ExecMode::Parallel);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let mut by_seg: HashMap<(u64, u64), u64> = HashMap::new();
    for q in &qa {
        by_seg.insert(
            (q.segment.start.to_bits(), q.segment.end.to_bits()),
            q.score.to_bits(),
        );
    }
    assert_eq!(qa.len(), qb.len());
    for q in &qb {
        assert_eq!(
            by_seg.get(&(q.segment.start.to_bits(), q.segment.end.to_bits())),
            Some(&q.score.to_bits())
        );
    }
}
