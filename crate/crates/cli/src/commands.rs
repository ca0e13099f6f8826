use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ctal_core::config::RunConfig;
use ctal_core::data::{
    self, class_names, generate_synthetic, load_annotations, load_class_scores, load_detections,
    load_video_features, oracle_class_scores, save_annotations, save_class_scores, save_detections,
    save_features, training_videos, write_file_atomic, Split, VideoRecord, ANNOTATIONS_FILE,
    CLASS_SCORES_FILE, FEATURES_DIR,
};
use ctal_core::eval::{evaluate, length_group_profiles, GroundTruth, LengthGroup};
use ctal_core::model::{
    init_params, load_checkpoint, save_checkpoint, train_epoch, Checkpoint, ScorerParams,
    TrainState,
};
use ctal_core::pipeline::detect_video;
use ctal_core::supervision::LossReport;

use crate::config;
use crate::Usage;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_TEXT_FILE: &str = "eval_report.txt";
pub const REPORT_JSON_FILE: &str = "eval_report.json";
pub const GROUPS_TEXT_FILE: &str = "length_groups.txt";
pub const GROUPS_CSV_FILE: &str = "length_groups.csv";

const LOSS_LOG_HEADER: &str = "epoch,lr,total,bce,mse,offset,boundary,l2";

/// Creates `out` and refuses to replace any of `outputs` unless `force`.
fn prepare_out(out: &Path, outputs: &[&str], force: bool) -> Result<()> {
    if !force {
        for name in outputs {
            let p = out.join(name);
            if p.exists() {
                return Err(Usage(format!(
                    "refusing to overwrite {} (pass --force)",
                    p.display()
                ))
                .into());
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

fn echo_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_file_atomic(out.join(CONFIG_FILE), config::to_toml(cfg)?.as_bytes())?;
    Ok(())
}

fn records_of(data: &Path, split: Split) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>)> {
    let all = load_annotations(data.join(ANNOTATIONS_FILE))
        .with_context(|| format!("loading annotations from {}", data.display()))?;
    let chosen: Vec<VideoRecord> = all.iter().filter(|r| r.split == split).cloned().collect();
    Ok((all, chosen))
}

pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<()> {
    prepare_out(
        out,
        &[
            ANNOTATIONS_FILE,
            CLASS_SCORES_FILE,
            MANIFEST_FILE,
            FEATURES_DIR,
        ],
        force,
    )?;
    let corpus = generate_synthetic(&cfg.synth, cfg.seed)?;
    let feat_dir = out.join(FEATURES_DIR);
    if feat_dir.exists() {
        fs::remove_dir_all(&feat_dir)?;
    }
    fs::create_dir_all(&feat_dir)?;
    let mut files = vec![ANNOTATIONS_FILE.to_string(), CLASS_SCORES_FILE.to_string()];
    save_annotations(out.join(ANNOTATIONS_FILE), &corpus.records)?;
    let classes = class_names(&corpus.records);
    save_class_scores(
        out.join(CLASS_SCORES_FILE),
        &oracle_class_scores(&corpus.records, &classes),
    )?;
    for (r, f) in corpus.records.iter().zip(&corpus.features) {
        save_features(data::feature_path(out, &r.id), f)?;
        files.push(format!("{FEATURES_DIR}/{}.feat", r.id));
    }
    files.push(CONFIG_FILE.to_string());
    echo_config(out, cfg)?;
    let entries: Vec<serde_json::Value> = files
        .iter()
        .map(|f| {
            let bytes = fs::metadata(out.join(f)).map(|m| m.len()).unwrap_or(0);
            serde_json::json!({ "path": f, "bytes": bytes })
        })
        .collect();
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "videos": corpus.records.len(),
        "classes": classes,
        "files": entries,
    });
    write_file_atomic(
        out.join(MANIFEST_FILE),
        format!("{:#}\n", manifest).as_bytes(),
    )?;
    eprintln!("wrote {} videos to {}", corpus.records.len(), out.display());
    Ok(())
}

fn log_row(epoch: usize, lr: f64, r: &LossReport) -> String {
    format!(
        "{epoch},{lr},{},{},{},{},{},{}\n",
        r.total, r.bce, r.mse, r.offset, r.boundary, r.l2
    )
}

/// Rows of an existing log for epochs before `epoch`.
fn kept_log(path: &Path, epoch: usize) -> String {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let e: Option<usize> = line.split(',').next().and_then(|v| v.parse().ok());
            if e.is_some_and(|e| e < epoch) {
                s.push_str(line);
                s.push('\n');
            }
        }
    }
    s
}

pub fn train(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
    force: bool,
) -> Result<()> {
    prepare_out(
        out,
        &[CHECKPOINT_FILE, LOSS_LOG_FILE],
        force || resume.is_some(),
    )?;
    let (_, records) = records_of(data_dir, Split::Train)?;
    if records.is_empty() {
        bail!(ctal_core::Error::EmptyDataset);
    }
    let videos = training_videos(data_dir, &records)?;
    let tc = cfg.train_config();
    let dim = videos[0].features.dim();
    let (mut params, mut state) = match resume {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            let state = match ck.optimizer {
                Some((epoch, adam)) => TrainState { adam, epoch },
                None => TrainState::new(&ck.params),
            };
            (ck.params, state)
        }
        None => {
            let p = init_params(dim, &tc)?;
            let s = TrainState::new(&p);
            (p, s)
        }
    };
    echo_config(out, cfg)?;
    let log_path = out.join(LOSS_LOG_FILE);
    let mut log = kept_log(&log_path, if resume.is_some() { state.epoch } else { 0 });
    write_file_atomic(&log_path, log.as_bytes())?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let save = |params: &ScorerParams, state: &TrainState| {
        save_checkpoint(
            &ck_path,
            &Checkpoint {
                params: params.clone(),
                optimizer: Some((state.epoch, state.adam.clone())),
            },
        )
    };
    if state.epoch >= tc.optim.epochs {
        save(&params, &state)?;
    }
    while state.epoch < tc.optim.epochs {
        let epoch = state.epoch;
        let lr = tc.optim.lr_at(epoch);
        let r = train_epoch(&mut params, &videos, &tc, &mut state)?;
        save(&params, &state)?;
        log.push_str(&log_row(epoch, lr, &r));
        write_file_atomic(&log_path, log.as_bytes())?;
        eprintln!("epoch {epoch} lr {lr:e} loss {:.5}", r.total);
    }
    eprintln!(
        "trained {} epochs; checkpoint at {}",
        state.epoch,
        ck_path.display()
    );
    Ok(())
}

pub fn detect(
    cfg: &RunConfig,
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    out: &Path,
    force: bool,
) -> Result<()> {
    prepare_out(out, &[DETECTIONS_FILE], force)?;
    let params = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?
        .params;
    let (all, records) = records_of(data_dir, split)?;
    let classes = class_names(&all);
    let scores_path = data_dir.join(CLASS_SCORES_FILE);
    let scores = if scores_path.exists() {
        Some(load_class_scores(&scores_path)?)
    } else {
        None
    };
    let mut dets = Vec::new();
    for r in &records {
        let f = load_video_features(data_dir, r)?;
        let cs: Vec<(String, f64)> = match &scores {
            Some(s) => {
                let m = s.get(&r.id).with_context(|| {
                    format!("video {}: missing from {}", r.id, scores_path.display())
                })?;
                classes
                    .iter()
                    .map(|c| (c.clone(), m.get(c).copied().unwrap_or(0.0)))
                    .collect()
            }
            None => classes.iter().map(|c| (c.clone(), 1.0)).collect(),
        };
        dets.extend(detect_video(
            &r.id,
            &params,
            &f,
            &cs,
            &cfg.refine,
            &cfg.inference,
            cfg.mode(),
        )?);
    }
    save_detections(out.join(DETECTIONS_FILE), &dets)?;
    echo_config(out, cfg)?;
    eprintln!("{} detections for {} videos", dets.len(), records.len());
    Ok(())
}

/// Detections and the ground truths of `split`, rejecting detections for
/// videos outside it.
fn eval_inputs(
    detections: &Path,
    data_dir: &Path,
    split: Split,
) -> Result<(Vec<ctal_core::postproc::Detection>, Vec<GroundTruth>)> {
    let dets =
        load_detections(detections).with_context(|| format!("loading {}", detections.display()))?;
    let (_, records) = records_of(data_dir, split)?;
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    if let Some(d) = dets.iter().find(|d| !ids.contains(d.video.as_str())) {
        bail!(ctal_core::Error::Validation {
            video: d.video.clone(),
            reason: format!("has detections but is not an annotated {split:?} video"),
        });
    }
    let gts = records.iter().flat_map(|r| r.ground_truths()).collect();
    Ok((dets, gts))
}

pub fn eval(
    cfg: &RunConfig,
    detections: &Path,
    data_dir: &Path,
    split: Split,
    out: &Path,
    force: bool,
) -> Result<()> {
    prepare_out(out, &[REPORT_TEXT_FILE, REPORT_JSON_FILE], force)?;
    let (dets, gts) = eval_inputs(detections, data_dir, split)?;
    let report = evaluate(&dets, &gts, &cfg.eval);
    let text = report.to_text();
    write_file_atomic(out.join(REPORT_TEXT_FILE), text.as_bytes())?;
    write_file_atomic(
        out.join(REPORT_JSON_FILE),
        format!("{}\n", serde_json::to_string_pretty(&report)?).as_bytes(),
    )?;
    echo_config(out, cfg)?;
    print!("{text}");
    Ok(())
}

fn group_bounds(g: LengthGroup) -> (f64, f64) {
    match g {
        LengthGroup::XS => (0.0, 30.0),
        LengthGroup::S => (30.0, 60.0),
        LengthGroup::M => (60.0, 120.0),
        LengthGroup::L => (120.0, 180.0),
        LengthGroup::XL => (180.0, f64::INFINITY),
    }
}

pub fn analyze(
    cfg: &RunConfig,
    detections: &Path,
    data_dir: &Path,
    split: Split,
    out: &Path,
    force: bool,
) -> Result<()> {
    prepare_out(out, &[GROUPS_TEXT_FILE, GROUPS_CSV_FILE], force)?;
    let (dets, gts) = eval_inputs(detections, data_dir, split)?;
    let thr = cfg.eval.profile_threshold;
    let profiles = length_group_profiles(&dets, &gts, thr);
    let mut text = format!("length groups at tIoU {thr}: {} ground truths\n", gts.len());
    let _ = writeln!(
        text,
        "{:<6}{:>12}{:>8}{:>10}{:>10}",
        "group", "length (s)", "n", "mAP", "FN rate"
    );
    let mut csv = String::from("group,min_length,max_length,num_gts,map,fn_rate\n");
    for g in LengthGroup::ALL {
        let (lo, hi) = group_bounds(g);
        match profiles.iter().find(|p| p.group == g) {
            Some(p) => {
                let _ = writeln!(
                    text,
                    "{:<6}{:>12}{:>8}{:>10.4}{:>10.4}",
                    g.name(),
                    format!("({lo}, {hi}]"),
                    p.num_gts,
                    p.map,
                    p.fn_rate
                );
                let _ = writeln!(
                    csv,
                    "{},{lo},{hi},{},{},{}",
                    g.name(),
                    p.num_gts,
                    p.map,
                    p.fn_rate
                );
            }
            None => {
                let _ = writeln!(
                    text,
                    "note: group {} has no ground truth and is omitted",
                    g.name()
                );
            }
        }
    }
    write_file_atomic(out.join(GROUPS_TEXT_FILE), text.as_bytes())?;
    write_file_atomic(out.join(GROUPS_CSV_FILE), csv.as_bytes())?;
    echo_config(out, cfg)?;
    print!("{text}");
    Ok(())
}

pub fn split_arg(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s:?} (train, val or test)"))
}
