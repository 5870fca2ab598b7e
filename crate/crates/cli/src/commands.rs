use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use ltv_core::data::{
    format_annotations, load_checkpoint, make_folds, parse_resolution, save_checkpoint, Annotation, DatasetManifest,
    FoldItem, FoldSplit, LoadedSample, ManifestEntry, RunConfig,
};
use ltv_core::eval::{
    detect_samples, fps_bench, paired_csv, paired_timeseries, timeseries_csv, EvalReport, FrameResult,
};
use ltv_core::imaging::{
    brightness_contrast, encode_pgm, fog_rain_overlay, hflip_with_boxes, mosaic4, read_frame, thermal_artifacts,
    augment_sample, ArtifactMode, PgmDepth, Sample, ThermalFrame, Weather,
};
use ltv_core::model::{Init, Model};
use ltv_core::postprocess::Detector;
use ltv_core::synth::{random_frame, sequence, SceneConfig};
use ltv_core::train::{epoch_csv, train as train_model};
use ltv_core::{Error, Result};
use rand::{Rng, SeedableRng};

use crate::output::{
    detections_csv, fmt_res, parse_detections_csv, require_out, resolve_config, sha256_file, write_run, write_text,
};
use crate::Common;

/// Score floor for the detections behind AP figures.
const AP_SCORE_FLOOR: f64 = 0.01;

/// Resolutions benchmarked when none are given.
const PRESET_RESOLUTIONS: [(usize, usize); 3] = [(96, 77), (140, 112), (224, 179)];

fn res_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_resolution(s).map_err(|e| e.to_string())
}

fn pair_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("`{s}` is not MIN,MAX"))?;
    let a = a.trim().parse().map_err(|_| format!("`{a}` is not a count"))?;
    let b = b.trim().parse().map_err(|_| format!("`{b}` is not a count"))?;
    Ok((a, b))
}

fn load_manifest(path: &Path, cfg: &RunConfig) -> Result<DatasetManifest> {
    let mut m = DatasetManifest::load(path)?;
    m.class_names = cfg.class_names.clone();
    Ok(m)
}

fn detector(model: Model<f32>, cfg: &RunConfig, resolution: Option<(usize, usize)>, tau: f64) -> Result<Detector> {
    let mut d = Detector::new(model, resolution, tau)?;
    d.iou_thresh = cfg.detect.nms_iou;
    d.normalization = cfg.detect.normalization;
    d.validate()?;
    Ok(d)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset manifest (TSV).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `fold_k.txt` files.
    #[arg(long, requires = "fold")]
    folds: Option<PathBuf>,
    /// Fold held out for the final evaluation.
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    /// Start from these weights instead of a random init.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Record per-epoch wall-clock seconds (makes the log run-dependent).
    #[arg(long)]
    timing: bool,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let manifest = load_manifest(&a.manifest, &cfg)?;
    let out = require_out(&a.common)?;
    let all = manifest.load_samples()?;
    let (train_set, held_out): (Vec<LoadedSample>, Vec<LoadedSample>) = match (&a.folds, a.fold) {
        (Some(dir), Some(k)) => {
            let split = FoldSplit::read(dir, all.iter().map(|s| s.id.as_str()))?;
            let held = split
                .folds
                .get(k)
                .ok_or_else(|| Error::Config(format!("fold {k} out of range for {} folds", split.k())))?;
            all.into_iter().partition(|s| !held.contains(&s.id))
        }
        _ => (all, Vec::new()),
    };
    let mut model = match &a.init {
        Some(p) => load_checkpoint(p, &cfg.model)?.0,
        None => Model::build(cfg.model.clone(), Init::Random { seed: cfg.train.seed })?,
    };
    if model.config() != &cfg.model {
        return Err(Error::Config("--init weights were trained with a different architecture".into()));
    }
    let samples: Vec<Sample> = train_set.iter().map(|s| s.sample.clone()).collect();
    let log = train_model(&mut model, &samples, &cfg.train, &cfg.augment, |r, _| {
        log::info!("epoch {} loss {:.6}", r.epoch, r.loss.total);
        Ok(())
    })?;
    let weights = out.join("weights.ltvw");
    save_checkpoint(&weights, &model, &cfg)?;
    write_text(&out.join("epochs.csv"), &epoch_csv(&log.epochs, a.timing))?;

    let eval_res: Vec<(usize, usize)> = match cfg.detect.resolution {
        Some(r) => vec![r],
        None => cfg.train.resolutions.clone(),
    };
    let mut summary = String::from("split,resolution,map50,precision,recall,f1\n");
    let mut report = String::new();
    let first = log.epochs.first().map_or(0.0, |r| r.loss.total);
    let last = log.epochs.last().map_or(0.0, |r| r.loss.total);
    let _ = writeln!(report, "epochs: {}", log.epochs.len());
    let _ = writeln!(report, "loss: first {first:.6} last {last:.6}");
    let _ = writeln!(report, "dropped boxes: {}", log.dropped_boxes);
    for (split, set) in [("train", &train_set), ("heldout", &held_out)] {
        if set.is_empty() {
            continue;
        }
        for &res in &eval_res {
            let det = detector(model.clone(), &cfg, Some(res), AP_SCORE_FLOOR)?;
            let frames = detect_samples(&det, set)?;
            let r = EvalReport::evaluate(&frames, cfg.model.num_classes, 0.5, cfg.detect.tau)?;
            let _ = writeln!(
                summary,
                "{split},{},{:.6},{:.6},{:.6},{:.6}",
                fmt_res(res),
                r.map50,
                r.precision,
                r.recall,
                r.f1
            );
            let _ = writeln!(report, "{split} mAP@0.5 at {}: {:.4}", fmt_res(res), r.map50);
        }
    }
    write_text(&out.join("summary.csv"), &summary)?;
    write_text(&out.join("report.txt"), &report)?;
    print!("{report}");
    let mut extra = vec![
        ("command", "train".to_string()),
        ("manifest", a.manifest.display().to_string()),
        ("train_images", train_set.len().to_string()),
    ];
    if let (Some(dir), Some(k)) = (&a.folds, a.fold) {
        extra.push(("folds", dir.display().to_string()));
        extra.push(("fold", k.to_string()));
    }
    if let Some(p) = &a.init {
        extra.push(("init", p.display().to_string()));
        extra.push(("init_sha256", sha256_file(p)?));
    }
    write_run(&out, &cfg, &extra)
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    weights: PathBuf,
    /// Frames listed in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Frame files (.pgm, .f32, .raw).
    frames: Vec<PathBuf>,
    /// Network resolution WxH; defaults to the configured one.
    #[arg(long, value_parser = res_arg)]
    resolution: Option<(usize, usize)>,
    /// Confidence threshold.
    #[arg(long)]
    tau: Option<f64>,
}

/// Frames named on the command line or in a manifest, as (id, frame).
fn collect_frames(manifest: Option<&DatasetManifest>, files: &[PathBuf]) -> Result<Vec<(String, ThermalFrame)>> {
    let mut out = Vec::new();
    if let Some(m) = manifest {
        for e in &m.entries {
            out.push((e.image_id(), read_frame(&m.resolve(&e.image))?));
        }
    }
    for f in files {
        let frame = read_frame(f)?;
        out.push((frame.source_id.clone(), frame));
    }
    if out.is_empty() {
        return Err(Error::Data("no frames given".into()));
    }
    Ok(out)
}

fn checkpoint_config(common: &Common, weights: &Path) -> Result<(Model<f32>, RunConfig)> {
    let mut cfg = resolve_config(common)?;
    let (model, saved) = load_checkpoint(weights, &cfg.model)?;
    if let Some(saved) = saved {
        cfg.model = saved.model;
        cfg.class_names = saved.class_names;
        cfg.validate()?;
    }
    Ok((model, cfg))
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let (model, mut cfg) = checkpoint_config(&a.common, &a.weights)?;
    if let Some(r) = a.resolution {
        cfg.detect.resolution = Some(r);
    }
    if let Some(t) = a.tau {
        cfg.detect.tau = t;
    }
    let det = detector(model, &cfg, cfg.detect.resolution, cfg.detect.tau)?;
    let manifest = a.manifest.as_deref().map(|p| load_manifest(p, &cfg)).transpose()?;
    let frames = collect_frames(manifest.as_ref(), &a.frames)?;
    let out = require_out(&a.common)?;
    let dir = out.join("detections");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut index = String::from("frame_id,count\n");
    for (id, frame) in &frames {
        let dets = det.detect(frame)?;
        write_text(&dir.join(format!("{id}.csv")), &detections_csv(&dets))?;
        let _ = writeln!(index, "{id},{}", dets.len());
    }
    write_text(&out.join("frames.csv"), &index)?;
    let mut extra = vec![
        ("command", "detect".to_string()),
        ("weights", a.weights.display().to_string()),
        ("weights_sha256", sha256_file(&a.weights)?),
        ("frame_count", frames.len().to_string()),
    ];
    if let Some(m) = &a.manifest {
        extra.push(("manifest", m.display().to_string()));
    }
    write_run(&out, &cfg, &extra)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Ground-truth manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of per-frame detection CSVs from `detect`.
    #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
    detections: Option<PathBuf>,
    /// Run this checkpoint instead of reading detections.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Second detection directory for a paired frame-by-frame comparison.
    #[arg(long)]
    paired: Option<PathBuf>,
    /// Operating threshold for precision/recall/F1.
    #[arg(long)]
    tau: Option<f64>,
    /// IoU for a true positive.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
}

/// Reads `{id}.csv` for every id; `dir` may also be a `detect` output
/// directory holding a `detections/` folder.
fn read_detection_dir(dir: &Path, ids: &[String]) -> Result<Vec<Vec<ltv_core::postprocess::Detection>>> {
    let nested = dir.join("detections");
    let dir = if nested.is_dir() { nested.as_path() } else { dir };
    ids.iter()
        .map(|id| {
            let p = dir.join(format!("{id}.csv"));
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            parse_detections_csv(&text, &p)
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = resolve_config(&a.common)?;
    if let Some(t) = a.tau {
        cfg.detect.tau = t;
    }
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(Error::Validation(format!("IoU threshold {} outside [0, 1]", a.iou)));
    }
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest, &cfg)?;
    let samples = manifest.load_samples()?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let frames: Vec<FrameResult> = match (&a.detections, &a.weights) {
        (Some(dir), _) => read_detection_dir(dir, &ids)?
            .into_iter()
            .zip(&samples)
            .map(|(detections, s)| FrameResult {
                frame_id: s.id.clone(),
                detections,
                ground_truth: s.sample.boxes.clone(),
                tags: s.tags.clone(),
            })
            .collect(),
        (None, Some(w)) => {
            let (model, c) = checkpoint_config(&a.common, w)?;
            cfg.model = c.model;
            cfg.class_names = c.class_names;
            let det = detector(model, &cfg, cfg.detect.resolution, AP_SCORE_FLOOR)?;
            detect_samples(&det, &samples)?
        }
        (None, None) => return Err(Error::Config("give --detections or --weights".into())),
    };
    let out = require_out(&a.common)?;
    let report = EvalReport::evaluate(&frames, cfg.model.num_classes, a.iou, cfg.detect.tau)?;
    write_text(&out.join("pr_curve.csv"), &report.pr_curve_csv())?;
    write_text(&out.join("timeseries.csv"), &report.timeseries_csv())?;
    write_text(&out.join("summary.csv"), &report.summary_csv())?;
    write_text(&out.join("summary.txt"), &report.text_summary())?;
    print!("{}", report.text_summary());
    let mut extra = vec![
        ("command", "eval".to_string()),
        ("manifest", a.manifest.display().to_string()),
        ("iou", a.iou.to_string()),
    ];
    if let Some(d) = &a.detections {
        extra.push(("detections", d.display().to_string()));
    }
    if let Some(w) = &a.weights {
        extra.push(("weights", w.display().to_string()));
        extra.push(("weights_sha256", sha256_file(w)?));
    }
    if let Some(p) = &a.paired {
        let b = read_detection_dir(p, &ids)?;
        let above = |d: Vec<ltv_core::postprocess::Detection>| -> Vec<_> {
            d.into_iter().filter(|x| x.score >= cfg.detect.tau).collect()
        };
        let sb = ltv_core::eval::confidence_timeseries(&b.into_iter().map(above).collect::<Vec<_>>());
        write_text(&out.join("timeseries_b.csv"), &timeseries_csv(&ids, &sb))?;
        let pairs = paired_timeseries(&report.timeseries, &sb)?;
        write_text(&out.join("paired.csv"), &paired_csv(&ids, &pairs))?;
        extra.push(("paired", p.display().to_string()));
    }
    write_run(&out, &cfg, &extra)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint; a seeded random init of the configured model otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Frames from a manifest; synthetic 640x512 frames otherwise.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Resolution WxH; repeatable. Defaults to 96x77, 140x112 and 224x179.
    #[arg(long = "resolution", value_parser = res_arg)]
    resolutions: Vec<(usize, usize)>,
    /// Number of synthetic frames.
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Untimed frames at the start of each run.
    #[arg(long, default_value_t = 10)]
    warmup: usize,
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let (model, cfg) = match &a.weights {
        Some(w) => checkpoint_config(&a.common, w)?,
        None => {
            let cfg = resolve_config(&a.common)?;
            (Model::build(cfg.model.clone(), Init::Random { seed: cfg.train.seed })?, cfg)
        }
    };
    let frames: Vec<ThermalFrame> = match &a.manifest {
        Some(p) => collect_frames(Some(&load_manifest(p, &cfg)?), &[])?.into_iter().map(|(_, f)| f).collect(),
        None => {
            let scene = SceneConfig::default();
            sequence(&scene, a.frames, cfg.train.seed)?.into_iter().map(|(s, _)| s.frame).collect()
        }
    };
    let out = require_out(&a.common)?;
    let resolutions = if a.resolutions.is_empty() {
        PRESET_RESOLUTIONS.to_vec()
    } else {
        a.resolutions.clone()
    };
    let mut csv = String::from("resolution,frames_timed,warmup,mean_fps,p50_ms,p99_ms,macs\n");
    let mut prev: Option<f64> = None;
    for &res in &resolutions {
        let det = detector(model.clone(), &cfg, Some(res), cfg.detect.tau)?;
        let s = fps_bench(&det, &frames, a.warmup)?;
        let stride = cfg.model.max_stride();
        let macs = model.flop_estimate(res.1.div_ceil(stride) * stride, res.0.div_ceil(stride) * stride);
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6},{macs}",
            fmt_res(res),
            s.frames_timed,
            s.warmup,
            s.mean_fps,
            s.p50_ms,
            s.p99_ms
        );
        println!("{}: {:.2} FPS (p50 {:.3} ms, p99 {:.3} ms)", fmt_res(res), s.mean_fps, s.p50_ms, s.p99_ms);
        if prev.is_some_and(|p| s.mean_fps > p) {
            log::warn!("FPS rose with resolution at {}", fmt_res(res));
        }
        prev = Some(s.mean_fps);
    }
    write_text(&out.join("bench.csv"), &csv)?;
    let mut extra = vec![
        ("command", "bench".to_string()),
        ("frames", frames.len().to_string()),
        ("warmup", a.warmup.to_string()),
        (
            "bench_resolutions",
            resolutions.iter().map(|&r| fmt_res(r)).collect::<Vec<_>>().join(","),
        ),
    ];
    if let Some(w) = &a.weights {
        extra.push(("weights_sha256", sha256_file(w)?));
    }
    write_run(&out, &cfg, &extra)
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    common: Common,
    /// Frames and labels from a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Unlabelled frame files.
    frames: Vec<PathBuf>,
    /// hflip, brightness, mosaic, fog, rain, temp_bias, specular, cutout,
    /// cutmix or pipeline (the configured training pipeline).
    #[arg(long)]
    mode: String,
    /// Fog/rain strength in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    intensity: f64,
}

fn write_dataset(out: &Path, items: &[(String, Sample, Vec<String>)]) -> Result<()> {
    for sub in ["frames", "labels"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries: Vec::new(),
        class_names: Vec::new(),
    };
    for (id, s, tags) in items {
        let image = PathBuf::from("frames").join(format!("{id}.pgm"));
        let label = PathBuf::from("labels").join(format!("{id}.txt"));
        write_text_bytes(&out.join(&image), &encode_pgm(&s.frame, PgmDepth::Sixteen)?)?;
        let anns: Vec<Annotation> = s
            .boxes
            .iter()
            .map(|b| Annotation::from_labeled(b, s.frame.width, s.frame.height))
            .collect();
        write_text(&out.join(&label), &format_annotations(&anns))?;
        manifest.entries.push(ManifestEntry {
            image,
            annotation: label,
            tags: tags.clone(),
        });
    }
    write_text(&out.join("manifest.tsv"), &manifest.to_text())
}

fn write_text_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ltv_core::data::write_atomic(path, bytes)
}

pub fn augment(a: AugmentArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let mut inputs: Vec<LoadedSample> = match &a.manifest {
        Some(p) => load_manifest(p, &cfg)?.load_samples()?,
        None => Vec::new(),
    };
    for f in &a.frames {
        let frame = read_frame(f)?;
        inputs.push(LoadedSample {
            id: frame.source_id.clone(),
            sample: Sample::new(frame, Vec::new()),
            tags: Vec::new(),
        });
    }
    if inputs.is_empty() {
        return Err(Error::Data("no frames given".into()));
    }
    let mode = a.mode.trim().replace('-', "_");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let pool: Vec<Sample> = inputs.iter().map(|s| s.sample.clone()).collect();
    let mut outputs = Vec::with_capacity(inputs.len());
    for (i, item) in inputs.iter().enumerate() {
        let seed: u64 = rng.gen();
        let s = &item.sample;
        let out = match mode.as_str() {
            "hflip" => {
                let (frame, boxes) = hflip_with_boxes(&s.frame, &s.boxes);
                Sample::new(frame, boxes)
            }
            "brightness" => {
                let l = cfg.augment.brightness_contrast_limit;
                let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let (b, c) = (r.gen_range(-l..=l), r.gen_range(-l..=l));
                Sample::new(brightness_contrast(&s.frame, b, c), s.boxes.clone())
            }
            "mosaic" => {
                let n = pool.len();
                let four: Vec<Sample> = (0..4).map(|k| pool[(i + k) % n].clone()).collect();
                mosaic4(&four, seed)?
            }
            "fog" | "rain" => {
                let w: Weather = mode.parse()?;
                Sample::new(fog_rain_overlay(&s.frame, w, a.intensity, seed)?, s.boxes.clone())
            }
            "pipeline" => {
                let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                augment_sample(s, &pool, &cfg.augment, &mut r)?
            }
            other => {
                let m: ArtifactMode = other.parse().map_err(|_| {
                    Error::Config(format!(
                        "unknown augment mode `{other}` (hflip, brightness, mosaic, fog, rain, temp_bias, specular, cutout, cutmix, pipeline)"
                    ))
                })?;
                let o = thermal_artifacts(&s.frame, &s.boxes, m, seed)?;
                Sample::new(o.frame, o.boxes)
            }
        };
        outputs.push((item.id.clone(), out, item.tags.clone()));
    }
    let out = require_out(&a.common)?;
    write_dataset(&out, &outputs)?;
    let mut extra = vec![
        ("command", "augment".to_string()),
        ("mode", mode),
        ("intensity", a.intensity.to_string()),
        ("frame_count", outputs.len().to_string()),
    ];
    if let Some(m) = &a.manifest {
        extra.push(("manifest", m.display().to_string()));
    }
    write_run(&out, &cfg, &extra)
}

#[derive(Debug, Args)]
pub struct FoldsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

pub fn folds(a: FoldsArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let samples = load_manifest(&a.manifest, &cfg)?.load_samples()?;
    let nc = cfg.model.num_classes;
    let items: Vec<FoldItem> = samples
        .iter()
        .map(|s| {
            let mut counts = vec![0; nc];
            for b in &s.sample.boxes {
                counts[b.class_id] += 1;
            }
            FoldItem {
                id: s.id.clone(),
                class_counts: counts,
            }
        })
        .collect();
    let split = make_folds(&items, a.k, cfg.train.seed)?;
    let out = require_out(&a.common)?;
    split.write(&out)?;
    let mut csv = String::from("fold,images,class_ratio\n");
    for (i, (fold, ratio)) in split.folds.iter().zip(split.class_ratios(&items)).enumerate() {
        let r = ratio.map(|r| format!("{r:.6}")).unwrap_or_default();
        let _ = writeln!(csv, "{i},{},{r}", fold.len());
    }
    write_text(&out.join("folds.csv"), &csv)?;
    write_run(
        &out,
        &cfg,
        &[
            ("command", "folds".to_string()),
            ("manifest", a.manifest.display().to_string()),
            ("k", a.k.to_string()),
        ],
    )
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to inspect; the configured architecture otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Input size for the FLOP estimate.
    #[arg(long, value_parser = res_arg, default_value = "640x512")]
    resolution: (usize, usize),
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let (model, cfg) = match &a.weights {
        Some(w) => checkpoint_config(&a.common, w)?,
        None => {
            let cfg = resolve_config(&a.common)?;
            (Model::build(cfg.model.clone(), Init::Random { seed: cfg.train.seed })?, cfg)
        }
    };
    let bytes = model.weights().to_bytes()?.len();
    let stride = cfg.model.max_stride();
    let (w, h) = a.resolution;
    let (ph, pw) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
    let mut s = String::new();
    let _ = writeln!(s, "parameters: {}", model.param_count());
    let _ = writeln!(s, "tensors: {}", model.weights().len());
    let _ = writeln!(s, "weight file bytes: {bytes}");
    let _ = writeln!(
        s,
        "MACs at {}: {} (standard-conv equivalent {})",
        fmt_res(a.resolution),
        model.flop_estimate(ph, pw),
        model.standard_flop_estimate(ph, pw)
    );
    let _ = writeln!(s, "separable layers (name cin cout stride params sep/std):");
    for l in model.separable_layers() {
        let (sep, std) = l.params();
        let _ = writeln!(
            s,
            "  {} {} {} {} {sep}/{std} ({:.4})",
            l.name,
            l.cin,
            l.cout,
            l.stride,
            sep as f64 / std as f64
        );
    }
    print!("{s}");
    if a.common.out.is_some() {
        let out = require_out(&a.common)?;
        write_text(&out.join("inspect.txt"), &s)?;
        let mut extra = vec![("command", "inspect".to_string()), ("flop_resolution", fmt_res(a.resolution))];
        if let Some(w) = &a.weights {
            extra.push(("weights_sha256", sha256_file(w)?));
        }
        write_run(&out, &cfg, &extra)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of frames.
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Render one moving sequence instead of independent frames.
    #[arg(long)]
    sequence: bool,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Pedestrians per frame, MIN,MAX.
    #[arg(long, value_parser = pair_arg, default_value = "1,3")]
    targets: (usize, usize),
    /// Hot distractor blobs per frame, MIN,MAX.
    #[arg(long, value_parser = pair_arg, default_value = "0,0")]
    hot_blobs: (usize, usize),
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = resolve_config(&a.common)?;
    let k = a.height as f64 / 512.0;
    let defaults = SceneConfig::default();
    let scene = SceneConfig {
        width: a.width,
        height: a.height,
        targets: a.targets,
        hot_blobs: a.hot_blobs,
        child_height: (defaults.child_height.0 * k, defaults.child_height.1 * k),
        adult_height: (defaults.adult_height.0 * k, defaults.adult_height.1 * k),
        ..defaults
    };
    let seed = cfg.train.seed;
    let items: Vec<(String, Sample, Vec<String>)> = if a.sequence {
        sequence(&scene, a.frames, seed)?
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| (format!("frame{i:04}"), s, t))
            .collect()
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..a.frames)
            .map(|i| random_frame(&scene, rng.gen()).map(|(s, t)| (format!("frame{i:04}"), s, t)))
            .collect::<Result<_>>()?
    };
    let out = require_out(&a.common)?;
    write_dataset(&out, &items)?;
    write_run(
        &out,
        &cfg,
        &[
            ("command", "synth".to_string()),
            ("frame_count", a.frames.to_string()),
            ("synth_sequence", a.sequence.to_string()),
            ("synth_size", fmt_res((a.width, a.height))),
            ("synth_targets", format!("{},{}", a.targets.0, a.targets.1)),
            ("synth_hot_blobs", format!("{},{}", a.hot_blobs.0, a.hot_blobs.1)),
        ],
    )
}
