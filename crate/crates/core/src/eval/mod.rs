//! Matching, average precision, threshold calibration, confidence series,
//! false-positive rates and throughput measurement.

mod report;

use std::time::Instant;

pub use report::{paired_csv, timeseries_csv, EvalReport, FrameResult};

use crate::data::LoadedSample;
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox};
use crate::imaging::ThermalFrame;
use crate::postprocess::{rank_order, Detection, Detector};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry {
    /// Index into the detections passed to [`match_detections`].
    pub det_index: usize,
    pub score: f64,
    pub tp: bool,
    pub gt: Option<usize>,
}

/// Per-detection outcomes in descending score order plus per-GT flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.entries.iter().filter(|e| e.tp).count()
    }

    pub fn fp_count(&self) -> usize {
        self.entries.len() - self.tp_count()
    }
}

/// Greedy matching of one image's detections against its ground truth (one
/// class). In rank order, each detection takes its best-overlapping
/// unmatched box and is a true positive if that IoU is at least `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_thresh: f64) -> MatchResult {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| rank_order(&dets[a], &dets[b]));
    let mut gt_matched = vec![false; gts.len()];
    let entries = idx
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt_matched[g] {
                    continue;
                }
                let v = iou_unchecked(&d.bbox, gt);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v >= iou_thresh => {
                    gt_matched[g] = true;
                    MatchEntry {
                        det_index: i,
                        score: d.score,
                        tp: true,
                        gt: Some(g),
                    }
                }
                _ => MatchEntry {
                    det_index: i,
                    score: d.score,
                    tp: false,
                    gt: None,
                },
            }
        })
        .collect();
    MatchResult { entries, gt_matched }
}

/// One operating point of a precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Detections with `score ≥ threshold` are kept.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `2PR / (P + R)`, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision and recall at every distinct score, highest threshold first.
/// Tied scores enter together.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            tp += sorted[i].1 as usize;
            seen += 1;
            i += 1;
        }
        let precision = tp as f64 / seen as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push(PrPoint {
            threshold: s,
            precision,
            recall,
            f1: f1_score(precision, recall),
        });
    }
    points
}

/// All-point interpolated AP: the precision envelope (made non-increasing
/// in recall) summed over recall increments. `None` without ground truth.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let points = pr_curve(scored, n_gt);
    let mut envelope: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, e) in points.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * e;
        prev_recall = p.recall;
    }
    Some(ap)
}

/// Unweighted mean of the defined class APs; classes without ground truth
/// are skipped with a warning.
pub fn mean_average_precision(per_class: &[Option<f64>]) -> Result<f64> {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    for (c, ap) in per_class.iter().enumerate() {
        if ap.is_none() {
            log::warn!("class {c} has no ground truth; left out of mAP");
        }
    }
    if defined.is_empty() {
        return Err(Error::Validation("mAP needs at least one class with ground truth".into()));
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Threshold with the highest F1; ties go to the lower threshold.
pub fn calibrate_threshold(sweep: &[PrPoint]) -> Result<f64> {
    sweep
        .iter()
        .fold(None::<&PrPoint>, |best, p| match best {
            None => Some(p),
            Some(b) if p.f1 > b.f1 || (p.f1 == b.f1 && p.threshold < b.threshold) => Some(p),
            keep => keep,
        })
        .map(|p| p.threshold)
        .ok_or_else(|| Error::Validation("empty threshold sweep".into()))
}

/// Per-frame confidence summary; the statistics are absent when the frame
/// has no detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStats {
    pub index: usize,
    pub count: usize,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub std: Option<f64>,
}

pub fn confidence_timeseries(frames: &[Vec<Detection>]) -> Vec<FrameStats> {
    frames
        .iter()
        .enumerate()
        .map(|(index, dets)| {
            let count = dets.len();
            if count == 0 {
                return FrameStats {
                    index,
                    count,
                    mean: None,
                    max: None,
                    std: None,
                };
            }
            let mean = dets.iter().map(|d| d.score).sum::<f64>() / count as f64;
            let max = dets.iter().map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
            let var = dets.iter().map(|d| (d.score - mean).powi(2)).sum::<f64>() / count as f64;
            FrameStats {
                index,
                count,
                mean: Some(mean),
                max: Some(max),
                std: Some(var.sqrt()),
            }
        })
        .collect()
}

/// Frame-by-frame comparison of two runs over the same sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedStats {
    pub index: usize,
    pub a: FrameStats,
    pub b: FrameStats,
    /// `b.mean − a.mean`, absent if either side has no detections.
    pub mean_delta: Option<f64>,
    pub count_delta: i64,
}

pub fn paired_timeseries(a: &[FrameStats], b: &[FrameStats]) -> Result<Vec<PairedStats>> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired series differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .enumerate()
        .map(|(index, (x, y))| PairedStats {
            index,
            a: *x,
            b: *y,
            mean_delta: x.mean.zip(y.mean).map(|(p, q)| q - p),
            count_delta: y.count as i64 - x.count as i64,
        })
        .collect())
}

/// Detection-count stability over a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub count_mean: f64,
    pub count_std: f64,
    /// Share of consecutive frame pairs whose counts agree.
    pub stable_fraction: f64,
    /// Share of frames with at least one detection.
    pub coverage: f64,
}

pub fn consistency(series: &[FrameStats]) -> Consistency {
    let n = series.len();
    if n == 0 {
        return Consistency {
            count_mean: 0.0,
            count_std: 0.0,
            stable_fraction: 1.0,
            coverage: 0.0,
        };
    }
    let mean = series.iter().map(|s| s.count as f64).sum::<f64>() / n as f64;
    let var = series.iter().map(|s| (s.count as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let stable = series.windows(2).filter(|w| w[0].count == w[1].count).count();
    Consistency {
        count_mean: mean,
        count_std: var.sqrt(),
        stable_fraction: if n > 1 { stable as f64 / (n - 1) as f64 } else { 1.0 },
        coverage: series.iter().filter(|s| s.count > 0).count() as f64 / n as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsStats {
    pub frames_timed: usize,
    pub warmup: usize,
    pub mean_fps: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile of ascending `sorted`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times the full preprocess→decode pipeline per frame. The first `warmup`
/// frames run but are not timed.
pub fn fps_bench(detector: &Detector, frames: &[ThermalFrame], warmup: usize) -> Result<FpsStats> {
    if frames.is_empty() {
        return Err(Error::Validation("fps_bench needs frames".into()));
    }
    if frames.len() < warmup + 10 {
        return Err(Error::Validation(format!(
            "fps_bench needs at least warmup + 10 = {} frames, got {}",
            warmup + 10,
            frames.len()
        )));
    }
    let mut latencies = Vec::with_capacity(frames.len() - warmup);
    for (i, f) in frames.iter().enumerate() {
        let t0 = Instant::now();
        detector.detect(f)?;
        if i >= warmup {
            latencies.push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(latency_stats(&latencies, warmup))
}

/// Summarises per-frame latencies in seconds.
pub fn latency_stats(latencies: &[f64], warmup: usize) -> FpsStats {
    let total: f64 = latencies.iter().sum();
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    FpsStats {
        frames_timed: latencies.len(),
        warmup,
        mean_fps: if total > 0.0 { latencies.len() as f64 / total } else { f64::INFINITY },
        p50_ms: if sorted.is_empty() { 0.0 } else { percentile(&sorted, 0.5) * 1e3 },
        p99_ms: if sorted.is_empty() { 0.0 } else { percentile(&sorted, 0.99) * 1e3 },
    }
}

/// Class-aware matching of one frame; returns (TP, FP) counts.
pub fn frame_tp_fp(frame: &FrameResult, iou_thresh: f64) -> (usize, usize) {
    let mut classes: Vec<usize> = frame
        .detections
        .iter()
        .map(|d| d.class_id)
        .chain(frame.ground_truth.iter().map(|g| g.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut tp, mut fp) = (0, 0);
    for c in classes {
        let dets: Vec<Detection> = frame.detections.iter().filter(|d| d.class_id == c).copied().collect();
        let gts: Vec<BBox> = frame
            .ground_truth
            .iter()
            .filter(|g| g.class_id == c)
            .map(|g| g.bbox)
            .collect();
        let m = match_detections(&dets, &gts, iou_thresh);
        tp += m.tp_count();
        fp += m.fp_count();
    }
    (tp, fp)
}

/// Mean false positives per frame over the frames carrying `tag`.
pub fn hot_bg_fp_rate(frames: &[FrameResult], tag: &str, iou_thresh: f64) -> Result<f64> {
    let tagged: Vec<&FrameResult> = frames.iter().filter(|f| f.tags.iter().any(|t| t == tag)).collect();
    if tagged.is_empty() {
        return Err(Error::Data(format!("no frames tagged `{tag}`")));
    }
    let fp: usize = tagged.iter().map(|f| frame_tp_fp(f, iou_thresh).1).sum();
    Ok(fp as f64 / tagged.len() as f64)
}

/// Per-class matched score lists and ground-truth counts over a dataset.
pub fn collect_class_matches(
    frames: &[FrameResult],
    num_classes: usize,
    iou_thresh: f64,
) -> Vec<(Vec<(f64, bool)>, usize)> {
    let mut out = vec![(Vec::new(), 0usize); num_classes];
    for f in frames {
        for (c, (scored, n_gt)) in out.iter_mut().enumerate() {
            let dets: Vec<Detection> = f.detections.iter().filter(|d| d.class_id == c).copied().collect();
            let gts: Vec<BBox> = f.ground_truth.iter().filter(|g| g.class_id == c).map(|g| g.bbox).collect();
            *n_gt += gts.len();
            let m = match_detections(&dets, &gts, iou_thresh);
            scored.extend(m.entries.iter().map(|e| (e.score, e.tp)));
        }
    }
    out
}

/// Runs `detector` over loaded samples, keeping ids, ground truth and tags.
pub fn detect_samples(detector: &Detector, samples: &[LoadedSample]) -> Result<Vec<FrameResult>> {
    samples
        .iter()
        .map(|s| {
            Ok(FrameResult {
                frame_id: s.id.clone(),
                detections: detector.detect(&s.sample.frame)?,
                ground_truth: s.sample.boxes.clone(),
                tags: s.tags.clone(),
            })
        })
        .collect()
}

/// mAP@`iou_thresh` of a dataset's detections.
pub fn dataset_map(frames: &[FrameResult], num_classes: usize, iou_thresh: f64) -> Result<f64> {
    let per_class: Vec<Option<f64>> = collect_class_matches(frames, num_classes, iou_thresh)
        .iter()
        .map(|(s, n)| average_precision(s, *n))
        .collect();
    mean_average_precision(&per_class)
}
