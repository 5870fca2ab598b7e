use std::fmt::Write as _;

use super::{
    average_precision, calibrate_threshold, collect_class_matches, confidence_timeseries, consistency, f1_score,
    mean_average_precision, pr_curve, Consistency, FpsStats, FrameStats, PairedStats, PrPoint,
};
use crate::error::Result;
use crate::geometry::LabeledBox;
use crate::postprocess::Detection;

/// One evaluated frame: detections, ground truth and manifest tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameResult {
    pub frame_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<LabeledBox>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_thresh: f64,
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map50: f64,
    /// Operating threshold the precision/recall/F1 figures are taken at.
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// F1-optimal threshold over the pooled sweep.
    pub calibrated_tau: Option<f64>,
    pub pr_curves: Vec<Vec<PrPoint>>,
    pub frame_ids: Vec<String>,
    pub timeseries: Vec<FrameStats>,
    pub consistency: Consistency,
    pub fps: Option<FpsStats>,
    /// `(tag, false positives per frame)` for every tag present.
    pub fp_per_frame: Vec<(String, f64)>,
}

impl EvalReport {
    /// Scores `frames`. Detections below `tau` count for AP but not for
    /// the operating-point figures or the confidence series.
    pub fn evaluate(frames: &[FrameResult], num_classes: usize, iou_thresh: f64, tau: f64) -> Result<Self> {
        let matches = collect_class_matches(frames, num_classes, iou_thresh);
        let per_class_ap: Vec<Option<f64>> = matches.iter().map(|(s, n)| average_precision(s, *n)).collect();
        let map50 = mean_average_precision(&per_class_ap)?;
        let pr_curves = matches.iter().map(|(s, n)| pr_curve(s, *n)).collect();

        let pooled: Vec<(f64, bool)> = matches.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        let n_gt: usize = matches.iter().map(|(_, n)| n).sum();
        let kept: Vec<&(f64, bool)> = pooled.iter().filter(|(s, _)| *s >= tau).collect();
        let tp = kept.iter().filter(|(_, t)| *t).count();
        let precision = if kept.is_empty() { 0.0 } else { tp as f64 / kept.len() as f64 };
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        let calibrated_tau = calibrate_threshold(&pr_curve(&pooled, n_gt)).ok();

        let above: Vec<Vec<Detection>> = frames
            .iter()
            .map(|f| f.detections.iter().filter(|d| d.score >= tau).copied().collect())
            .collect();
        let timeseries = confidence_timeseries(&above);

        let mut tags: Vec<&str> = frames.iter().flat_map(|f| f.tags.iter().map(String::as_str)).collect();
        tags.sort_unstable();
        tags.dedup();
        let fp_per_frame = tags
            .into_iter()
            .map(|tag| {
                let tagged: Vec<FrameResult> = frames
                    .iter()
                    .filter(|f| f.tags.iter().any(|t| t == tag))
                    .map(|f| FrameResult {
                        detections: f.detections.iter().filter(|d| d.score >= tau).copied().collect(),
                        ..f.clone()
                    })
                    .collect();
                super::hot_bg_fp_rate(&tagged, tag, iou_thresh).map(|r| (tag.to_string(), r))
            })
            .collect::<Result<_>>()?;

        Ok(Self {
            iou_thresh,
            per_class_ap,
            map50,
            tau,
            precision,
            recall,
            f1: f1_score(precision, recall),
            calibrated_tau,
            pr_curves,
            frame_ids: frames.iter().map(|f| f.frame_id.clone()).collect(),
            consistency: consistency(&timeseries),
            timeseries,
            fps: None,
            fp_per_frame,
        })
    }

    /// `class_id,threshold,precision,recall,f1`
    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("class_id,threshold,precision,recall,f1\n");
        for (c, curve) in self.pr_curves.iter().enumerate() {
            for p in curve {
                let _ = writeln!(
                    out,
                    "{c},{:.6},{:.6},{:.6},{:.6}",
                    p.threshold, p.precision, p.recall, p.f1
                );
            }
        }
        out
    }

    /// `frame_id,count,mean,max,std`; empty fields mark frames with no detections.
    pub fn timeseries_csv(&self) -> String {
        timeseries_csv(&self.frame_ids, &self.timeseries)
    }

    /// `metric,value`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (c, ap) in self.per_class_ap.iter().enumerate() {
            let _ = writeln!(out, "ap_class{c},{}", opt6(*ap));
        }
        let rows = [
            ("map50", Some(self.map50)),
            ("iou_thresh", Some(self.iou_thresh)),
            ("tau", Some(self.tau)),
            ("precision", Some(self.precision)),
            ("recall", Some(self.recall)),
            ("f1", Some(self.f1)),
            ("calibrated_tau", self.calibrated_tau),
            ("count_mean", Some(self.consistency.count_mean)),
            ("count_std", Some(self.consistency.count_std)),
            ("count_stable_fraction", Some(self.consistency.stable_fraction)),
            ("coverage", Some(self.consistency.coverage)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{}", opt6(v));
        }
        for (tag, r) in &self.fp_per_frame {
            let _ = writeln!(out, "fp_per_frame[{tag}],{r:.6}");
        }
        if let Some(f) = &self.fps {
            let _ = writeln!(out, "fps_mean,{:.6}", f.mean_fps);
            let _ = writeln!(out, "latency_p50_ms,{:.6}", f.p50_ms);
            let _ = writeln!(out, "latency_p99_ms,{:.6}", f.p99_ms);
        }
        out
    }

    pub fn text_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mAP@{:.2}: {:.4}", self.iou_thresh, self.map50);
        for (c, ap) in self.per_class_ap.iter().enumerate() {
            match ap {
                Some(v) => {
                    let _ = writeln!(out, "  class {c}: AP {v:.4}");
                }
                None => {
                    let _ = writeln!(out, "  class {c}: no ground truth");
                }
            }
        }
        let _ = writeln!(
            out,
            "at tau {:.3}: precision {:.4} recall {:.4} F1 {:.4}",
            self.tau, self.precision, self.recall, self.f1
        );
        if let Some(t) = self.calibrated_tau {
            let _ = writeln!(out, "F1-optimal tau: {t:.4}");
        }
        let c = &self.consistency;
        let _ = writeln!(
            out,
            "detections/frame: mean {:.3} std {:.3}, stable {:.1}%, coverage {:.1}%",
            c.count_mean,
            c.count_std,
            100.0 * c.stable_fraction,
            100.0 * c.coverage
        );
        for (tag, r) in &self.fp_per_frame {
            let _ = writeln!(out, "FP/frame [{tag}]: {r:.4}");
        }
        if let Some(f) = &self.fps {
            let _ = writeln!(
                out,
                "throughput: {:.2} FPS (p50 {:.3} ms, p99 {:.3} ms)",
                f.mean_fps, f.p50_ms, f.p99_ms
            );
        }
        out
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn timeseries_csv(ids: &[String], series: &[FrameStats]) -> String {
    let mut out = String::from("frame_id,count,mean,max,std\n");
    for (id, s) in ids.iter().zip(series) {
        let _ = writeln!(out, "{id},{},{},{},{}", s.count, opt6(s.mean), opt6(s.max), opt6(s.std));
    }
    out
}

/// `frame_id,count_a,count_b,mean_a,mean_b,mean_delta,count_delta`
pub fn paired_csv(ids: &[String], pairs: &[PairedStats]) -> String {
    let mut out = String::from("frame_id,count_a,count_b,mean_a,mean_b,mean_delta,count_delta\n");
    for (id, p) in ids.iter().zip(pairs) {
        let _ = writeln!(
            out,
            "{id},{},{},{},{},{},{}",
            p.a.count,
            p.b.count,
            opt6(p.a.mean),
            opt6(p.b.mean),
            opt6(p.mean_delta),
            p.count_delta
        );
    }
    out
}
