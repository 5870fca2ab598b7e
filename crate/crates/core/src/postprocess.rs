//! From raw head outputs to final detections: decode, confidence
//! threshold and per-class non-maximum suppression.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{decode_cell, iou_unchecked, sigmoid, BBox};
use crate::imaging::{prepare_input, Normalization, Preprocess, ThermalFrame};
use crate::model::{Model, ModelConfig, RawPredictions};
use crate::tensor::Scalar;

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Original-frame pixels.
    pub bbox: BBox,
    /// Objectness times the best class probability.
    pub score: f64,
    pub class_id: usize,
    /// Pyramid level the prediction came from (0 = finest).
    pub level: usize,
}

/// Decodes every cell of image `index` in `preds` and maps the boxes back to
/// the original frame. Boxes that fall entirely in the padding are dropped.
pub fn decode<T: Scalar>(
    preds: &RawPredictions<T>,
    index: usize,
    config: &ModelConfig,
    pre: &Preprocess,
) -> Result<Vec<Detection>> {
    check_records(preds, index, pre)?;
    let nc = config.num_classes;
    let clamp = config.head_box_clamp;
    let mut out = Vec::new();
    for (level, (p, &stride)) in preds.levels.iter().zip(&preds.strides).enumerate() {
        let [_, c, h, w] = p.dims();
        if c != 5 + nc {
            return Err(Error::Shape(format!(
                "level {level} has {c} channels, expected {}",
                5 + nc
            )));
        }
        let s = stride as f64;
        for row in 0..h {
            for col in 0..w {
                let at = |ch: usize| p.get(index, ch, row, col).as_f64();
                let obj = sigmoid(at(4));
                let (class_id, cls) = (0..nc)
                    .map(|k| (k, sigmoid(at(5 + k))))
                    .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                let [cx, cy, bw, bh] = decode_cell([at(0), at(1), at(2), at(3)], row, col, s, clamp);
                let Some(bbox) = crate::imaging::unmap_box(&BBox::from_center(cx, cy, bw, bh), pre) else {
                    continue;
                };
                out.push(Detection {
                    bbox,
                    score: obj * cls,
                    class_id,
                    level,
                });
            }
        }
    }
    Ok(out)
}

fn check_records<T: Scalar>(preds: &RawPredictions<T>, index: usize, pre: &Preprocess) -> Result<()> {
    let Some(first) = preds.levels.first() else {
        return Err(Error::Shape("predictions have no levels".into()));
    };
    if index >= first.batch() {
        return Err(Error::Shape(format!("image {index} outside batch of {}", first.batch())));
    }
    let s = preds.strides[0];
    let (ph, pw) = (first.height() * s, first.width() * s);
    if (pw, ph) != (pre.pad.padded_width(), pre.pad.padded_height()) {
        return Err(Error::Coordinate(format!(
            "predictions cover {pw}x{ph} but the pad record describes {}x{}",
            pre.pad.padded_width(),
            pre.pad.padded_height()
        )));
    }
    if (pre.scale.dst_w, pre.scale.dst_h) != (pre.pad.width, pre.pad.height) {
        return Err(Error::Coordinate(format!(
            "scale record targets {}x{} but the pad record starts from {}x{}",
            pre.scale.dst_w, pre.scale.dst_h, pre.pad.width, pre.pad.height
        )));
    }
    Ok(())
}

/// Keeps detections with `score ≥ tau`, ordered by descending score (stable).
pub fn threshold_filter(dets: &[Detection], tau: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = dets.iter().copied().filter(|d| d.score >= tau).collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept
}

/// Score descending, then `x1` ascending, then `y1` ascending.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
}

/// Greedy per-class suppression: walk detections in [`rank_order`] and keep
/// one unless a kept detection of its class overlaps it with IoU above
/// `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou_unchecked(&k.bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// A model plus everything needed to go from frames to detections.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: Model<f32>,
    /// Network resolution `(width, height)` before letterboxing; `None`
    /// runs at the frame's own size.
    pub resolution: Option<(usize, usize)>,
    pub tau: f64,
    pub iou_thresh: f64,
    pub normalization: Normalization,
}

impl Detector {
    pub fn new(model: Model<f32>, resolution: Option<(usize, usize)>, tau: f64) -> Result<Self> {
        let d = Self {
            model,
            resolution,
            tau,
            iou_thresh: DEFAULT_NMS_IOU,
            normalization: Normalization::default(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Validation(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.iou_thresh) {
            return Err(Error::Validation(format!("NMS IoU {} outside [0, 1]", self.iou_thresh)));
        }
        if let Some((w, h)) = self.resolution {
            if w == 0 || h == 0 {
                return Err(Error::Validation(format!("resolution {w}x{h} is empty")));
            }
        }
        Ok(())
    }

    /// Preprocess, forward, decode, threshold and suppress one frame.
    pub fn detect(&self, frame: &ThermalFrame) -> Result<Vec<Detection>> {
        let cfg = self.model.config();
        let (input, pre) = prepare_input(frame, self.resolution, cfg.max_stride(), self.normalization)?;
        let preds = self.model.forward(&input)?;
        let all = decode(&preds, 0, cfg, &pre)?;
        Ok(nms(&threshold_filter(&all, self.tau), self.iou_thresh))
    }
}
