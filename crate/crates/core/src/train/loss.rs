//! Box overlap losses, logistic cross-entropy and the three-term detection
//! objective.

use std::f64::consts::PI;

use super::assign::TargetGrids;
use crate::error::{Error, Result};
use crate::geometry::{sigmoid, BBox};
use crate::model::RawPredictions;
use crate::tensor::{Scalar, Tensor};

pub use crate::geometry::iou;

/// Weights of the objectness, classification and localisation terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_obj: f64,
    pub lambda_cls: f64,
    pub lambda_loc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_obj: 1.0,
            lambda_cls: 1.0,
            lambda_loc: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_obj", self.lambda_obj),
            ("lambda_cls", self.lambda_cls),
            ("lambda_loc", self.lambda_loc),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_obj: self.lambda_obj * k,
            lambda_cls: self.lambda_cls * k,
            lambda_loc: self.lambda_loc * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub obj: f64,
    pub cls: f64,
    pub loc: f64,
    pub matched_cell_count: usize,
}

impl LossBreakdown {
    /// Combines the three terms; `total` is exactly `λ_obj·obj + λ_cls·cls + λ_loc·loc`.
    pub fn combine(obj: f64, cls: f64, loc: f64, matched_cell_count: usize, w: &LossWeights) -> Self {
        Self {
            total: w.lambda_obj * obj + w.lambda_cls * cls + w.lambda_loc * loc,
            obj,
            cls,
            loc,
            matched_cell_count,
        }
    }
}

const V_SCALE: f64 = 4.0 / (PI * PI);

fn check_positive_size(b: &BBox, what: &str) -> Result<()> {
    b.validate()?;
    if b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::Validation(format!("{what} box {b:?} has non-positive size")));
    }
    Ok(())
}

/// Complete-IoU loss `1 − IoU + ρ²/c² + αv`.
pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    check_positive_size(pred, "predicted")?;
    check_positive_size(gt, "ground-truth")?;
    Ok(ciou_with_grad(pred, gt).0)
}

/// CIoU loss and its gradient with respect to the predicted corners
/// `[x1, y1, x2, y2]`. The trade-off weight `α` is differentiated too, so the
/// result matches finite differences of [`ciou_loss`]. Sizes must be positive.
pub fn ciou_with_grad(p: &BBox, g: &BBox) -> (f64, [f64; 4]) {
    let (w, h) = (p.width(), p.height());
    let (wg, hg) = (g.width(), g.height());

    // intersection
    let iw = p.x2.min(g.x2) - p.x1.max(g.x1);
    let ih = p.y2.min(g.y2) - p.y1.max(g.y1);
    let (inter, d_inter) = if iw > 0.0 && ih > 0.0 {
        let dx1 = if p.x1 > g.x1 { -ih } else { 0.0 };
        let dx2 = if p.x2 < g.x2 { ih } else { 0.0 };
        let dy1 = if p.y1 > g.y1 { -iw } else { 0.0 };
        let dy2 = if p.y2 < g.y2 { iw } else { 0.0 };
        (iw * ih, [dx1, dy1, dx2, dy2])
    } else {
        (0.0, [0.0; 4])
    };
    let union = w * h + wg * hg - inter;
    let iou = inter / union;
    let d_area = [-h, -w, h, w];
    let mut d_iou = [0.0; 4];
    for k in 0..4 {
        d_iou[k] = (d_inter[k] * union - inter * (d_area[k] - d_inter[k])) / (union * union);
    }

    // centre distance over enclosing diagonal
    let (cx, cy) = p.center();
    let (gx, gy) = g.center();
    let rho2 = (cx - gx).powi(2) + (cy - gy).powi(2);
    let d_rho2 = [cx - gx, cy - gy, cx - gx, cy - gy];
    let ew = p.x2.max(g.x2) - p.x1.min(g.x1);
    let eh = p.y2.max(g.y2) - p.y1.min(g.y1);
    let c2 = ew * ew + eh * eh;
    let d_c2 = [
        if p.x1 < g.x1 { -2.0 * ew } else { 0.0 },
        if p.y1 < g.y1 { -2.0 * eh } else { 0.0 },
        if p.x2 > g.x2 { 2.0 * ew } else { 0.0 },
        if p.y2 > g.y2 { 2.0 * eh } else { 0.0 },
    ];
    let dist = rho2 / c2;

    // aspect-ratio consistency
    let diff = (wg / hg).atan() - (w / h).atan();
    let v = V_SCALE * diff * diff;
    let r2 = w * w + h * h;
    let dv_da = -2.0 * V_SCALE * diff;
    let d_v = [dv_da * (-h / r2), dv_da * (w / r2), dv_da * (h / r2), dv_da * (-w / r2)];

    let one_minus = 1.0 - iou;
    let den = one_minus + v;
    let (av, dav_di, dav_dv) = if den > 0.0 {
        (v * v / den, v * v / (den * den), v * (2.0 * one_minus + v) / (den * den))
    } else {
        (0.0, 0.0, 0.0)
    };

    let loss = one_minus + dist + av;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_dist = (d_rho2[k] * c2 - rho2 * d_c2[k]) / (c2 * c2);
        grad[k] = (-1.0 + dav_di) * d_iou[k] + d_dist + dav_dv * d_v[k];
    }
    (loss, grad)
}

/// Stable `−[t·ln σ(z) + (1−t)·ln(1−σ(z))]` and its derivative `σ(z) − t`.
#[inline]
pub fn bce_with_logit(z: f64, t: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - t)
}

/// Mean binary cross-entropy over all elements.
pub fn bce_loss<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
    if logits.dims() != targets.dims() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} differ",
            logits.dims(),
            targets.dims()
        )));
    }
    if let Some((i, t)) = targets
        .data()
        .iter()
        .enumerate()
        .find(|(_, t)| !(t.as_f64() >= 0.0 && t.as_f64() <= 1.0))
    {
        return Err(Error::Validation(format!("target {t} at element {i} is outside [0, 1]")));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(z, t)| bce_with_logit(z.as_f64(), t.as_f64()).0)
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to the logits.
pub fn bce_loss_grad<T: Scalar>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    bce_loss(logits, targets)?;
    let n = logits.len().max(1) as f64;
    let data = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(z, t)| T::of(bce_with_logit(z.as_f64(), t.as_f64()).1 / n))
        .collect();
    Tensor::new(logits.dims(), data)
}

fn check_shapes<T: Scalar>(preds: &RawPredictions<T>, targets: &TargetGrids) -> Result<usize> {
    if preds.levels.len() != targets.levels.len() {
        return Err(Error::Shape(format!(
            "{} prediction levels but {} target levels",
            preds.levels.len(),
            targets.levels.len()
        )));
    }
    let mut classes = None;
    for (l, (p, t)) in preds.levels.iter().zip(&targets.levels).enumerate() {
        let [n, c, h, w] = p.dims();
        if n != targets.batch || h != t.height || w != t.width || c < 6 {
            return Err(Error::Shape(format!(
                "level {l}: predictions {:?} do not match targets (batch {}, {}x{})",
                p.dims(),
                targets.batch,
                t.height,
                t.width
            )));
        }
        if *classes.get_or_insert(c - 5) != c - 5 {
            return Err(Error::Shape("levels disagree on the class count".into()));
        }
    }
    Ok(classes.unwrap_or(0))
}

/// The detection objective: objectness BCE averaged over every cell, class
/// BCE averaged over positive cells and classes, CIoU averaged over
/// positive cells.
pub fn composite_loss<T: Scalar>(
    preds: &RawPredictions<T>,
    targets: &TargetGrids,
    w: &LossWeights,
    box_clamp: f64,
) -> Result<LossBreakdown> {
    Ok(evaluate(preds, targets, w, box_clamp, false)?.0)
}

/// [`composite_loss`] plus its gradient with respect to every prediction level.
pub fn composite_loss_with_grad<T: Scalar>(
    preds: &RawPredictions<T>,
    targets: &TargetGrids,
    w: &LossWeights,
    box_clamp: f64,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    evaluate(preds, targets, w, box_clamp, true)
}

fn evaluate<T: Scalar>(
    preds: &RawPredictions<T>,
    targets: &TargetGrids,
    w: &LossWeights,
    clamp: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
    w.validate()?;
    let nc = check_shapes(preds, targets)?;
    let total_cells: usize = targets.levels.iter().map(|t| t.height * t.width * targets.batch).sum();
    let positives = targets.positive_count();

    let mut grads: Vec<Vec<f64>> = if want_grad {
        preds.levels.iter().map(|p| vec![0.0; p.len()]).collect()
    } else {
        Vec::new()
    };

    let obj_scale = 1.0 / total_cells.max(1) as f64;
    let cls_scale = 1.0 / (positives * nc).max(1) as f64;
    let loc_scale = 1.0 / positives.max(1) as f64;

    let mut obj_sum = 0.0;
    for (l, (p, t)) in preds.levels.iter().zip(&targets.levels).enumerate() {
        let [n, _, h, wd] = p.dims();
        let hw = h * wd;
        for b in 0..n {
            let logits = p.plane(b, 4);
            let tgt = &t.objectness[b * hw..(b + 1) * hw];
            let base = p.index(b, 4, 0, 0);
            for (i, (&z, &tv)) in logits.iter().zip(tgt).enumerate() {
                let (lv, gv) = bce_with_logit(z.as_f64(), tv);
                obj_sum += lv;
                if want_grad {
                    grads[l][base + i] = w.lambda_obj * obj_scale * gv;
                }
            }
        }
    }

    let mut cls_sum = 0.0;
    let mut loc_sum = 0.0;
    for (l, (p, t)) in preds.levels.iter().zip(&targets.levels).enumerate() {
        let s = t.stride as f64;
        for pos in &t.positives {
            let (b, r, c) = (pos.batch, pos.row, pos.col);
            for k in 0..nc {
                let z = p.get(b, 5 + k, r, c).as_f64();
                let tv = if k == pos.class_id { 1.0 } else { 0.0 };
                let (lv, gv) = bce_with_logit(z, tv);
                cls_sum += lv;
                if want_grad {
                    grads[l][p.index(b, 5 + k, r, c)] += w.lambda_cls * cls_scale * gv;
                }
            }

            let tv: [f64; 4] = std::array::from_fn(|k| p.get(b, k, r, c).as_f64());
            let sx = sigmoid(tv[0]);
            let sy = sigmoid(tv[1]);
            let tw = tv[2].clamp(-clamp, clamp);
            let th = tv[3].clamp(-clamp, clamp);
            let bw = s * tw.exp();
            let bh = s * th.exp();
            let cx = (c as f64 + sx) * s;
            let cy = (r as f64 + sy) * s;
            let pred = BBox::from_center(cx, cy, bw, bh);
            let (lv, gc) = ciou_with_grad(&pred, &pos.bbox);
            loc_sum += lv;
            if want_grad {
                let k = w.lambda_loc * loc_scale;
                let d_cx = gc[0] + gc[2];
                let d_cy = gc[1] + gc[3];
                let d_w = (gc[2] - gc[0]) / 2.0;
                let d_h = (gc[3] - gc[1]) / 2.0;
                let inside = |t: f64| if t.abs() < clamp { 1.0 } else { 0.0 };
                let d = [
                    d_cx * s * sx * (1.0 - sx),
                    d_cy * s * sy * (1.0 - sy),
                    d_w * bw * inside(tv[2]),
                    d_h * bh * inside(tv[3]),
                ];
                for (ch, dv) in d.iter().enumerate() {
                    grads[l][p.index(b, ch, r, c)] += k * dv;
                }
            }
        }
    }

    let obj = obj_sum * obj_scale;
    let (cls, loc) = if positives == 0 {
        (0.0, 0.0)
    } else {
        (cls_sum * cls_scale, loc_sum * loc_scale)
    };
    let breakdown = LossBreakdown::combine(obj, cls, loc, positives, w);
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!(
            "loss is not finite (obj {obj}, cls {cls}, loc {loc})"
        )));
    }
    let grads = grads
        .into_iter()
        .zip(&preds.levels)
        .map(|(g, p)| Tensor::new(p.dims(), g.into_iter().map(T::of).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((breakdown, grads))
}
