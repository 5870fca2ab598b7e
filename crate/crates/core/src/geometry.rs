//! Axis-aligned boxes and the per-cell box parametrisation shared by the
//! loss and the decoder.

use crate::error::{Error, Result};

/// Corner-format box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x1, self.y1, self.x2, self.y2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("box {self:?} has non-finite coordinates")));
        }
        if self.x2 < self.x1 || self.y2 < self.y1 {
            return Err(Error::Validation(format!("box {self:?} is inverted")));
        }
        Ok(())
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self {
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            x2: self.x2 * sx,
            y2: self.y2 * sy,
        }
    }

    /// Intersection with the rectangle `[x0, x1] × [y0, y1]`; may be empty.
    pub fn clip(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x1: self.x1.clamp(x0, x1),
            y1: self.y1.clamp(y0, y1),
            x2: self.x2.clamp(x0, x1),
            y2: self.y2.clamp(y0, y1),
        }
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let iw = self.x2.min(other.x2) - self.x1.max(other.x1);
        let ih = self.y2.min(other.y2) - self.y1.max(other.y1);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

#[inline]
pub(crate) fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// A ground-truth box with its class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox {
    pub class_id: usize,
    pub bbox: BBox,
}

impl LabeledBox {
    pub fn new(class_id: usize, bbox: BBox) -> Self {
        Self { class_id, bbox }
    }
}

/// Logistic function on f64.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Box predicted by cell `(row, col)` at `stride` from raw outputs
/// `[tx, ty, tw, th]`: sigmoid centre offsets, exponential sizes with the
/// size logits clamped to `±clamp`. Returns `(cx, cy, w, h)`.
#[inline]
pub fn decode_cell(t: [f64; 4], row: usize, col: usize, stride: f64, clamp: f64) -> [f64; 4] {
    [
        (col as f64 + sigmoid(t[0])) * stride,
        (row as f64 + sigmoid(t[1])) * stride,
        stride * t[2].clamp(-clamp, clamp).exp(),
        stride * t[3].clamp(-clamp, clamp).exp(),
    ]
}

/// Inverse of [`decode_cell`] for a box whose centre lies strictly inside
/// the cell.
pub fn encode_cell(bbox: &BBox, row: usize, col: usize, stride: f64) -> [f64; 4] {
    let (cx, cy) = bbox.center();
    let fx = cx / stride - col as f64;
    let fy = cy / stride - row as f64;
    let logit = |p: f64| (p / (1.0 - p)).ln();
    [
        logit(fx),
        logit(fy),
        (bbox.width() / stride).ln(),
        (bbox.height() / stride).ln(),
    ]
}
