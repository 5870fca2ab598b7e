use super::{Normalization, ThermalFrame};
use crate::error::{Error, Result};
use crate::geometry::{BBox, LabeledBox};
use crate::tensor::Tensor;

/// Right/bottom padding added to reach a stride multiple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PadRecord {
    /// Content size before padding.
    pub width: usize,
    pub height: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl PadRecord {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pad_right: 0,
            pad_bottom: 0,
        }
    }

    pub fn padded_width(&self) -> usize {
        self.width + self.pad_right
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.pad_bottom
    }
}

/// Resize from the original frame (`src`) to the network resolution (`dst`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleRecord {
    pub src_w: usize,
    pub src_h: usize,
    pub dst_w: usize,
    pub dst_h: usize,
}

impl ScaleRecord {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            src_w: width,
            src_h: height,
            dst_w: width,
            dst_h: height,
        }
    }

    /// Factors that take resized coordinates back to the original frame.
    pub fn inverse_factors(&self) -> (f64, f64) {
        (
            self.src_w as f64 / self.dst_w as f64,
            self.src_h as f64 / self.dst_h as f64,
        )
    }
}

/// Everything needed to map detections back to the original frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocess {
    pub scale: ScaleRecord,
    pub pad: PadRecord,
}

/// Bilinear resampling of a `w × h` plane with half-pixel centres: output
/// pixel `i` samples source coordinate `(i + 0.5)·scale − 0.5`, clamped to
/// the image.
pub fn bilinear_resample(src: &[f64], w: usize, h: usize, target_w: usize, target_h: usize) -> Result<Vec<f64>> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Validation(format!(
            "resize target {target_w}x{target_h} must be at least 1x1"
        )));
    }
    if w == 0 || h == 0 || src.len() != w * h {
        return Err(Error::Validation(format!("cannot resize a {w}x{h} plane of {} values", src.len())));
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(target_w, w);
    let ys = taps(target_h, h);
    let mut out = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = lerp(r0[x0], r0[x1], fx);
            let bottom = lerp(r1[x0], r1[x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Ok(out)
}

/// [`bilinear_resample`] on a frame's normalized intensities.
pub fn bilinear_resize(frame: &ThermalFrame, target_w: usize, target_h: usize) -> Result<ThermalFrame> {
    let src: Vec<f64> = frame.values().iter().map(|&v| v as f64).collect();
    let out = bilinear_resample(&src, frame.width, frame.height, target_w, target_h)?;
    Ok(frame.derive_sized(target_w, target_h, out.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()))
}

/// `a + (b − a)·t`, exact when `a == b`.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Resizes a frame and scales its boxes by the same factors.
pub fn resize_with_boxes(
    frame: &ThermalFrame,
    boxes: &[LabeledBox],
    target_w: usize,
    target_h: usize,
) -> Result<(ThermalFrame, Vec<LabeledBox>)> {
    let out = bilinear_resize(frame, target_w, target_h)?;
    let sx = target_w as f64 / frame.width as f64;
    let sy = target_h as f64 / frame.height as f64;
    let boxes = boxes
        .iter()
        .map(|b| LabeledBox::new(b.class_id, b.bbox.scale(sx, sy)))
        .collect();
    Ok((out, boxes))
}

/// Pads right and bottom by edge replication up to the next multiple of
/// `multiple`. Boxes keep their pixel coordinates.
pub fn letterbox_to_stride(
    frame: &ThermalFrame,
    boxes: &[LabeledBox],
    multiple: usize,
) -> Result<(ThermalFrame, Vec<LabeledBox>, PadRecord)> {
    if multiple == 0 {
        return Err(Error::Validation("stride multiple must be at least 1".into()));
    }
    let (w, h) = (frame.width, frame.height);
    let pw = w.div_ceil(multiple) * multiple;
    let ph = h.div_ceil(multiple) * multiple;
    let record = PadRecord {
        width: w,
        height: h,
        pad_right: pw - w,
        pad_bottom: ph - h,
    };
    let src = frame.values();
    let out = if pw == w && ph == h {
        src.into_owned()
    } else {
        let mut out = Vec::with_capacity(pw * ph);
        for y in 0..ph {
            let row = &src[y.min(h - 1) * w..(y.min(h - 1) + 1) * w];
            out.extend_from_slice(row);
            let edge = row[w - 1];
            out.extend(std::iter::repeat_n(edge, pw - w));
        }
        out
    };
    Ok((frame.derive_sized(pw, ph, out), boxes.to_vec(), record))
}

/// Normalizes, optionally resizes to `target = (width, height)` and
/// letterboxes a frame into a `1×1×H×W` network input.
pub fn prepare_input(
    frame: &ThermalFrame,
    target: Option<(usize, usize)>,
    multiple: usize,
    normalization: Normalization,
) -> Result<(Tensor<f32>, Preprocess)> {
    let normalized = if frame.is_normalized() {
        std::borrow::Cow::Borrowed(frame)
    } else {
        std::borrow::Cow::Owned(frame.normalize(normalization))
    };
    let (tw, th) = target.unwrap_or((frame.width, frame.height));
    let resized = if (tw, th) == (frame.width, frame.height) {
        normalized
    } else {
        std::borrow::Cow::Owned(bilinear_resize(&normalized, tw, th)?)
    };
    let (padded, _, pad) = letterbox_to_stride(&resized, &[], multiple)?;
    let data = padded.values().into_owned();
    let tensor = Tensor::new([1, 1, padded.height, padded.width], data)?;
    Ok((
        tensor,
        Preprocess {
            scale: ScaleRecord {
                src_w: frame.width,
                src_h: frame.height,
                dst_w: tw,
                dst_h: th,
            },
            pad,
        },
    ))
}

/// Maps a box from padded network coordinates back to the original frame:
/// clip to the unpadded content, then undo the resize. `None` when nothing
/// of the box is left.
pub(crate) fn unmap_box(b: &BBox, pre: &Preprocess) -> Option<BBox> {
    let clipped = b.clip(0.0, 0.0, pre.pad.width as f64, pre.pad.height as f64);
    if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
        return None;
    }
    let (fx, fy) = pre.scale.inverse_factors();
    Some(clipped.scale(fx, fy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_to_one() {
        let r = bilinear_resample(&[0.0, 10.0, 20.0, 30.0], 2, 2, 1, 1).unwrap();
        assert_eq!(r, vec![15.0]);
        let f = ThermalFrame::from_normalized(2, 2, vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let r = bilinear_resize(&f, 1, 1).unwrap();
        assert!((r.values()[0] as f64 - 0.15).abs() < 1e-7);
    }

    #[test]
    fn constant_stays_constant() {
        let f = ThermalFrame::constant(7, 5, 0.37).unwrap();
        for (w, h) in [(1, 1), (3, 11), (20, 2)] {
            let r = bilinear_resize(&f, w, h).unwrap();
            assert!(r.values().iter().all(|&v| v == 0.37f32));
        }
        assert!(bilinear_resize(&f, 0, 3).is_err());
    }

    #[test]
    fn letterbox_pads_by_replication() {
        let f = ThermalFrame::from_normalized(140, 112, (0..140 * 112).map(|i| (i % 140) as f32 / 140.0).collect())
            .unwrap();
        let (p, _, rec) = letterbox_to_stride(&f, &[], 32).unwrap();
        assert_eq!((p.width, p.height), (160, 128));
        assert_eq!((rec.pad_right, rec.pad_bottom), (20, 16));
        let v = p.values();
        assert_eq!(v[159], v[139]);
        assert_eq!(v[127 * 160 + 159], f.values()[111 * 140 + 139]);
        let (same, _, rec) = letterbox_to_stride(&p, &[], 32).unwrap();
        assert_eq!((rec.pad_right, rec.pad_bottom), (0, 0));
        assert_eq!(same, p);
    }

    #[test]
    fn unmap_only_clips_and_scales() {
        let pre = Preprocess {
            scale: ScaleRecord::identity(140, 112),
            pad: PadRecord {
                width: 140,
                height: 112,
                pad_right: 20,
                pad_bottom: 16,
            },
        };
        let b = BBox::from_center(80.0, 64.0, 10.0, 10.0);
        assert_eq!(unmap_box(&b, &pre), Some(b));
        let outside = BBox::new(145.0, 10.0, 155.0, 20.0).unwrap();
        assert_eq!(unmap_box(&outside, &pre), None);
    }
}
