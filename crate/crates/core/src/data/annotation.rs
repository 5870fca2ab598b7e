//! One-box-per-line annotations: `class_id cx cy w h`, box values
//! normalised to the frame.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{BBox, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    /// Pixel box for a `width × height` frame.
    pub fn to_labeled(&self, width: usize, height: usize) -> LabeledBox {
        let (fw, fh) = (width as f64, height as f64);
        LabeledBox::new(
            self.class_id,
            BBox::from_center(self.cx * fw, self.cy * fh, self.w * fw, self.h * fh),
        )
    }

    pub fn from_labeled(b: &LabeledBox, width: usize, height: usize) -> Self {
        let (fw, fh) = (width as f64, height as f64);
        let (cx, cy) = b.bbox.center();
        Self {
            class_id: b.class_id,
            cx: cx / fw,
            cy: cy / fh,
            w: b.bbox.width() / fw,
            h: b.bbox.height() / fh,
        }
    }
}

/// Parses annotation text. Extents that spill past the frame are clamped
/// with a warning; anything malformed fails with its 1-based line number.
pub fn parse_annotation(text: &str, num_classes: usize) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line,
                msg: format!("expected `class_id cx cy w h`, got {} fields", fields.len()),
            });
        }
        let class_id: usize = fields[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("class id `{}` is not a non-negative integer", fields[0]),
        })?;
        if class_id >= num_classes {
            return Err(Error::Parse {
                line,
                msg: format!("class id {class_id} out of range for {num_classes} classes"),
            });
        }
        let mut v = [0.0f64; 4];
        for (slot, (name, s)) in v.iter_mut().zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..])) {
            *slot = s.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{name} `{s}` is not a number"),
            })?;
            if !slot.is_finite() || !(0.0..=1.0).contains(slot) {
                return Err(Error::Parse {
                    line,
                    msg: format!("{name} = {s} outside [0, 1]"),
                });
            }
        }
        let [cx, cy, w, h] = v;
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Parse {
                line,
                msg: "box width and height must be positive".into(),
            });
        }
        let spills = cx - w / 2.0 < 0.0 || cx + w / 2.0 > 1.0 || cy - h / 2.0 < 0.0 || cy + h / 2.0 > 1.0;
        let clamped = if spills {
            log::warn!("line {line}: box extends past the frame; clamped");
            let (x1, x2) = ((cx - w / 2.0).max(0.0), (cx + w / 2.0).min(1.0));
            let (y1, y2) = ((cy - h / 2.0).max(0.0), (cy + h / 2.0).min(1.0));
            Annotation {
                class_id,
                cx: (x1 + x2) / 2.0,
                cy: (y1 + y2) / 2.0,
                w: x2 - x1,
                h: y2 - y1,
            }
        } else {
            Annotation { class_id, cx, cy, w, h }
        };
        out.push(clamped);
    }
    Ok(out)
}

/// Renders annotations in the format [`parse_annotation`] reads.
pub fn format_annotations(anns: &[Annotation]) -> String {
    let mut s = String::new();
    for a in anns {
        let _ = writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", a.class_id, a.cx, a.cy, a.w, a.h);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let a = parse_annotation("0 0.5 0.5 0.2 0.4\n", 2).unwrap();
        assert_eq!(
            a,
            vec![Annotation {
                class_id: 0,
                cx: 0.5,
                cy: 0.5,
                w: 0.2,
                h: 0.4
            }]
        );
        assert!(parse_annotation("", 2).unwrap().is_empty());
        assert!(matches!(
            parse_annotation("0 0.5 0.5 0 0.1", 2),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotation("1 0.5 0.5 0.1 0.1\n\n5 0.5 0.5 0.1 0.1", 2),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse_annotation("0 0.5 0.5 0.1", 2), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn clamps_spill() {
        let a = parse_annotation("1 0.95 0.5 0.2 0.2", 2).unwrap()[0];
        assert!((a.cx + a.w / 2.0 - 1.0).abs() < 1e-12);
        assert!((a.w - 0.15).abs() < 1e-12);
    }
}
