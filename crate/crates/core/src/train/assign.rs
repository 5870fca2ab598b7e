//! Ground-truth to grid-cell assignment.

use crate::error::{Error, Result};
use crate::geometry::{BBox, LabeledBox};
use crate::model::ModelConfig;

/// Box side (square root of area, padded-input pixels) below which the
/// finest level is used.
pub const SMALL_BOX: f64 = 64.0;
/// Box side above which the coarsest level is used.
pub const LARGE_BOX: f64 = 128.0;

/// A cell responsible for one ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub batch: usize,
    pub row: usize,
    pub col: usize,
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// `batch × height × width` objectness targets (0 or 1).
    pub objectness: Vec<f64>,
    pub positives: Vec<Positive>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrids {
    pub batch: usize,
    pub levels: Vec<LevelTargets>,
    /// Boxes that lost a collision at two levels and were not assigned.
    pub dropped: usize,
}

impl TargetGrids {
    pub fn positive_count(&self) -> usize {
        self.levels.iter().map(|l| l.positives.len()).sum()
    }
}

/// Level index for a box by its scale.
pub fn level_for(bbox: &BBox) -> usize {
    let side = bbox.area().sqrt();
    if side < SMALL_BOX {
        0
    } else if side <= LARGE_BOX {
        1
    } else {
        2
    }
}

/// Assigns the boxes of one image.
pub fn assign_targets(boxes: &[LabeledBox], config: &ModelConfig, padded: (usize, usize)) -> Result<TargetGrids> {
    assign_batch(&[boxes.to_vec()], config, padded)
}

/// Assigns every image of a batch; all images share the padded size `(width, height)`.
///
/// Boxes are visited largest first (stable for equal areas). Each takes the
/// cell containing its centre at its scale level; if that cell is taken it
/// moves one level coarser, and if that fails too it is dropped.
pub fn assign_batch(images: &[Vec<LabeledBox>], config: &ModelConfig, padded: (usize, usize)) -> Result<TargetGrids> {
    let (pw, ph) = padded;
    let s_max = config.max_stride();
    if pw == 0 || ph == 0 || pw % s_max != 0 || ph % s_max != 0 {
        return Err(Error::Shape(format!(
            "padded size {pw}x{ph} is not a positive multiple of {s_max}"
        )));
    }
    let batch = images.len();
    let mut levels: Vec<LevelTargets> = config
        .strides
        .iter()
        .map(|&s| LevelTargets {
            stride: s,
            height: ph / s,
            width: pw / s,
            objectness: vec![0.0; batch * (ph / s) * (pw / s)],
            positives: Vec::new(),
        })
        .collect();
    let mut dropped = 0;
    for (b, boxes) in images.iter().enumerate() {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        for lb in boxes {
            lb.bbox.validate()?;
            if lb.bbox.area() <= 0.0 {
                return Err(Error::Validation(format!("box {:?} has zero area", lb.bbox)));
            }
            if lb.class_id >= config.num_classes {
                return Err(Error::Validation(format!(
                    "class {} outside the {} configured classes",
                    lb.class_id, config.num_classes
                )));
            }
            let (cx, cy) = lb.bbox.center();
            if !(0.0..pw as f64).contains(&cx) || !(0.0..ph as f64).contains(&cy) {
                return Err(Error::Validation(format!(
                    "box {:?} has its centre outside the {pw}x{ph} input",
                    lb.bbox
                )));
            }
        }
        order.sort_by(|&a, &c| boxes[c].bbox.area().total_cmp(&boxes[a].bbox.area()));
        for i in order {
            let lb = &boxes[i];
            let first = level_for(&lb.bbox);
            let (cx, cy) = lb.bbox.center();
            let mut placed = false;
            for l in first..(first + 2).min(levels.len()) {
                let lv = &mut levels[l];
                let s = lv.stride as f64;
                let col = ((cx / s) as usize).min(lv.width - 1);
                let row = ((cy / s) as usize).min(lv.height - 1);
                let idx = (b * lv.height + row) * lv.width + col;
                if lv.objectness[idx] == 0.0 {
                    lv.objectness[idx] = 1.0;
                    lv.positives.push(Positive {
                        batch: b,
                        row,
                        col,
                        class_id: lb.class_id,
                        bbox: lb.bbox,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                dropped += 1;
                log::warn!("dropped box {:?} of image {b}: its cells are taken", lb.bbox);
            }
        }
    }
    Ok(TargetGrids {
        batch,
        levels,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_box_cell() {
        let cfg = ModelConfig::reference();
        let b = LabeledBox::new(0, BBox::from_center(80.0, 64.0, 24.0, 40.0));
        let t = assign_targets(&[b], &cfg, (160, 128)).unwrap();
        assert_eq!(t.levels[0].positives.len(), 1);
        let p = t.levels[0].positives[0];
        assert_eq!((p.row, p.col), (8, 10));
        assert_eq!(t.positive_count(), 1);
    }

    #[test]
    fn collision_escalates() {
        let cfg = ModelConfig::reference();
        let b = LabeledBox::new(1, BBox::from_center(80.0, 64.0, 24.0, 40.0));
        let t = assign_targets(&[b, b], &cfg, (160, 128)).unwrap();
        assert_eq!(t.levels[0].positives.len(), 1);
        assert_eq!(t.levels[1].positives.len(), 1);
        assert_eq!(t.dropped, 0);
        let t = assign_targets(&[b, b, b], &cfg, (160, 128)).unwrap();
        assert_eq!(t.dropped, 1);
    }

    #[test]
    fn empty_and_invalid() {
        let cfg = ModelConfig::reference();
        let t = assign_targets(&[], &cfg, (160, 128)).unwrap();
        assert!(t.levels.iter().all(|l| l.objectness.iter().all(|&v| v == 0.0)));
        let flat = LabeledBox::new(0, BBox::from_center(50.0, 50.0, 0.0, 10.0));
        assert!(matches!(assign_targets(&[flat], &cfg, (160, 128)), Err(Error::Validation(_))));
    }
}
