//! Thermal frames, resizing, letterboxing, augmentation and image files.

mod augment;
mod io;
mod resize;

use std::borrow::Cow;

pub use augment::{
    add_temp_blob, augment_sample, brightness_contrast, cutout_region, fog_rain_overlay, hflip_with_boxes, mosaic4,
    mosaic4_with, thermal_artifacts, ArtifactMode, ArtifactOutcome, AugmentationSpec, MosaicLayout, Weather,
};
pub use io::{
    decode_pgm, decode_raw_f32, encode_pgm, encode_raw_f32, read_frame, read_pgm, read_raw_f32, write_pgm,
    write_raw_f32, PgmDepth,
};
pub(crate) use resize::unmap_box;
pub use resize::{bilinear_resample, bilinear_resize, letterbox_to_stride, prepare_input, resize_with_boxes, PadRecord, Preprocess, ScaleRecord};

use crate::error::{Error, Result};
use crate::geometry::LabeledBox;

/// How raw sensor counts become `[0, 1]` intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Normalization {
    /// Per-frame min-max stretch; a flat frame maps to 0.
    #[default]
    MinMax,
    /// Fixed count range, clamped.
    Fixed { lo: f64, hi: f64 },
    /// Divide by the file's maximum value.
    MaxVal,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "minmax" => Ok(Self::MinMax),
            "maxval" => Ok(Self::MaxVal),
            _ => {
                let range = s
                    .strip_prefix("fixed:")
                    .and_then(|r| r.split_once(','))
                    .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
                match range {
                    Some((lo, hi)) if hi > lo => Ok(Self::Fixed { lo, hi }),
                    _ => Err(Error::Config(format!(
                        "unknown normalization `{s}` (expected minmax, maxval or fixed:LO,HI)"
                    ))),
                }
            }
        }
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MinMax => f.write_str("minmax"),
            Self::MaxVal => f.write_str("maxval"),
            Self::Fixed { lo, hi } => write!(f, "fixed:{lo},{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Raw { data: Vec<u16>, maxval: u16 },
    Normalized(Vec<f32>),
}

/// One single-channel frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Pixels,
    pub timestamp: Option<f64>,
    pub source_id: String,
}

impl ThermalFrame {
    pub fn from_normalized(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} frame",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "normalized pixel {i} = {} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: Pixels::Normalized(data),
            timestamp: None,
            source_id: String::new(),
        })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u16>, maxval: u16) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} frame",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: Pixels::Raw { data, maxval },
            timestamp: None,
            source_id: String::new(),
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::from_normalized(width, height, vec![value; width * height])
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self.pixels, Pixels::Normalized(_))
    }

    /// Intensities in `[0, 1]`; raw frames are converted with `mode`.
    pub fn intensities(&self, mode: Normalization) -> Cow<'_, [f32]> {
        match &self.pixels {
            Pixels::Normalized(v) => Cow::Borrowed(v),
            Pixels::Raw { data, maxval } => Cow::Owned(normalize_counts(data, *maxval, mode)),
        }
    }

    /// Normalized intensities (raw frames use the per-frame min-max stretch).
    pub fn values(&self) -> Cow<'_, [f32]> {
        self.intensities(Normalization::MinMax)
    }

    pub fn normalize(&self, mode: Normalization) -> ThermalFrame {
        self.derive(self.intensities(mode).into_owned())
    }

    /// A normalized frame with the same size and metadata as `self`.
    pub(crate) fn derive(&self, data: Vec<f32>) -> ThermalFrame {
        debug_assert_eq!(data.len(), self.width * self.height);
        ThermalFrame {
            width: self.width,
            height: self.height,
            pixels: Pixels::Normalized(data),
            timestamp: self.timestamp,
            source_id: self.source_id.clone(),
        }
    }

    pub(crate) fn derive_sized(&self, width: usize, height: usize, data: Vec<f32>) -> ThermalFrame {
        debug_assert_eq!(data.len(), width * height);
        ThermalFrame {
            width,
            height,
            pixels: Pixels::Normalized(data),
            timestamp: self.timestamp,
            source_id: self.source_id.clone(),
        }
    }
}

fn normalize_counts(data: &[u16], maxval: u16, mode: Normalization) -> Vec<f32> {
    let (lo, hi) = match mode {
        Normalization::MinMax => {
            let lo = data.iter().copied().min().unwrap_or(0) as f64;
            let hi = data.iter().copied().max().unwrap_or(0) as f64;
            (lo, hi)
        }
        Normalization::Fixed { lo, hi } => (lo, hi),
        Normalization::MaxVal => (0.0, maxval.max(1) as f64),
    };
    if hi <= lo {
        return vec![0.0; data.len()];
    }
    data.iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0) as f32)
        .collect()
}

/// A frame with its pixel-space ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame: ThermalFrame,
    pub boxes: Vec<LabeledBox>,
}

impl Sample {
    pub fn new(frame: ThermalFrame, boxes: Vec<LabeledBox>) -> Self {
        Self { frame, boxes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_and_fixed() {
        let f = ThermalFrame::from_raw(2, 2, vec![100, 200, 300, 500], 65535).unwrap();
        assert_eq!(f.values().as_ref(), &[0.0, 0.25, 0.5, 1.0]);
        let fixed = f.intensities(Normalization::Fixed { lo: 0.0, hi: 400.0 });
        assert_eq!(fixed.as_ref(), &[0.25, 0.5, 0.75, 1.0]);
        let flat = ThermalFrame::from_raw(1, 2, vec![7, 7], 255).unwrap();
        assert_eq!(flat.values().as_ref(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ThermalFrame::from_normalized(1, 1, vec![1.5]).is_err());
        assert!(ThermalFrame::from_normalized(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn normalization_parse_round_trip() {
        for s in ["minmax", "maxval", "fixed:1000,5000"] {
            let n: Normalization = s.parse().unwrap();
            assert_eq!(n.to_string(), s);
        }
        assert!("fixed:5,1".parse::<Normalization>().is_err());
    }
}
