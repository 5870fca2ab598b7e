//! Training-time augmentation. Every operation is a pure function of its
//! inputs and seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Sample, ThermalFrame};
use crate::error::{Error, Result};
use crate::geometry::{BBox, LabeledBox};

/// Probabilities and limits of the augmentation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSpec {
    pub hflip_p: f64,
    pub brightness_contrast_limit: f64,
    pub mosaic_p: f64,
    pub fog_p: f64,
    pub rain_p: f64,
    /// Upper bound of the uniformly drawn fog/rain intensity.
    pub weather_max_intensity: f64,
    pub temp_bias_p: f64,
    pub specular_p: f64,
    /// Probability of an occluder (cutout or cutmix, evenly split).
    pub cut_p: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            brightness_contrast_limit: 0.3,
            mosaic_p: 1.0,
            fog_p: 0.0,
            rain_p: 0.0,
            weather_max_intensity: 0.5,
            temp_bias_p: 0.0,
            specular_p: 0.0,
            cut_p: 0.0,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Everything off.
    pub fn none() -> Self {
        Self {
            hflip_p: 0.0,
            brightness_contrast_limit: 0.0,
            mosaic_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hflip_p", self.hflip_p),
            ("mosaic_p", self.mosaic_p),
            ("fog_p", self.fog_p),
            ("rain_p", self.rain_p),
            ("weather_max_intensity", self.weather_max_intensity),
            ("temp_bias_p", self.temp_bias_p),
            ("specular_p", self.specular_p),
            ("cut_p", self.cut_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.brightness_contrast_limit.is_finite() && self.brightness_contrast_limit >= 0.0) {
            return Err(Error::Config(format!(
                "brightness_contrast_limit must be non-negative, got {}",
                self.brightness_contrast_limit
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.hflip_p == 0.0
            && self.brightness_contrast_limit == 0.0
            && self.mosaic_p == 0.0
            && self.fog_p == 0.0
            && self.rain_p == 0.0
            && self.temp_bias_p == 0.0
            && self.specular_p == 0.0
            && self.cut_p == 0.0
    }
}

/// Mirror about the vertical axis.
pub fn hflip_with_boxes(frame: &ThermalFrame, boxes: &[LabeledBox]) -> (ThermalFrame, Vec<LabeledBox>) {
    let (w, h) = (frame.width, frame.height);
    let src = frame.values();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend(src[y * w..(y + 1) * w].iter().rev());
    }
    let wf = w as f64;
    let boxes = boxes
        .iter()
        .map(|b| {
            LabeledBox::new(
                b.class_id,
                BBox {
                    x1: wf - b.bbox.x2,
                    y1: b.bbox.y1,
                    x2: wf - b.bbox.x1,
                    y2: b.bbox.y2,
                },
            )
        })
        .collect();
    (frame.derive(out), boxes)
}

/// `clamp((x − 0.5)·(1 + c) + 0.5 + b, 0, 1)`.
pub fn brightness_contrast(frame: &ThermalFrame, b: f64, c: f64) -> ThermalFrame {
    let out = frame
        .values()
        .iter()
        .map(|&x| ((x as f64 - 0.5) * (1.0 + c) + 0.5 + b).clamp(0.0, 1.0) as f32)
        .collect();
    frame.derive(out)
}

/// Placement of a 2×2 mosaic: the split point and, per tile, the top-left
/// corner of the crop taken from its source sample. Tiles are ordered
/// top-left, top-right, bottom-left, bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MosaicLayout {
    pub split: (usize, usize),
    pub offsets: [(usize, usize); 4],
}

impl MosaicLayout {
    fn tiles(&self, w: usize, h: usize) -> [(usize, usize, usize, usize); 4] {
        let (sx, sy) = self.split;
        [(0, 0, sx, sy), (sx, 0, w, sy), (0, sy, sx, h), (sx, sy, w, h)]
    }

    /// A seeded layout with the split in the central half of the frame.
    pub fn random(w: usize, h: usize, rng: &mut impl Rng) -> Self {
        let sx = rng.gen_range(w / 4..=(3 * w / 4).max(w / 4));
        let sy = rng.gen_range(h / 4..=(3 * h / 4).max(h / 4));
        let mut layout = Self {
            split: (sx, sy),
            offsets: [(0, 0); 4],
        };
        for (k, (x0, y0, x1, y1)) in layout.tiles(w, h).into_iter().enumerate() {
            let ox = rng.gen_range(0..=w - (x1 - x0));
            let oy = rng.gen_range(0..=h - (y1 - y0));
            layout.offsets[k] = (ox, oy);
        }
        layout
    }
}

/// Smallest side a clipped mosaic box may keep.
const MOSAIC_MIN_SIDE: f64 = 4.0;

fn check_mosaic_inputs(samples: &[Sample]) -> Result<(usize, usize)> {
    if samples.len() != 4 {
        return Err(Error::Validation(format!("mosaic needs 4 samples, got {}", samples.len())));
    }
    let (w, h) = (samples[0].frame.width, samples[0].frame.height);
    if let Some(s) = samples.iter().find(|s| (s.frame.width, s.frame.height) != (w, h)) {
        return Err(Error::Validation(format!(
            "mosaic inputs differ in size: {w}x{h} vs {}x{}",
            s.frame.width, s.frame.height
        )));
    }
    Ok((w, h))
}

/// Tiles four equally sized samples with a seeded layout.
pub fn mosaic4(samples: &[Sample], seed: u64) -> Result<Sample> {
    let (w, h) = check_mosaic_inputs(samples)?;
    let layout = MosaicLayout::random(w, h, &mut ChaCha8Rng::seed_from_u64(seed));
    mosaic4_with(samples, &layout)
}

/// Tiles four samples with an explicit layout. Boxes move with their tile
/// and are clipped to it; a box left narrower or shorter than 4 px is dropped.
pub fn mosaic4_with(samples: &[Sample], layout: &MosaicLayout) -> Result<Sample> {
    let (w, h) = check_mosaic_inputs(samples)?;
    let (sx, sy) = layout.split;
    if sx > w || sy > h {
        return Err(Error::Validation(format!("mosaic split {sx},{sy} outside {w}x{h}")));
    }
    let mut out = vec![0.0f32; w * h];
    let mut boxes = Vec::new();
    for (k, (x0, y0, x1, y1)) in layout.tiles(w, h).into_iter().enumerate() {
        let (tw, th) = (x1 - x0, y1 - y0);
        let (ox, oy) = layout.offsets[k];
        if ox + tw > w || oy + th > h {
            return Err(Error::Validation(format!("mosaic crop {k} leaves the source frame")));
        }
        let src = samples[k].frame.values();
        for y in 0..th {
            let s = (oy + y) * w + ox;
            out[(y0 + y) * w + x0..(y0 + y) * w + x1].copy_from_slice(&src[s..s + tw]);
        }
        let (dx, dy) = (x0 as f64 - ox as f64, y0 as f64 - oy as f64);
        for b in &samples[k].boxes {
            let moved = b.bbox.translate(dx, dy).clip(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
            if moved.width() >= MOSAIC_MIN_SIDE && moved.height() >= MOSAIC_MIN_SIDE {
                boxes.push(LabeledBox::new(b.class_id, moved));
            }
        }
    }
    Ok(Sample::new(samples[0].frame.derive(out), boxes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactMode {
    /// Warm Gaussian blobs in the lower half of the frame.
    TempBias,
    /// Thin bright strips within ±15° of horizontal.
    Specular,
    /// A constant occluder over the upper half of one box.
    Cutout,
    /// Like cutout, filled with a patch from elsewhere in the frame.
    Cutmix,
}

impl std::str::FromStr for ArtifactMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "temp_bias" => Ok(Self::TempBias),
            "specular" => Ok(Self::Specular),
            "cutout" => Ok(Self::Cutout),
            "cutmix" => Ok(Self::Cutmix),
            other => Err(Error::Config(format!("unknown artifact mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactOutcome {
    pub frame: ThermalFrame,
    pub boxes: Vec<LabeledBox>,
    /// False when an occluder was requested for a frame without boxes.
    pub applied: bool,
}

/// Adds `peak·exp(−r²/2σ²)` around `(cx, cy)`, clamped to 1.
pub fn add_temp_blob(frame: &ThermalFrame, cx: f64, cy: f64, sigma: f64, peak: f64) -> ThermalFrame {
    let w = frame.width;
    let mut out = frame.values().into_owned();
    let reach = (4.0 * sigma).ceil();
    let xa = (cx - reach).max(0.0) as usize;
    let ya = (cy - reach).max(0.0) as usize;
    let xb = ((cx + reach).max(0.0) as usize + 1).min(w);
    let yb = ((cy + reach).max(0.0) as usize + 1).min(frame.height);
    let k = 1.0 / (2.0 * sigma * sigma);
    for y in ya..yb {
        for x in xa..xb {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let v = &mut out[y * w + x];
            *v = (*v as f64 + peak * (-d2 * k).exp()).min(1.0) as f32;
        }
    }
    frame.derive(out)
}

fn add_specular_strip(frame: &ThermalFrame, rng: &mut impl Rng) -> ThermalFrame {
    let (w, h) = (frame.width, frame.height);
    let cx = rng.gen_range(0.0..w as f64);
    let cy = rng.gen_range(h as f64 / 2.0..h as f64);
    let angle = rng.gen_range(-15.0f64..=15.0).to_radians();
    let width = rng.gen_range(2.0..=6.0);
    let length = rng.gen_range(0.2..=0.5) * w as f64;
    let level = rng.gen_range(0.85f32..=1.0);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut out = frame.values().into_owned();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 - cx, y as f64 - cy);
            let along = px * dx + py * dy;
            let across = -px * dy + py * dx;
            if along.abs() <= length / 2.0 && across.abs() <= width / 2.0 {
                let v = &mut out[y * w + x];
                *v = v.max(level);
            }
        }
    }
    frame.derive(out)
}

/// Integer rectangle `(x0, y0, x1, y1)` (exclusive ends) covering a seeded
/// 20–50% of the upper half of `bbox`, or `None` if that half has no pixels.
pub fn cutout_region(bbox: &BBox, width: usize, height: usize, rng: &mut impl Rng) -> Option<(usize, usize, usize, usize)> {
    let fx0 = bbox.x1.max(0.0).ceil() as usize;
    let fx1 = (bbox.x2.min(width as f64).floor() as usize).min(width);
    let fy0 = bbox.y1.max(0.0).ceil() as usize;
    let fy1 = ((bbox.y1 + bbox.height() / 2.0).min(height as f64).floor() as usize).min(height);
    if fx1 <= fx0 || fy1 <= fy0 {
        return None;
    }
    let (hw, hh) = (fx1 - fx0, fy1 - fy0);
    let half_area = bbox.width() * bbox.height() / 2.0;
    let frac = rng.gen_range(0.2..=0.5);
    let target = frac * half_area;
    let aspect = hw as f64 / hh as f64;
    let mut rw = ((target * aspect).sqrt().round() as usize).clamp(1, hw);
    let mut rh = ((target / rw as f64).round() as usize).clamp(1, hh);
    // nudge back into the allowed area band after rounding
    let lo = 0.2 * half_area;
    let hi = 0.5 * half_area;
    while ((rw * rh) as f64) < lo && (rh < hh || rw < hw) {
        if rh < hh {
            rh += 1;
        } else {
            rw += 1;
        }
    }
    while ((rw * rh) as f64) > hi && (rh > 1 || rw > 1) {
        if rh > 1 {
            rh -= 1;
        } else {
            rw -= 1;
        }
    }
    let x0 = fx0 + rng.gen_range(0..=hw - rw);
    let y0 = fy0 + rng.gen_range(0..=hh - rh);
    Some((x0, y0, x0 + rw, y0 + rh))
}

/// Mean of the pixels within 4 px outside `bbox`; the frame mean if there are none.
fn ring_mean(values: &[f32], w: usize, h: usize, bbox: &BBox) -> f32 {
    let m = 4.0;
    let xa = (bbox.x1 - m).max(0.0).floor() as usize;
    let ya = (bbox.y1 - m).max(0.0).floor() as usize;
    let xb = ((bbox.x2 + m).ceil().max(0.0) as usize).min(w);
    let yb = ((bbox.y2 + m).ceil().max(0.0) as usize).min(h);
    let (mut sum, mut n) = (0.0f64, 0usize);
    for y in ya..yb {
        for x in xa..xb {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = px > bbox.x1 && px < bbox.x2 && py > bbox.y1 && py < bbox.y2;
            if !inside {
                sum += values[y * w + x] as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        let total: f64 = values.iter().map(|&v| v as f64).sum();
        (total / values.len().max(1) as f64) as f32
    } else {
        (sum / n as f64) as f32
    }
}

/// Applies one synthetic thermal artifact. Boxes are never changed.
pub fn thermal_artifacts(
    frame: &ThermalFrame,
    boxes: &[LabeledBox],
    mode: ArtifactMode,
    seed: u64,
) -> Result<ArtifactOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (frame.width, frame.height);
    if w == 0 || h == 0 {
        return Err(Error::Validation("artifact on an empty frame".into()));
    }
    let done = |f: ThermalFrame, applied: bool| ArtifactOutcome {
        frame: f,
        boxes: boxes.to_vec(),
        applied,
    };
    match mode {
        ArtifactMode::TempBias => {
            let count = rng.gen_range(1..=3);
            let mut f = frame.normalize(Default::default());
            for _ in 0..count {
                let cx = rng.gen_range(0..w) as f64;
                let cy = rng.gen_range(h / 2..h) as f64;
                let sigma = rng.gen_range(5.0..=25.0);
                let peak = rng.gen_range(0.5..=0.95);
                f = add_temp_blob(&f, cx, cy, sigma, peak);
            }
            Ok(done(f, true))
        }
        ArtifactMode::Specular => Ok(done(add_specular_strip(frame, &mut rng), true)),
        ArtifactMode::Cutout | ArtifactMode::Cutmix => {
            if boxes.is_empty() {
                return Ok(done(frame.normalize(Default::default()), false));
            }
            let target = &boxes[rng.gen_range(0..boxes.len())].bbox;
            let Some((x0, y0, x1, y1)) = cutout_region(target, w, h, &mut rng) else {
                return Ok(done(frame.normalize(Default::default()), false));
            };
            let src = frame.values();
            let mut out = src.clone().into_owned();
            if mode == ArtifactMode::Cutout {
                let fill = ring_mean(&src, w, h, target);
                for y in y0..y1 {
                    out[y * w + x0..y * w + x1].fill(fill);
                }
            } else {
                let (rw, rh) = (x1 - x0, y1 - y0);
                let sx = rng.gen_range(0..=w - rw);
                let sy = rng.gen_range(0..=h - rh);
                for y in 0..rh {
                    let s = (sy + y) * w + sx;
                    out[(y0 + y) * w + x0..(y0 + y) * w + x1].copy_from_slice(&src[s..s + rw]);
                }
            }
            Ok(done(frame.derive(out), true))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weather {
    Fog,
    Rain,
}

impl std::str::FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fog" => Ok(Self::Fog),
            "rain" => Ok(Self::Rain),
            other => Err(Error::Config(format!("unknown weather mode `{other}`"))),
        }
    }
}

/// Fog blends toward a seeded uniform haze level; rain pulls seeded thin
/// streaks toward the frame mean.
pub fn fog_rain_overlay(frame: &ThermalFrame, mode: Weather, intensity: f64, seed: u64) -> Result<ThermalFrame> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Validation(format!("weather intensity {intensity} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src = frame.values();
    match mode {
        Weather::Fog => {
            let haze = rng.gen_range(0.35..=0.65);
            let out = src
                .iter()
                .map(|&x| ((1.0 - intensity) * x as f64 + intensity * haze).clamp(0.0, 1.0) as f32)
                .collect();
            Ok(frame.derive(out))
        }
        Weather::Rain => {
            let (w, h) = (frame.width, frame.height);
            let mean = src.iter().map(|&v| v as f64).sum::<f64>() / src.len().max(1) as f64;
            let mut out = src.into_owned();
            let streaks = (intensity * (w * h) as f64 / 400.0).round() as usize;
            let strength = 0.6;
            for _ in 0..streaks {
                let mut x = rng.gen_range(0.0..w as f64);
                let mut y = rng.gen_range(0.0..h as f64);
                let len = rng.gen_range(6..=16);
                let slant = rng.gen_range(-0.3..=0.3);
                for _ in 0..len {
                    if x < 0.0 || x >= w as f64 || y >= h as f64 {
                        break;
                    }
                    let v = &mut out[y as usize * w + x as usize];
                    *v = (*v as f64 + (mean - *v as f64) * strength) as f32;
                    y += 1.0;
                    x += slant;
                }
            }
            Ok(frame.derive(out))
        }
    }
}

/// Runs the pipeline on one sample: mosaic (partners drawn from `pool`),
/// flip, brightness/contrast, fog, rain, warm blobs, strips, occluder.
pub fn augment_sample(sample: &Sample, pool: &[Sample], spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<Sample> {
    let mut s = sample.clone();
    let same_size: Vec<&Sample> = pool
        .iter()
        .filter(|p| (p.frame.width, p.frame.height) == (s.frame.width, s.frame.height))
        .collect();
    if rng.gen::<f64>() < spec.mosaic_p && !same_size.is_empty() {
        let mut four = vec![s.clone()];
        for _ in 0..3 {
            four.push(same_size[rng.gen_range(0..same_size.len())].clone());
        }
        s = mosaic4(&four, rng.gen())?;
    }
    if rng.gen::<f64>() < spec.hflip_p {
        let (f, b) = hflip_with_boxes(&s.frame, &s.boxes);
        s = Sample::new(f, b);
    }
    if spec.brightness_contrast_limit > 0.0 {
        let l = spec.brightness_contrast_limit;
        let b = rng.gen_range(-l..=l);
        let c = rng.gen_range(-l..=l);
        s.frame = brightness_contrast(&s.frame, b, c);
    }
    for (p, mode) in [(spec.fog_p, Weather::Fog), (spec.rain_p, Weather::Rain)] {
        if rng.gen::<f64>() < p {
            let intensity = rng.gen_range(0.0..=spec.weather_max_intensity);
            s.frame = fog_rain_overlay(&s.frame, mode, intensity, rng.gen())?;
        }
    }
    for (p, mode) in [(spec.temp_bias_p, ArtifactMode::TempBias), (spec.specular_p, ArtifactMode::Specular)] {
        if rng.gen::<f64>() < p {
            s.frame = thermal_artifacts(&s.frame, &s.boxes, mode, rng.gen())?.frame;
        }
    }
    if rng.gen::<f64>() < spec.cut_p {
        let mode = if rng.gen::<bool>() {
            ArtifactMode::Cutout
        } else {
            ArtifactMode::Cutmix
        };
        s.frame = thermal_artifacts(&s.frame, &s.boxes, mode, rng.gen())?.frame;
    }
    Ok(s)
}
