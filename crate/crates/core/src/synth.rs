//! Synthetic thermal scenes: warm pedestrian silhouettes on a cool
//! background, optional hot distractor blobs, and moving sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{BBox, LabeledBox};
use crate::imaging::{Sample, ThermalFrame};

pub const CHILD: usize = 0;
pub const ADULT: usize = 1;

/// Tag carried by frames rendered with hot distractors.
pub const HOT_BG_TAG: &str = "hot-bg";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of pedestrians per frame.
    pub targets: (usize, usize),
    /// Silhouette height ranges in pixels.
    pub child_height: (f64, f64),
    pub adult_height: (f64, f64),
    /// Box width over box height.
    pub aspect: f64,
    /// Inclusive range of distractor blobs per frame.
    pub hot_blobs: (usize, usize),
    pub noise_std: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 512,
            targets: (1, 3),
            child_height: (120.0, 150.0),
            adult_height: (190.0, 240.0),
            aspect: 0.4,
            hot_blobs: (0, 0),
            noise_std: 0.02,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config("synthetic frames must be at least 32x32".into()));
        }
        if self.targets.0 > self.targets.1 || self.hot_blobs.0 > self.hot_blobs.1 {
            return Err(Error::Config("count ranges must have min <= max".into()));
        }
        for (lo, hi) in [self.child_height, self.adult_height] {
            if !(lo > 0.0 && lo <= hi && hi < self.height as f64) {
                return Err(Error::Config(format!("height range ({lo}, {hi}) does not fit the frame")));
            }
        }
        let widest = self.adult_height.1.max(self.child_height.1) * self.aspect;
        if !(self.aspect > 0.0) || widest * self.targets.1.max(1) as f64 > self.width as f64 {
            return Err(Error::Config("targets do not fit side by side".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pedestrian {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
    /// Peak body intensity.
    pub temp: f64,
}

impl Pedestrian {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }
}

/// Isotropic Gaussian hot spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotBlob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub peak: f64,
}

fn smoothstep(edge: f64, d: f64) -> f64 {
    // 1 inside, 0 beyond `edge` pixels past the boundary
    (1.0 - d / edge).clamp(0.0, 1.0)
}

/// Renders a frame. The background is a cool vertical gradient with
/// Gaussian sensor noise drawn from `seed`.
pub fn render(cfg: &SceneConfig, peds: &[Pedestrian], blobs: &[HotBlob], seed: u64) -> Result<Sample> {
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.gen_range(0.18..0.3);
    let tilt = rng.gen_range(0.0..0.1);
    let mut data: Vec<f64> = (0..w * h).map(|i| base + tilt * (i / w) as f64 / h as f64).collect();
    for b in blobs {
        let reach = 3.5 * b.sigma;
        let k = 1.0 / (2.0 * b.sigma * b.sigma);
        let (xa, xb) = ((b.cx - reach).max(0.0) as usize, ((b.cx + reach) as usize + 1).min(w));
        let (ya, yb) = ((b.cy - reach).max(0.0) as usize, ((b.cy + reach) as usize + 1).min(h));
        for y in ya..yb {
            for x in xa..xb {
                let d2 = (x as f64 - b.cx).powi(2) + (y as f64 - b.cy).powi(2);
                let v = &mut data[y * w + x];
                *v = v.max(b.peak * (-d2 * k).exp() + base * (1.0 - (-d2 * k).exp()));
            }
        }
    }
    for p in peds {
        let bb = p.bbox();
        let head_r = 0.11 * p.h;
        let head = (p.cx, bb.y1 + head_r);
        // torso and legs as one ellipse below the head
        let body_top = bb.y1 + 1.6 * head_r;
        let body = (p.cx, (body_top + bb.y2) / 2.0, p.w / 2.0, (bb.y2 - body_top) / 2.0);
        let (xa, xb) = ((bb.x1 - 2.0).max(0.0) as usize, ((bb.x2 + 2.0) as usize + 1).min(w));
        let (ya, yb) = ((bb.y1 - 2.0).max(0.0) as usize, ((bb.y2 + 2.0) as usize + 1).min(h));
        for y in ya..yb {
            for x in xa..xb {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let dh = ((fx - head.0).powi(2) + (fy - head.1).powi(2)).sqrt() - head_r;
                let r = (((fx - body.0) / body.2).powi(2) + ((fy - body.1) / body.3).powi(2)).sqrt();
                let db = (r - 1.0) * body.2.min(body.3);
                let cover = smoothstep(1.5, dh.max(0.0)).max(smoothstep(1.5, db.max(0.0)));
                if cover > 0.0 {
                    let v = &mut data[y * w + x];
                    *v = *v * (1.0 - cover) + p.temp * cover;
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let n = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut data {
            *v += n.sample(&mut rng);
        }
    }
    let pixels = data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    let frame = ThermalFrame::from_normalized(w, h, pixels)?;
    let boxes = peds
        .iter()
        .map(|p| LabeledBox::new(p.class_id, p.bbox().clip(0.0, 0.0, w as f64, h as f64)))
        .collect();
    Ok(Sample::new(frame, boxes))
}

fn draw_pedestrian(cfg: &SceneConfig, rng: &mut ChaCha8Rng, lane: (f64, f64)) -> Pedestrian {
    let class_id = if rng.gen_bool(0.5) { CHILD } else { ADULT };
    let (lo, hi) = if class_id == CHILD { cfg.child_height } else { cfg.adult_height };
    let ph = rng.gen_range(lo..=hi).round();
    let pw = (ph * cfg.aspect).round();
    let (fw, fh) = (cfg.width as f64, cfg.height as f64);
    let cx = rng.gen_range((lane.0 + pw / 2.0)..=(lane.1 - pw / 2.0).max(lane.0 + pw / 2.0));
    let cy = rng.gen_range((ph / 2.0 + 1.0)..=(fh - ph / 2.0 - 1.0));
    Pedestrian {
        class_id,
        cx: cx.clamp(pw / 2.0, fw - pw / 2.0).round(),
        cy: cy.round(),
        h: ph,
        w: pw,
        temp: rng.gen_range(0.78..0.92),
    }
}

fn lanes(cfg: &SceneConfig, n: usize) -> Vec<(f64, f64)> {
    let step = cfg.width as f64 / n.max(1) as f64;
    (0..n).map(|i| (i as f64 * step, (i + 1) as f64 * step)).collect()
}

fn draw_blobs(cfg: &SceneConfig, rng: &mut ChaCha8Rng, peds: &[Pedestrian]) -> Vec<HotBlob> {
    let n = rng.gen_range(cfg.hot_blobs.0..=cfg.hot_blobs.1);
    let scale = cfg.height as f64 / 512.0;
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < 200 * n.max(1) {
        tries += 1;
        let sigma = rng.gen_range(8.0..30.0) * scale;
        let blob = HotBlob {
            cx: rng.gen_range(0.0..cfg.width as f64),
            cy: rng.gen_range(0.0..cfg.height as f64),
            sigma,
            peak: rng.gen_range(0.8..0.95),
        };
        let clear = peds.iter().all(|p| {
            let b = p.bbox();
            let r = 2.0 * sigma;
            blob.cx + r < b.x1 || blob.cx - r > b.x2 || blob.cy + r < b.y1 || blob.cy - r > b.y2
        });
        if clear {
            out.push(blob);
        }
    }
    out
}

/// One random frame; frames with distractors carry [`HOT_BG_TAG`].
pub fn random_frame(cfg: &SceneConfig, seed: u64) -> Result<(Sample, Vec<String>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.targets.0..=cfg.targets.1);
    let peds: Vec<Pedestrian> = lanes(cfg, n).into_iter().map(|l| draw_pedestrian(cfg, &mut rng, l)).collect();
    let blobs = draw_blobs(cfg, &mut rng, &peds);
    let tags = if blobs.is_empty() { vec![] } else { vec![HOT_BG_TAG.to_string()] };
    let mut s = render(cfg, &peds, &blobs, rng.gen())?;
    s.frame.source_id = format!("synth{seed}");
    Ok((s, tags))
}

/// `frames` consecutive frames of the same walkers, each pacing back and
/// forth inside its own lane.
pub fn sequence(cfg: &SceneConfig, frames: usize, seed: u64) -> Result<Vec<(Sample, Vec<String>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.targets.0.max(1)..=cfg.targets.1.max(1));
    let lanes = lanes(cfg, n);
    let walkers: Vec<(Pedestrian, f64)> = lanes
        .iter()
        .map(|&l| (draw_pedestrian(cfg, &mut rng, l), rng.gen_range(1.5..4.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }))
        .collect();
    let blobs = draw_blobs(cfg, &mut rng, &[]);
    let noise_seed: u64 = rng.gen();
    (0..frames)
        .map(|t| {
            let peds: Vec<Pedestrian> = walkers
                .iter()
                .zip(&lanes)
                .map(|((p, v), lane)| {
                    let (lo, hi) = (lane.0 + p.w / 2.0, lane.1 - p.w / 2.0);
                    let span = (hi - lo).max(0.0);
                    // ping-pong along the lane
                    let raw = (p.cx - lo) + v * t as f64;
                    let period = 2.0 * span;
                    let x = if period > 0.0 {
                        let m = raw.rem_euclid(period);
                        if m <= span { m } else { period - m }
                    } else {
                        0.0
                    };
                    Pedestrian { cx: (lo + x).round(), ..*p }
                })
                .collect();
            let visible: Vec<HotBlob> = blobs
                .iter()
                .copied()
                .filter(|b| {
                    peds.iter().all(|p| {
                        let bb = p.bbox();
                        let r = 2.0 * b.sigma;
                        b.cx + r < bb.x1 || b.cx - r > bb.x2 || b.cy + r < bb.y1 || b.cy - r > bb.y2
                    })
                })
                .collect();
            let tags = if visible.is_empty() { vec![] } else { vec![HOT_BG_TAG.to_string()] };
            let mut s = render(cfg, &peds, &visible, noise_seed.wrapping_add(t as u64))?;
            s.frame.source_id = format!("seq{seed}_{t:04}");
            s.frame.timestamp = Some(t as f64 / 30.0);
            Ok((s, tags))
        })
        .collect()
}
