//! `key = value` run configuration covering the model, training,
//! augmentation and inference settings.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::{AugmentationSpec, Normalization};
use crate::model::ModelConfig;
use crate::postprocess::{DEFAULT_NMS_IOU, DEFAULT_TAU};
use crate::train::{Preset, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    /// Network input `(width, height)`; `None` keeps the frame size.
    pub resolution: Option<(usize, usize)>,
    pub tau: f64,
    pub nms_iou: f64,
    pub normalization: Normalization,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            resolution: None,
            tau: DEFAULT_TAU,
            nms_iou: DEFAULT_NMS_IOU,
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentationSpec,
    pub detect: DetectConfig,
    pub class_names: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::reference(),
            train: TrainConfig::default(),
            augment: AugmentationSpec::default(),
            detect: DetectConfig::default(),
            class_names: super::default_class_names(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// `WxH`.
pub fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("resolution `{s}` is not WxH")))?;
    let w: usize = parse_value("resolution", w)?;
    let h: usize = parse_value("resolution", h)?;
    if w == 0 || h == 0 {
        return Err(Error::Config(format!("resolution `{s}` is empty")));
    }
    Ok((w, h))
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn count(key: &str, v: &str) -> Result<usize> {
    let n: i64 = parse_value(key, v)?;
    usize::try_from(n).map_err(|_| Error::Config(format!("`{key}` must be non-negative, got {n}")))
}

impl RunConfig {
    /// Applies one setting. `model` and `preset` replace whole sections.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let a = &mut self.augment;
        let d = &mut self.detect;
        match key {
            "model" => {
                *m = match v.trim() {
                    "reference" => ModelConfig::reference(),
                    "shrunk" => ModelConfig::shrunk(),
                    other => return Err(Error::Config(format!("`model`: unknown preset `{other}`"))),
                }
            }
            "preset" => *t = TrainConfig::preset(v.parse::<Preset>()?),
            "input_channels" => m.input_channels = count(key, v)?,
            "stem_channels" => m.stem_channels = count(key, v)?,
            "stage_channels" => m.stage_channels = parse_list(key, v)?,
            "blocks_per_stage" => m.blocks_per_stage = parse_list(key, v)?,
            "fpn_channels" => m.fpn_channels = count(key, v)?,
            "num_classes" => m.num_classes = count(key, v)?,
            "strides" => m.strides = parse_list(key, v)?,
            "activation" => m.activation = v.parse()?,
            "head_box_clamp" => m.head_box_clamp = parse_value(key, v)?,
            "bn_eps" => m.bn_eps = parse_value(key, v)?,
            "learning_rate" => t.learning_rate = parse_value(key, v)?,
            "schedule" => t.schedule = v.parse()?,
            "eta_min" => t.eta_min = parse_value(key, v)?,
            "epochs" => t.epochs = count(key, v)?,
            "batch_size" => t.batch_size = count(key, v)?,
            "weight_decay" => t.weight_decay = parse_value(key, v)?,
            "beta1" => t.beta1 = parse_value(key, v)?,
            "beta2" => t.beta2 = parse_value(key, v)?,
            "adam_eps" => t.adam_eps = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "bn_momentum" => t.bn_momentum = parse_value(key, v)?,
            "lambda_obj" => t.loss.lambda_obj = parse_value(key, v)?,
            "lambda_cls" => t.loss.lambda_cls = parse_value(key, v)?,
            "lambda_loc" => t.loss.lambda_loc = parse_value(key, v)?,
            "resolutions" => {
                t.resolutions = v.split(',').filter(|s| !s.trim().is_empty()).map(parse_resolution).collect::<Result<_>>()?
            }
            "bn_freeze_epoch" => {
                t.bn_freeze_epoch = match v.trim() {
                    "none" | "" => None,
                    n => Some(count(key, n)?),
                }
            }
            "hflip_p" => a.hflip_p = parse_value(key, v)?,
            "brightness_contrast_limit" => a.brightness_contrast_limit = parse_value(key, v)?,
            "mosaic_p" => a.mosaic_p = parse_value(key, v)?,
            "fog_p" => a.fog_p = parse_value(key, v)?,
            "rain_p" => a.rain_p = parse_value(key, v)?,
            "weather_max_intensity" => a.weather_max_intensity = parse_value(key, v)?,
            "temp_bias_p" => a.temp_bias_p = parse_value(key, v)?,
            "specular_p" => a.specular_p = parse_value(key, v)?,
            "cut_p" => a.cut_p = parse_value(key, v)?,
            "augment_seed" => a.seed = parse_value(key, v)?,
            "resolution" => {
                d.resolution = match v.trim() {
                    "native" | "" => None,
                    s => Some(parse_resolution(s)?),
                }
            }
            "tau" => d.tau = parse_value(key, v)?,
            "nms_iou" => d.nms_iou = parse_value(key, v)?,
            "normalization" => d.normalization = v.parse()?,
            "class_names" => self.class_names = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, t, a, d) = (&self.model, &self.train, &self.augment, &self.detect);
        let mut e = vec![
            ("input_channels", m.input_channels.to_string()),
            ("stem_channels", m.stem_channels.to_string()),
            ("stage_channels", join(&m.stage_channels)),
            ("blocks_per_stage", join(&m.blocks_per_stage)),
            ("fpn_channels", m.fpn_channels.to_string()),
            ("num_classes", m.num_classes.to_string()),
            ("strides", join(&m.strides)),
            ("activation", m.activation.to_string()),
            ("head_box_clamp", m.head_box_clamp.to_string()),
            ("bn_eps", m.bn_eps.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("schedule", t.schedule.to_string()),
            ("eta_min", t.eta_min.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("seed", t.seed.to_string()),
            ("bn_momentum", t.bn_momentum.to_string()),
            ("lambda_obj", t.loss.lambda_obj.to_string()),
            ("lambda_cls", t.loss.lambda_cls.to_string()),
            ("lambda_loc", t.loss.lambda_loc.to_string()),
            (
                "resolutions",
                t.resolutions.iter().map(|(w, h)| format!("{w}x{h}")).collect::<Vec<_>>().join(","),
            ),
            ("bn_freeze_epoch", t.bn_freeze_epoch.map_or_else(|| "none".to_string(), |e| e.to_string())),
            ("hflip_p", a.hflip_p.to_string()),
            ("brightness_contrast_limit", a.brightness_contrast_limit.to_string()),
            ("mosaic_p", a.mosaic_p.to_string()),
            ("fog_p", a.fog_p.to_string()),
            ("rain_p", a.rain_p.to_string()),
            ("weather_max_intensity", a.weather_max_intensity.to_string()),
            ("temp_bias_p", a.temp_bias_p.to_string()),
            ("specular_p", a.specular_p.to_string()),
            ("cut_p", a.cut_p.to_string()),
            ("augment_seed", a.seed.to_string()),
            (
                "resolution",
                d.resolution.map_or_else(|| "native".to_string(), |(w, h)| format!("{w}x{h}")),
            ),
            ("tau", d.tau.to_string()),
            ("nms_iou", d.nms_iou.to_string()),
            ("normalization", d.normalization.to_string()),
            ("class_names", self.class_names.join(",")),
        ];
        e.sort_by_key(|(k, _)| *k);
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        for (k, v) in [("tau", self.detect.tau), ("nms_iou", self.detect.nms_iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if self.class_names.len() != self.model.num_classes {
            return Err(Error::Config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.model.num_classes
            )));
        }
        Ok(())
    }

    /// Parses config text. `model` and `preset` lines apply before all
    /// others wherever they appear.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, got `{body}`"),
            })?;
            lines.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        let mut names_given = false;
        lines.sort_by_key(|(_, k, _)| !matches!(k.as_str(), "model" | "preset"));
        for (line, k, v) in &lines {
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
            names_given |= k == "class_names";
        }
        cfg.fit_class_names(names_given);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of `self` and revalidates.
    pub fn with_overrides<S: AsRef<str>>(mut self, overrides: &[S]) -> Result<Self> {
        let mut names_given = false;
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
            names_given |= k.trim() == "class_names";
        }
        self.fit_class_names(names_given);
        self.validate()?;
        Ok(self)
    }

    fn fit_class_names(&mut self, given: bool) {
        if !given && self.class_names.len() != self.model.num_classes {
            self.class_names = if self.model.num_classes == 2 {
                super::default_class_names()
            } else {
                (0..self.model.num_classes).map(|c| format!("class{c}")).collect()
            };
        }
    }

    /// Sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap().train, TrainConfig::preset(Preset::Long));
    }

    #[test]
    fn keys_and_errors() {
        let c = RunConfig::parse("lambda_loc = 5 # emphasis\nepochs=3").unwrap();
        assert_eq!(c.train.loss.lambda_loc, 5.0);
        assert_eq!(c.train.epochs, 3);
        assert!(matches!(RunConfig::parse("epochs = -1"), Err(Error::Config(_))));
        let err = RunConfig::parse("\nbogus = 1").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("bogus"));
        assert!(matches!(RunConfig::parse("epochs"), Err(Error::Parse { line: 1, .. })));
        let err = RunConfig::parse("tau = x").unwrap_err().to_string();
        assert!(err.contains("tau"));
    }

    #[test]
    fn preset_applies_first() {
        let c = RunConfig::parse("epochs = 7\npreset = short\nmodel = shrunk").unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.model.stem_channels, 8);
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::parse("resolutions = 140x112,640x512\nnum_classes = 1\nresolution = 96x77\nnormalization = fixed:0.1,0.9\nlearning_rate = 0.0003")
            .unwrap();
        assert_eq!(c.class_names, vec!["class0"]);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
}
