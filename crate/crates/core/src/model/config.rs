use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "silu" | "swish" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
///
/// The topology is fixed: a stride-2 stem, four stages of depthwise-separable
/// blocks (each stage opens with a stride-2 block), a top-down pyramid over
/// the last three stages and one anchor-free head per pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub fpn_channels: usize,
    pub num_classes: usize,
    /// Output strides of the pyramid levels, finest first.
    pub strides: Vec<usize>,
    pub activation: Activation,
    /// Bound applied to the width/height logits before `exp`.
    pub head_box_clamp: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ModelConfig {
    /// The shipped configuration (~1.1M learnable parameters).
    pub fn reference() -> Self {
        Self {
            input_channels: 1,
            stem_channels: 32,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![1, 2, 3, 3],
            fpn_channels: 128,
            num_classes: 2,
            strides: vec![8, 16, 32],
            activation: Activation::Silu,
            head_box_clamp: 8.0,
            bn_eps: 1e-5,
        }
    }

    /// Same topology with channels `[8, 16, 32, 64]`, used for desk-scale
    /// training runs and gradient checks.
    pub fn shrunk() -> Self {
        Self {
            stem_channels: 8,
            stage_channels: vec![8, 16, 32, 64],
            fpn_channels: 32,
            ..Self::reference()
        }
    }

    /// Number of channels a prediction map carries: box(4) + objectness + classes.
    pub fn head_outputs(&self) -> usize {
        5 + self.num_classes
    }

    pub fn max_stride(&self) -> usize {
        self.strides.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_channels", self.input_channels),
            ("stem_channels", self.stem_channels),
            ("fpn_channels", self.fpn_channels),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return Err(Error::Config(
                "stage_channels must list four positive channel counts".into(),
            ));
        }
        if self.blocks_per_stage.len() != 4 || self.blocks_per_stage.contains(&0) {
            return Err(Error::Config(
                "blocks_per_stage must list four positive block counts".into(),
            ));
        }
        if self.strides.len() != 3 {
            return Err(Error::Config("strides must list three pyramid strides".into()));
        }
        for w in self.strides.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("strides must be strictly increasing".into()));
            }
        }
        if self.strides.iter().any(|s| !s.is_power_of_two()) {
            return Err(Error::Config("strides must be powers of two".into()));
        }
        // stem (2) and four stride-2 stage entries put stages 2..4 at 8/16/32
        if self.strides != [8, 16, 32] {
            return Err(Error::Config(format!(
                "strides {:?} do not match the backbone, which produces 8, 16 and 32",
                self.strides
            )));
        }
        if !(self.head_box_clamp.is_finite() && self.head_box_clamp > 0.0) {
            return Err(Error::Config("head_box_clamp must be positive and finite".into()));
        }
        if !(self.bn_eps.is_finite() && self.bn_eps > 0.0) {
            return Err(Error::Config("bn_eps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::reference().validate().unwrap();
        ModelConfig::shrunk().validate().unwrap();
    }

    #[test]
    fn stride_rules() {
        let mut c = ModelConfig::reference();
        c.strides = vec![8, 8, 32];
        assert!(c.validate().is_err());
        c.strides = vec![8, 12, 32];
        assert!(c.validate().is_err());
        c.strides = vec![4, 8, 16];
        assert!(c.validate().is_err());
    }

    #[test]
    fn activation_parse() {
        assert_eq!("SiLU".parse::<Activation>().unwrap(), Activation::Silu);
        assert!("gelu".parse::<Activation>().is_err());
    }
}
