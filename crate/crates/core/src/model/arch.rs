//! Layer layout derived from a [`ModelConfig`]. The same description drives
//! parameter naming, initialisation, counting, FLOP estimates and the
//! forward pass, so they cannot drift apart.

use super::config::ModelConfig;
use crate::tensor::ConvGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution kernel with the given fan-in.
    Kernel { fan_in: usize },
    /// Kernel of a prediction layer.
    HeadKernel,
    Bias,
    /// Prediction-layer bias; channel 4 is objectness.
    HeadBias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: [usize; 4],
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub groups: usize,
    pub bias: bool,
    pub head: bool,
}

impl ConvSpec {
    fn new(name: String, cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> Self {
        Self {
            name,
            cin,
            cout,
            k,
            stride,
            groups,
            bias: false,
            head: false,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry::new(self.stride, self.k / 2, self.groups)
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.k / 2;
        (
            (h + 2 * p - self.k) / self.stride + 1,
            (w + 2 * p - self.k) / self.stride + 1,
        )
    }

    /// Multiply-accumulates on an `h × w` input; returns the output size too.
    pub fn macs(&self, h: usize, w: usize) -> (u64, usize, usize) {
        let (ho, wo) = self.out_size(h, w);
        let per_out = (self.cin / self.groups * self.k * self.k) as u64;
        (per_out * (self.cout * ho * wo) as u64, ho, wo)
    }

    fn params(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = self.cin / self.groups * self.k * self.k;
        out.push(ParamSpec {
            name: self.weight_name(),
            dims: [self.cout, self.cin / self.groups, self.k, self.k],
            kind: if self.head {
                ParamKind::HeadKernel
            } else {
                ParamKind::Kernel { fan_in }
            },
        });
        if self.bias {
            out.push(ParamSpec {
                name: self.bias_name(),
                dims: [self.cout, 1, 1, 1],
                kind: if self.head { ParamKind::HeadBias } else { ParamKind::Bias },
            });
        }
    }
}

/// Convolution → batch norm → activation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvBnAct {
    pub conv: ConvSpec,
    pub bn: String,
}

impl ConvBnAct {
    fn new(prefix: &str, layer: &str, cin: usize, cout: usize, k: usize, stride: usize, groups: usize) -> Self {
        Self {
            conv: ConvSpec::new(format!("{prefix}.{layer}"), cin, cout, k, stride, groups),
            bn: format!("{prefix}.{layer}_bn"),
        }
    }

    fn params(&self, out: &mut Vec<ParamSpec>) {
        self.conv.params(out);
        let c = self.conv.cout;
        for (suffix, kind) in [
            ("gamma", ParamKind::Gamma),
            ("beta", ParamKind::Beta),
            ("running_mean", ParamKind::RunningMean),
            ("running_var", ParamKind::RunningVar),
        ] {
            out.push(ParamSpec {
                name: format!("{}.{suffix}", self.bn),
                dims: [c, 1, 1, 1],
                kind,
            });
        }
    }
}

/// Depthwise 3×3 → BN → act → pointwise 1×1 → BN → act.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SepBlock {
    pub dw: ConvBnAct,
    pub pw: ConvBnAct,
}

impl SepBlock {
    fn new(prefix: &str, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            dw: ConvBnAct::new(prefix, "dw", cin, cin, 3, stride, cin),
            pw: ConvBnAct::new(prefix, "pw", cin, cout, 1, 1, 1),
        }
    }

    fn params(&self, out: &mut Vec<ParamSpec>) {
        self.dw.params(out);
        self.pw.params(out);
    }

    fn macs(&self, h: usize, w: usize) -> (u64, usize, usize) {
        let (a, ho, wo) = self.dw.conv.macs(h, w);
        let (b, ..) = self.pw.conv.macs(ho, wo);
        (a + b, ho, wo)
    }

    /// The same block as one standard 3×3 convolution.
    fn standard_macs(&self, h: usize, w: usize) -> (u64, usize, usize) {
        let full = ConvSpec::new(String::new(), self.dw.conv.cin, self.pw.conv.cout, 3, self.dw.conv.stride, 1);
        full.macs(h, w)
    }

    /// Prefix shared by the block's layers, e.g. `stage2.block1`.
    pub fn name(&self) -> String {
        self.dw.bn.trim_end_matches(".dw_bn").to_string()
    }

    pub fn cin(&self) -> usize {
        self.dw.conv.cin
    }

    pub fn cout(&self) -> usize {
        self.pw.conv.cout
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    pub block: SepBlock,
    pub out: ConvSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Arch {
    pub stem: ConvBnAct,
    pub stages: Vec<Vec<SepBlock>>,
    pub laterals: Vec<ConvSpec>,
    pub smooth: Vec<SepBlock>,
    pub heads: Vec<Head>,
}

impl Arch {
    pub fn new(cfg: &ModelConfig) -> Self {
        let stem = ConvBnAct::new("stem", "conv", cfg.input_channels, cfg.stem_channels, 3, 2, 1);
        let mut stages = Vec::new();
        let mut prev = cfg.stem_channels;
        for (s, (&c, &blocks)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
            let stage = (0..blocks)
                .map(|b| {
                    let prefix = format!("stage{}.block{}", s + 1, b);
                    if b == 0 {
                        SepBlock::new(&prefix, prev, c, 2)
                    } else {
                        SepBlock::new(&prefix, c, c, 1)
                    }
                })
                .collect();
            stages.push(stage);
            prev = c;
        }
        let f = cfg.fpn_channels;
        let laterals = cfg.stage_channels[1..]
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let mut conv = ConvSpec::new(format!("fpn.lateral{l}"), c, f, 1, 1, 1);
                conv.bias = true;
                conv
            })
            .collect();
        let smooth = (0..3).map(|l| SepBlock::new(&format!("fpn.smooth{l}"), f, f, 1)).collect();
        let heads = (0..3)
            .map(|l| {
                let mut out = ConvSpec::new(format!("head{l}.out"), f, cfg.head_outputs(), 1, 1, 1);
                out.bias = true;
                out.head = true;
                Head {
                    block: SepBlock::new(&format!("head{l}.block"), f, f, 1),
                    out,
                }
            })
            .collect();
        Self {
            stem,
            stages,
            laterals,
            smooth,
            heads,
        }
    }

    /// Every tensor the model owns, in initialisation order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.stem.params(&mut out);
        for block in self.stages.iter().flatten() {
            block.params(&mut out);
        }
        for lat in &self.laterals {
            lat.params(&mut out);
        }
        for block in &self.smooth {
            block.params(&mut out);
        }
        for head in &self.heads {
            head.block.params(&mut out);
            head.out.params(&mut out);
        }
        out
    }

    fn count_macs(&self, h: usize, w: usize, standard: bool) -> u64 {
        let (mut total, mut ch, mut cw) = self.stem.conv.macs(h, w);
        let mut level_sizes = Vec::new();
        for stage in &self.stages {
            for block in stage {
                let (m, ho, wo) = if standard {
                    block.standard_macs(ch, cw)
                } else {
                    block.macs(ch, cw)
                };
                total += m;
                ch = ho;
                cw = wo;
            }
            level_sizes.push((ch, cw));
        }
        for (lat, &(lh, lw)) in self.laterals.iter().zip(&level_sizes[1..]) {
            total += lat.macs(lh, lw).0;
        }
        for (l, &(lh, lw)) in level_sizes[1..].iter().enumerate() {
            let sep = |b: &SepBlock| {
                if standard {
                    b.standard_macs(lh, lw).0
                } else {
                    b.macs(lh, lw).0
                }
            };
            total += sep(&self.smooth[l]);
            total += sep(&self.heads[l].block);
            total += self.heads[l].out.macs(lh, lw).0;
        }
        total
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.count_macs(h, w, false)
    }

    /// MACs of the same network with every separable block replaced by a
    /// standard 3×3 convolution.
    pub fn standard_macs(&self, h: usize, w: usize) -> u64 {
        self.count_macs(h, w, true)
    }

    pub fn separable_blocks(&self) -> impl Iterator<Item = &SepBlock> {
        self.stages
            .iter()
            .flatten()
            .chain(&self.smooth)
            .chain(self.heads.iter().map(|h| &h.block))
    }
}

/// Kernel weights of a separable block vs the standard 3×3 convolution it
/// replaces (`(separable, standard)`).
pub fn separable_vs_standard_params(cin: usize, cout: usize) -> (usize, usize) {
    (9 * cin + cin * cout, 9 * cin * cout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_counts() {
        assert_eq!(separable_vs_standard_params(64, 64).0 - 64 * 64, 576);
        assert_eq!(9 * 64 * 64, 36_864);
        let (sep, std) = separable_vs_standard_params(64, 128);
        assert_eq!((sep, std), (8_768, 73_728));
        let reduction = 1.0 - sep as f64 / std as f64;
        assert!((reduction - 0.881).abs() < 1e-3);
    }

    #[test]
    fn names_are_unique() {
        let arch = Arch::new(&ModelConfig::reference());
        let specs = arch.param_specs();
        let mut names: Vec<_> = specs.iter().map(|s| s.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        assert!(specs.iter().any(|s| s.name == "stage3.block2.pw_bn.gamma"));
    }
}
