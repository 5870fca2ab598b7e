//! The detector network: stem, depthwise-separable backbone, three-level
//! feature pyramid and anchor-free heads.

mod arch;
mod config;
mod weights;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use arch::{separable_vs_standard_params, ParamKind, ParamSpec};
pub use config::{Activation, ModelConfig};
pub use weights::{WeightStore, MAGIC as WEIGHT_MAGIC, VERSION as WEIGHT_VERSION};

use arch::{Arch, ConvBnAct, ConvSpec, SepBlock};

use crate::error::{Error, Result};
use crate::tensor::{BatchStats, BnMode, Graph, Scalar, Tensor, Var};

/// Objectness bias at initialisation: logit of a 1% prior.
const OBJ_PRIOR_LOGIT: f64 = -4.59512;
const HEAD_INIT_STD: f64 = 0.01;

/// How to populate a freshly built model.
#[derive(Debug, Clone)]
pub enum Init {
    /// Kaiming-normal kernels (fan-in scaling) drawn from a seeded stream.
    Random { seed: u64 },
    FromWeights(WeightStore<f32>),
}

/// Per-level head outputs, finest level first. Each tensor is
/// `(N, 5 + classes, H_l, W_l)` with channels `[tx, ty, tw, th, obj, cls...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions<T: Scalar = f32> {
    pub levels: Vec<Tensor<T>>,
    pub strides: Vec<usize>,
}

impl<T: Scalar> RawPredictions<T> {
    pub fn batch(&self) -> usize {
        self.levels.first().map_or(0, Tensor::batch)
    }
}

/// Handles produced by [`Model::trace`].
pub struct Trace<T: Scalar> {
    pub levels: Vec<Var>,
    /// Learnable parameters as graph leaves, in layout order.
    pub params: Vec<(String, Var)>,
    /// Batch statistics of every batch-norm layer (training mode only).
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    arch: Arch,
    weights: WeightStore<T>,
}

/// Builds a model from a validated configuration.
pub fn build_model(config: ModelConfig, init: Init) -> Result<Model<f32>> {
    Model::build(config, init)
}

impl Model<f32> {
    pub fn build(config: ModelConfig, init: Init) -> Result<Self> {
        config.validate()?;
        let arch = Arch::new(&config);
        let specs = arch.param_specs();
        let weights = match init {
            Init::Random { seed } => random_weights(&specs, seed)?,
            Init::FromWeights(store) => {
                check_weights(&specs, &store)?;
                store
            }
        };
        Ok(Self {
            config,
            arch,
            weights,
        })
    }
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightStore<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightStore<T> {
        &mut self.weights
    }

    pub fn into_weights(self) -> WeightStore<T> {
        self.weights
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.arch.param_specs()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            arch: self.arch.clone(),
            weights: self.weights.cast(),
        }
    }

    /// Exact number of learnable scalars (running statistics excluded).
    pub fn param_count(&self) -> usize {
        param_count_for(&self.config)
    }

    /// Multiply-accumulate count for one `height × width` input.
    pub fn flop_estimate(&self, height: usize, width: usize) -> u64 {
        self.arch.macs(height, width)
    }

    /// Same estimate for the variant with standard 3×3 convolutions in
    /// place of every separable block.
    pub fn standard_flop_estimate(&self, height: usize, width: usize) -> u64 {
        self.arch.standard_macs(height, width)
    }

    /// Every depthwise-separable block with its standard-convolution
    /// counterpart.
    pub fn separable_layers(&self) -> Vec<SeparableLayer> {
        self.arch
            .separable_blocks()
            .map(|b| SeparableLayer {
                name: b.name(),
                cin: b.cin(),
                cout: b.cout(),
                stride: b.dw.conv.stride,
            })
            .collect()
    }

    fn check_input(&self, dims: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = dims;
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        let s = self.config.max_stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::Shape(format!(
                "input {w}x{h} is not divisible by the maximum stride {s}; letterbox it first"
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass (batch norm uses running statistics).
    pub fn forward(&self, input: &Tensor<T>) -> Result<RawPredictions<T>> {
        self.check_input(input.dims())?;
        input.ensure_finite("model input")?;
        let mut g = Graph::inference();
        let x = g.leaf(input.clone());
        let trace = self.trace(&mut g, x, BnMode::Infer)?;
        let levels: Vec<Tensor<T>> = trace.levels.iter().map(|&v| g.value(v).clone()).collect();
        for (l, t) in levels.iter().enumerate() {
            t.ensure_finite(&format!("level {l} predictions"))?;
        }
        Ok(RawPredictions {
            levels,
            strides: self.config.strides.clone(),
        })
    }

    /// Records the forward pass on `g`, with parameters as borrowed leaves.
    pub fn trace<'a>(&'a self, g: &mut Graph<'a, T>, input: Var, mode: BnMode) -> Result<Trace<T>> {
        self.check_input(g.value(input).dims())?;
        let mut b = Builder {
            g,
            model: self,
            mode,
            params: Vec::new(),
            bn_stats: Vec::new(),
        };
        let arch = &self.arch;
        let mut x = b.conv_bn_act(input, &arch.stem)?;
        let mut features = Vec::new();
        for stage in &arch.stages {
            for block in stage {
                x = b.sep_block(x, block)?;
            }
            features.push(x);
        }
        let lateral: Vec<Var> = arch
            .laterals
            .iter()
            .zip(&features[1..])
            .map(|(spec, &f)| b.conv(f, spec))
            .collect::<Result<_>>()?;
        // top-down: coarsest level first, each finer level adds the upsampled coarser one
        let mut merged = [lateral[2]; 3];
        for l in (0..2).rev() {
            let up = b.g.upsample2x(merged[l + 1]);
            merged[l] = b.g.add(lateral[l], up)?;
        }
        let mut levels = Vec::with_capacity(3);
        for l in 0..3 {
            let s = b.sep_block(merged[l], &arch.smooth[l])?;
            let h = b.sep_block(s, &arch.heads[l].block)?;
            levels.push(b.conv(h, &arch.heads[l].out)?);
        }
        Ok(Trace {
            levels,
            params: b.params,
            bn_stats: b.bn_stats,
        })
    }

    /// Folds training-batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)], momentum: f64) -> Result<()> {
        let m = T::of(momentum);
        for (prefix, s) in stats {
            let mean_name = format!("{prefix}.running_mean");
            let rm = self.weights.get_mut(&mean_name).ok_or_else(|| Error::Load {
                name: mean_name.clone(),
                msg: "missing".into(),
            })?;
            for (c, v) in rm.data_mut().iter_mut().enumerate() {
                *v = (T::one() - m) * *v + m * T::of(s.mean[c]);
            }
            let var_name = format!("{prefix}.running_var");
            let rv = self.weights.get_mut(&var_name).ok_or_else(|| Error::Load {
                name: var_name.clone(),
                msg: "missing".into(),
            })?;
            for (c, v) in rv.data_mut().iter_mut().enumerate() {
                *v = (T::one() - m) * *v + m * T::of(s.unbiased_var(c));
            }
        }
        Ok(())
    }

    /// Replaces every running estimate with statistics pooled over
    /// `batches` (one entry per forward pass).
    pub fn set_population_stats(&mut self, batches: &[Vec<(String, BatchStats<T>)>]) -> Result<()> {
        let Some(first) = batches.first() else {
            return Err(Error::Data("no batches to pool statistics from".into()));
        };
        for (layer, (prefix, s0)) in first.iter().enumerate() {
            let channels = s0.mean.len();
            let mut n = 0.0f64;
            let mut sum = vec![0.0f64; channels];
            let mut sq = vec![0.0f64; channels];
            for b in batches {
                let (name, s) = &b[layer];
                if name != prefix || s.mean.len() != channels {
                    return Err(Error::State(format!("batch statistics disagree at `{prefix}`")));
                }
                let k = s.count as f64;
                n += k;
                for c in 0..channels {
                    sum[c] += k * s.mean[c];
                    sq[c] += k * (s.var[c] + s.mean[c] * s.mean[c]);
                }
            }
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
            let var: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| ((q / n - m * m).max(0.0)) * unbias).collect();
            for (suffix, vals) in [("running_mean", &mean), ("running_var", &var)] {
                let name = format!("{prefix}.{suffix}");
                let t = self.weights.get_mut(&name).ok_or_else(|| Error::Load {
                    name: name.clone(),
                    msg: "missing".into(),
                })?;
                for (v, &x) in t.data_mut().iter_mut().zip(vals.iter()) {
                    *v = T::of(x);
                }
            }
        }
        Ok(())
    }
}

/// Shape of one depthwise-separable block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparableLayer {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

impl SeparableLayer {
    /// Kernel weights `(separable, standard 3×3)`.
    pub fn params(&self) -> (usize, usize) {
        separable_vs_standard_params(self.cin, self.cout)
    }

    /// Multiply-accumulates `(separable, standard 3×3)` on an `h × w` input.
    pub fn macs(&self, h: usize, w: usize) -> (u64, u64) {
        let ho = (h + 2 - 3) / self.stride + 1;
        let wo = (w + 2 - 3) / self.stride + 1;
        let px = (ho * wo) as u64;
        let (cin, cout) = (self.cin as u64, self.cout as u64);
        ((9 * cin + cin * cout) * px, 9 * cin * cout * px)
    }
}

pub fn param_count_for(config: &ModelConfig) -> usize {
    Arch::new(config)
        .param_specs()
        .iter()
        .filter(|s| s.kind.learnable())
        .map(|s| s.dims.iter().product::<usize>())
        .sum()
}

struct Builder<'a, 'g, T: Scalar> {
    g: &'g mut Graph<'a, T>,
    model: &'a Model<T>,
    mode: BnMode,
    params: Vec<(String, Var)>,
    bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, 'g, T: Scalar> Builder<'a, 'g, T> {
    fn param(&mut self, name: String) -> Result<Var> {
        let t = self.model.weights.require(&name)?;
        let v = self.g.leaf_ref(t);
        self.params.push((name, v));
        Ok(v)
    }

    fn conv(&mut self, x: Var, spec: &ConvSpec) -> Result<Var> {
        let w = self.param(spec.weight_name())?;
        let b = if spec.bias {
            Some(self.param(spec.bias_name())?)
        } else {
            None
        };
        self.g.conv2d(x, w, b, spec.geometry())
    }

    fn conv_bn_act(&mut self, x: Var, layer: &ConvBnAct) -> Result<Var> {
        let y = self.conv(x, &layer.conv)?;
        let gamma = self.param(format!("{}.gamma", layer.bn))?;
        let beta = self.param(format!("{}.beta", layer.bn))?;
        let eps = T::of(self.model.config.bn_eps);
        let y = match self.mode {
            BnMode::Train => {
                let (v, stats) = self.g.batch_norm_train(y, gamma, beta, eps)?;
                self.bn_stats.push((layer.bn.clone(), stats));
                v
            }
            BnMode::Infer => {
                let w = &self.model.weights;
                let rm = w.require(&format!("{}.running_mean", layer.bn))?.data();
                let rv = w.require(&format!("{}.running_var", layer.bn))?.data();
                self.g.batch_norm_infer(y, gamma, beta, rm, rv, eps)?
            }
        };
        Ok(match self.model.config.activation {
            Activation::Silu => self.g.silu(y),
            Activation::Relu => self.g.relu(y),
        })
    }

    fn sep_block(&mut self, x: Var, block: &SepBlock) -> Result<Var> {
        let y = self.conv_bn_act(x, &block.dw)?;
        self.conv_bn_act(y, &block.pw)
    }
}

fn random_weights(specs: &[ParamSpec], seed: u64) -> Result<WeightStore<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in specs {
        let n: usize = spec.dims.iter().product();
        let data: Vec<f32> = match spec.kind {
            ParamKind::Kernel { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            }
            ParamKind::HeadKernel => {
                let normal = Normal::new(0.0, HEAD_INIT_STD).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
            }
            ParamKind::HeadBias => (0..n)
                .map(|c| if c == 4 { OBJ_PRIOR_LOGIT as f32 } else { 0.0 })
                .collect(),
            ParamKind::Gamma | ParamKind::RunningVar => vec![1.0; n],
            ParamKind::Bias | ParamKind::Beta | ParamKind::RunningMean => vec![0.0; n],
        };
        store.insert(spec.name.clone(), Tensor::new(spec.dims, data)?)?;
    }
    Ok(store)
}

fn check_weights(specs: &[ParamSpec], store: &WeightStore<f32>) -> Result<()> {
    for spec in specs {
        let t = store.get(&spec.name).ok_or_else(|| Error::Load {
            name: spec.name.clone(),
            msg: "missing from weight store".into(),
        })?;
        if t.dims() != spec.dims {
            return Err(Error::Load {
                name: spec.name.clone(),
                msg: format!("shape {:?}, config expects {:?}", t.dims(), spec.dims),
            });
        }
    }
    if store.len() != specs.len() {
        let extra = store
            .names()
            .find(|n| !specs.iter().any(|s| s.name == *n))
            .unwrap_or("?")
            .to_string();
        return Err(Error::Load {
            name: extra,
            msg: "not part of this configuration".into(),
        });
    }
    Ok(())
}
