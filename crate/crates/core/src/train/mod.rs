//! Training objective, target assignment, optimiser and the training loop.

mod assign;
mod loss;
mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use assign::{assign_batch, assign_targets, level_for, LevelTargets, Positive, TargetGrids, LARGE_BOX, SMALL_BOX};
pub use loss::{
    bce_loss, bce_loss_grad, bce_with_logit, ciou_loss, ciou_with_grad, composite_loss, composite_loss_with_grad, iou,
    LossBreakdown, LossWeights,
};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};

use crate::error::{Error, Result};
use crate::geometry::LabeledBox;
use crate::imaging::{augment_sample, letterbox_to_stride, resize_with_boxes, AugmentationSpec, Sample};
use crate::model::{Model, RawPredictions};
use crate::tensor::{BnMode, Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Cosine,
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("cosine")
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Named optimiser presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 100 epochs, batch 32.
    Short,
    /// 200 epochs, batch 16, weight decay 5e-4.
    Long,
}

impl Preset {
    pub const fn name(self) -> &'static str {
        match self {
            Preset::Short => "short",
            Preset::Long => "long",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "short" => Ok(Preset::Short),
            "long" => Ok(Preset::Long),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected short or long)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub eta_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub bn_momentum: f64,
    pub loss: LossWeights,
    /// Network resolutions `(width, height)` cycled batch by batch.
    pub resolutions: Vec<(usize, usize)>,
    /// After this many epochs, batch-norm statistics are recomputed over
    /// the training set at every resolution and frozen; the remaining
    /// epochs train against the frozen statistics. `None` never freezes.
    pub bn_freeze_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Long)
    }
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            learning_rate: 1e-3,
            schedule: Schedule::Cosine,
            eta_min: 0.0,
            epochs: 200,
            batch_size: 16,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bn_momentum: 0.1,
            loss: LossWeights::default(),
            resolutions: vec![(140, 112)],
            bn_freeze_epoch: None,
        };
        match p {
            Preset::Long => base,
            Preset::Short => Self {
                epochs: 100,
                batch_size: 32,
                weight_decay: 0.0,
                ..base
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.eta_min.is_finite() && self.eta_min >= 0.0 && self.eta_min <= self.learning_rate) {
            return Err(Error::Config(format!("eta_min must lie in [0, learning_rate], got {}", self.eta_min)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("bn_momentum", self.bn_momentum)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&(w, h)| w == 0 || h == 0) {
            return Err(Error::Config("resolutions must list at least one non-empty WxH".into()));
        }
        if self.bn_freeze_epoch.is_some_and(|e| e >= self.epochs) {
            return Err(Error::Config("bn_freeze_epoch must be below epochs".into()));
        }
        self.loss.validate()
    }
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Learning rate of the epoch's first step.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Ground-truth boxes the assigner could not place, over all steps.
    pub dropped_boxes: usize,
}

/// Renders `epoch,total,obj,cls,loc,lr,seconds`. Wall-clock seconds are
/// left empty unless `timing` is set, so logs of equal runs are identical.
pub fn epoch_csv(records: &[EpochRecord], timing: bool) -> String {
    let mut s = String::from("epoch,total,obj,cls,loc,lr,seconds\n");
    for r in records {
        let _ = write!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.8},",
            r.epoch, r.loss.total, r.loss.obj, r.loss.cls, r.loss.loc, r.lr
        );
        if timing {
            let _ = write!(s, "{:.3}", r.seconds);
        }
        s.push('\n');
    }
    s
}

/// Turns samples into one network batch at `(width, height)` with their
/// padded-pixel boxes.
pub fn prepare_batch(samples: &[Sample], resolution: (usize, usize), multiple: usize) -> Result<(Tensor<f32>, Vec<Vec<LabeledBox>>)> {
    let (w, h) = resolution;
    let mut tensors = Vec::with_capacity(samples.len());
    let mut boxes = Vec::with_capacity(samples.len());
    for s in samples {
        let (frame, b) = if (s.frame.width, s.frame.height) == (w, h) {
            (s.frame.normalize(Default::default()), s.boxes.clone())
        } else {
            resize_with_boxes(&s.frame, &s.boxes, w, h)?
        };
        let (padded, b, _) = letterbox_to_stride(&frame, &b, multiple)?;
        let kept = b
            .into_iter()
            .filter(|lb| {
                let (cx, cy) = lb.bbox.center();
                lb.bbox.area() > 0.0 && cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64
            })
            .collect();
        tensors.push(Tensor::new([1, 1, padded.height, padded.width], padded.values().into_owned())?);
        boxes.push(kept);
    }
    Ok((Tensor::stack(&tensors)?, boxes))
}

/// Optimiser state that persists across steps.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub moments: IndexMap<String, AdamState>,
}

/// One forward/backward/update on a prepared batch. On any numeric failure
/// the model is left untouched.
pub fn train_step(
    model: &mut Model<f32>,
    input: Tensor<f32>,
    boxes: &[Vec<LabeledBox>],
    cfg: &TrainConfig,
    lr: f64,
    state: &mut OptimizerState,
    bn: BnMode,
) -> Result<(LossBreakdown, usize)> {
    let mcfg = model.config().clone();
    let padded = (input.width(), input.height());
    let targets = assign_batch(boxes, &mcfg, padded)?;
    let (breakdown, grads, stats) = {
        let mut g = Graph::recording();
        let x = g.leaf(input);
        let trace = model.trace(&mut g, x, bn)?;
        let preds = RawPredictions {
            levels: trace.levels.iter().map(|&v| g.value(v).clone()).collect(),
            strides: mcfg.strides.clone(),
        };
        let (breakdown, level_grads) = composite_loss_with_grad(&preds, &targets, &cfg.loss, mcfg.head_box_clamp)?;
        let mut gr = g.backward(trace.levels.iter().copied().zip(level_grads).collect())?;
        let grads: Vec<(String, Tensor<f32>)> = trace
            .params
            .iter()
            .map(|(name, v)| {
                let t = gr.take(*v).unwrap_or_else(|| Tensor::zeros(g.value(*v).dims()));
                (name.clone(), t)
            })
            .collect();
        (breakdown, grads, trace.bn_stats)
    };
    for (name, g) in &grads {
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in `{name}` at element {i}")));
        }
    }
    let adam = cfg.adam();
    for (name, g) in &grads {
        let p = model.weights_mut().get_mut(name).ok_or_else(|| Error::Load {
            name: name.clone(),
            msg: "missing".into(),
        })?;
        let st = state.moments.entry(name.clone()).or_default();
        adam_step(name, p, g, st, lr, &adam)?;
    }
    if bn == BnMode::Train {
        model.update_running_stats(&stats, cfg.bn_momentum)?;
    }
    Ok((breakdown, targets.dropped))
}

/// Trains `model` on `data`. Sample order, augmentation and resolution
/// choice are all driven by `cfg.seed`, so equal inputs give bit-identical
/// weights. `on_epoch` runs after every epoch (checkpointing, logging); a
/// numeric failure aborts with the model still holding the last good weights.
pub fn train(
    model: &mut Model<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    aug: &AugmentationSpec,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<f32>) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    aug.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size > data.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            data.len()
        )));
    }
    let multiple = model.config().max_stride();
    let batches = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(aug.seed ^ cfg.seed.rotate_left(32));
    let mut state = OptimizerState::default();
    let mut log = TrainLog::default();
    let mut step = 0;
    let mut bn = BnMode::Train;
    if cfg.bn_freeze_epoch == Some(0) {
        recalibrate_bn(model, data, &cfg.resolutions, cfg.batch_size)?;
        bn = BnMode::Infer;
    }
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 4];
        let mut matched = 0;
        let mut epoch_lr = None;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let res = cfg.resolutions[step % cfg.resolutions.len()];
            let samples = chunk
                .iter()
                .map(|&i| {
                    if aug.is_identity() {
                        Ok(data[i].clone())
                    } else {
                        let mut rng = ChaCha8Rng::seed_from_u64(aug_rng.gen());
                        augment_sample(&data[i], data, aug, &mut rng)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let (input, boxes) = prepare_batch(&samples, res, multiple)?;
            let lr = cosine_lr(step, total_steps, cfg.learning_rate, cfg.eta_min)?;
            epoch_lr.get_or_insert(lr);
            let (lb, dropped) = train_step(model, input, &boxes, cfg, lr, &mut state, bn).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            log.dropped_boxes += dropped;
            sums[0] += lb.total;
            sums[1] += lb.obj;
            sums[2] += lb.cls;
            sums[3] += lb.loc;
            matched += lb.matched_cell_count;
            step += 1;
        }
        let n = batches as f64;
        let record = EpochRecord {
            epoch,
            loss: LossBreakdown {
                total: sums[0] / n,
                obj: sums[1] / n,
                cls: sums[2] / n,
                loc: sums[3] / n,
                matched_cell_count: matched,
            },
            lr: epoch_lr.unwrap_or(cfg.learning_rate),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: total {:.5} obj {:.5} cls {:.5} loc {:.5}",
            record.loss.total,
            record.loss.obj,
            record.loss.cls,
            record.loss.loc
        );
        if cfg.bn_freeze_epoch == Some(epoch) {
            recalibrate_bn(model, data, &cfg.resolutions, cfg.batch_size)?;
            bn = BnMode::Infer;
        }
        on_epoch(&record, model)?;
        log.epochs.push(record);
    }
    Ok(log)
}

/// Sets the running batch-norm statistics to their pooled values over
/// `data` (in order, unaugmented) at every resolution.
pub fn recalibrate_bn(
    model: &mut Model<f32>,
    data: &[Sample],
    resolutions: &[(usize, usize)],
    batch_size: usize,
) -> Result<()> {
    let multiple = model.config().max_stride();
    let mut batches = Vec::new();
    for &res in resolutions {
        for chunk in data.chunks(batch_size.max(1)) {
            let (input, _) = prepare_batch(chunk, res, multiple)?;
            let mut g = Graph::inference();
            let x = g.leaf(input);
            batches.push(model.trace(&mut g, x, BnMode::Train)?.bn_stats);
        }
    }
    model.set_population_stats(&batches)
}
