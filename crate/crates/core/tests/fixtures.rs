//! Hand-computed values and the constants the detector is published with.

use ltv_core::eval::{average_precision, DEFAULT_MATCH_IOU};
use ltv_core::geometry::{encode_cell, iou, BBox, LabeledBox};
use ltv_core::imaging::bilinear_resample;
use ltv_core::model::{build_model, Init, ModelConfig, RawPredictions};
use ltv_core::postprocess::DEFAULT_TAU;
use ltv_core::tensor::Tensor;
use ltv_core::train::{
    assign_batch, bce_loss, bce_loss_grad, ciou_loss, composite_loss, cosine_lr, LossBreakdown, LossWeights, Preset,
    TrainConfig,
};

const TOL: f64 = 1e-9;

fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
    BBox::new(x1, y1, x2, y2).unwrap()
}

#[test]
fn iou_of_offset_squares_is_one_seventh() {
    // overlap 1, union 4 + 4 - 1
    let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)).unwrap();
    assert!((v - 1.0 / 7.0).abs() < TOL);
}

#[test]
fn ciou_of_concentric_half_size_box() {
    // IoU = 1/4, centres coincide, aspect ratios equal
    let v = ciou_loss(&b(2.0, 1.0, 6.0, 3.0), &b(0.0, 0.0, 8.0, 4.0)).unwrap();
    assert!((v - 0.75).abs() < TOL, "{v}");
}

#[test]
fn bce_at_zero_logit() {
    let z = Tensor::<f64>::zeros([1, 1, 1, 1]);
    let half = Tensor::full([1, 1, 1, 1], 0.5);
    let one = Tensor::full([1, 1, 1, 1], 1.0);
    assert!((bce_loss(&z, &half).unwrap() - std::f64::consts::LN_2).abs() < TOL);
    assert!((bce_loss(&z, &one).unwrap() - std::f64::consts::LN_2).abs() < TOL);
    assert!((bce_loss_grad(&z, &one).unwrap().data()[0] + 0.5).abs() < TOL);
}

#[test]
fn bilinear_two_by_two_to_one_pixel_is_the_mean() {
    let out = bilinear_resample(&[0.0, 10.0, 20.0, 30.0], 2, 2, 1, 1).unwrap();
    assert!((out[0] - 15.0).abs() < TOL);
}

#[test]
fn ap_ordering_cases() {
    assert!((average_precision(&[(0.9, true)], 1).unwrap() - 1.0).abs() < TOL);
    assert!((average_precision(&[(0.9, true), (0.8, false)], 1).unwrap() - 1.0).abs() < TOL);
    assert!((average_precision(&[(0.9, false), (0.8, true)], 1).unwrap() - 0.5).abs() < TOL);
}

#[test]
fn weighted_total_example() {
    let l = LossBreakdown::combine(0.2, 0.1, 0.3, 1, &LossWeights::default());
    assert!((l.total - 1.8).abs() < TOL);
}

#[test]
fn saturated_predictions_have_near_zero_loss() {
    let cfg = ModelConfig::shrunk();
    let boxes = vec![vec![
        LabeledBox::new(0, b(10.0, 12.0, 30.0, 50.0)),
        LabeledBox::new(1, b(40.0, 20.0, 110.0, 100.0)),
    ]];
    let targets = assign_batch(&boxes, &cfg, (128, 128)).unwrap();
    assert_eq!(targets.positive_count(), 2);
    let levels = targets
        .levels
        .iter()
        .map(|lt| {
            let mut t = Tensor::<f64>::full([1, cfg.head_outputs(), lt.height, lt.width], -20.0);
            for p in &lt.positives {
                let enc = encode_cell(&p.bbox, p.row, p.col, lt.stride as f64);
                for (k, v) in enc.iter().enumerate() {
                    t.set(0, k, p.row, p.col, *v);
                }
                t.set(0, 4, p.row, p.col, 20.0);
                t.set(0, 5 + p.class_id, p.row, p.col, 20.0);
            }
            t
        })
        .collect();
    let preds = RawPredictions {
        levels,
        strides: cfg.strides.clone(),
    };
    let l = composite_loss(&preds, &targets, &LossWeights::default(), cfg.head_box_clamp).unwrap();
    assert!(l.total < 1e-6, "{l:?}");
}

#[test]
fn cosine_schedule_endpoints() {
    assert!((cosine_lr(0, 100, 1e-3, 0.0).unwrap() - 1e-3).abs() < 1e-15);
    assert!((cosine_lr(50, 100, 1e-3, 0.0).unwrap() - 5e-4).abs() < 1e-15);
    assert!(cosine_lr(100, 100, 1e-3, 0.0).unwrap().abs() < 1e-15);
}

#[test]
fn published_loss_weights_and_thresholds() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_obj, w.lambda_cls, w.lambda_loc), (1.0, 1.0, 5.0));
    assert_eq!(DEFAULT_TAU, 0.5);
    assert_eq!(DEFAULT_MATCH_IOU, 0.5);
}

#[test]
fn published_optimiser_presets() {
    let long = TrainConfig::preset(Preset::Long);
    assert_eq!((long.learning_rate, long.weight_decay), (1e-3, 5e-4));
    assert_eq!((long.epochs, long.batch_size), (200, 16));
    let short = TrainConfig::preset(Preset::Short);
    assert_eq!((short.learning_rate, short.epochs, short.batch_size), (1e-3, 100, 32));
    assert_eq!(TrainConfig::default(), long);
}

#[test]
fn reference_model_fits_the_published_budget() {
    let m = build_model(ModelConfig::reference(), Init::Random { seed: 0 }).unwrap();
    assert!((1_000_000..=1_600_000).contains(&m.param_count()), "{}", m.param_count());
    let bytes = m.weights().to_bytes().unwrap();
    assert!(bytes.len() < 10 * 1024 * 1024);
}
