//! Whole-suite checks shared by the per-area tests and the acceptance run.

use ltv_core::geometry::{BBox, LabeledBox};
use ltv_core::model::{build_model, Init, Model, ModelConfig, RawPredictions};
use ltv_core::postprocess::{nms, Detection};
use ltv_core::tensor::{conv2d, depthwise_conv2d, BnMode, ConvGeometry, ConvParams, Graph, Tensor};
use ltv_core::train::{assign_batch, bce_loss, bce_loss_grad, ciou_loss, ciou_with_grad, composite_loss, composite_loss_with_grad, LossWeights, TargetGrids};
use ltv_core::eval::{average_precision, match_detections, mean_average_precision};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Worst relative error per operation over `trials` seeded trials.
pub fn gradient_suite(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = [
        "conv2d", "depthwise", "pointwise", "batch_norm", "silu", "sigmoid", "bce", "ciou", "composite_loss",
    ]
    .iter()
    .map(|&n| (n, 0.0))
    .collect();
    let mut bump = |name: &str, e: f64| {
        let slot = worst.iter_mut().find(|w| w.0 == name).unwrap();
        slot.1 = slot.1.max(e);
    };
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let stride = rng.gen_range(1..=2);

        let x = random_tensor([2, 3, 7, 6], &mut rng);
        let k = random_tensor([4, 3, 3, 3], &mut rng);
        let b = Tensor::vector((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let e = check_graph_op(
            &[x, k, b],
            |g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvGeometry::new(stride, 1, 1)).unwrap(),
            6,
            &mut rng,
        );
        bump("conv2d", e);

        let x = random_tensor([2, 4, 6, 7], &mut rng);
        let k = random_tensor([4, 1, 3, 3], &mut rng);
        let e = check_graph_op(
            &[x, k],
            |g, v| g.conv2d(v[0], v[1], None, ConvGeometry::new(stride, 1, 4)).unwrap(),
            6,
            &mut rng,
        );
        bump("depthwise", e);

        let x = random_tensor([2, 4, 5, 5], &mut rng);
        let k = random_tensor([6, 4, 1, 1], &mut rng);
        let e = check_graph_op(
            &[x, k],
            |g, v| g.conv2d(v[0], v[1], None, ConvGeometry::new(1, 0, 1)).unwrap(),
            6,
            &mut rng,
        );
        bump("pointwise", e);

        let x = random_tensor([3, 4, 4, 5], &mut rng);
        let gamma = Tensor::vector((0..4).map(|_| rng.gen_range(0.5..1.5)).collect());
        let beta = Tensor::vector((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let e = check_graph_op(&[x.clone(), gamma.clone(), beta.clone()], bn_train, 6, &mut rng);
        bump("batch_norm", e);
        let mean: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let var: Vec<f64> = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
        let e = check_graph_op(&[x, gamma, beta], |g, v| bn_infer(g, v, &mean, &var), 6, &mut rng);
        bump("batch_norm", e);

        let x = Tensor::from_fn([2, 3, 4, 4], |_| rng.gen_range(-4.0..4.0));
        bump("silu", check_graph_op(std::slice::from_ref(&x), |g, v| g.silu(v[0]), 8, &mut rng));
        bump("sigmoid", check_graph_op(&[x], |g, v| g.sigmoid(v[0]), 8, &mut rng));

        let logits = Tensor::from_fn([2, 3, 3, 3], |_| rng.gen_range(-6.0..6.0));
        let targets = Tensor::from_fn([2, 3, 3, 3], |_| rng.gen_range(0.0..1.0));
        let grad = bce_loss_grad(&logits, &targets).unwrap();
        for _ in 0..8 {
            let i = rng.gen_range(0..logits.len());
            let mut f = |z: &[f64]| bce_loss(&Tensor::new(logits.dims(), z.to_vec()).unwrap(), &targets).unwrap();
            let numeric = central_diff(logits.data(), i, 1e-5, &mut f);
            bump("bce", rel_err(grad.data()[i], numeric));
        }

        for _ in 0..4 {
            let gt = random_box(&mut rng, 100.0, 10.0, 50.0);
            let (cx, cy) = gt.center();
            let p = BBox::from_center(
                cx + rng.gen_range(-8.0..8.0),
                cy + rng.gen_range(-8.0..8.0),
                gt.width() * rng.gen_range(0.6..1.5),
                gt.height() * rng.gen_range(0.6..1.5),
            );
            let (_, grad) = ciou_with_grad(&p, &gt);
            let corners = [p.x1, p.y1, p.x2, p.y2];
            for k in 0..4 {
                let mut f = |c: &[f64]| ciou_loss(&BBox::new(c[0], c[1], c[2], c[3]).unwrap(), &gt).unwrap();
                let numeric = central_diff(&corners, k, 1e-5, &mut f);
                bump("ciou", rel_err(grad[k], numeric));
            }
        }

        bump("composite_loss", composite_trial(&mut rng, 4));
    }
    worst
}

fn shrunk_f64(rng: &mut impl Rng) -> Model<f64> {
    build_model(ModelConfig::shrunk(), Init::Random { seed: rng.gen() }).unwrap().cast::<f64>()
}

fn loss_of(model: &Model<f64>, x: &Tensor<f64>, targets: &TargetGrids) -> f64 {
    let mut g = Graph::inference();
    let xv = g.leaf(x.clone());
    let tr = model.trace(&mut g, xv, BnMode::Train).unwrap();
    let preds = RawPredictions {
        levels: tr.levels.iter().map(|&v| g.value(v).clone()).collect(),
        strides: model.config().strides.clone(),
    };
    composite_loss(&preds, targets, &LossWeights::default(), model.config().head_box_clamp)
        .unwrap()
        .total
}

/// End-to-end check of the detection loss with respect to model parameters
/// on a 96x96 frame holding one small and one medium box.
fn composite_trial(rng: &mut impl Rng, probes: usize) -> f64 {
    let model = shrunk_f64(rng);
    let x = Tensor::from_fn([1, 1, 96, 96], |_| rng.gen_range(0.0..1.0));
    let boxes = vec![vec![
        LabeledBox::new(0, BBox::from_center(rng.gen_range(20.0..70.0), 40.0, 14.0, 34.0)),
        LabeledBox::new(1, BBox::from_center(60.0, rng.gen_range(45.0..55.0), 60.0, 80.0)),
    ]];
    let targets = assign_batch(&boxes, model.config(), (96, 96)).unwrap();

    let mut g = Graph::recording();
    let xv = g.leaf(x.clone());
    let tr = model.trace(&mut g, xv, BnMode::Train).unwrap();
    let preds = RawPredictions {
        levels: tr.levels.iter().map(|&v| g.value(v).clone()).collect(),
        strides: model.config().strides.clone(),
    };
    let (_, level_grads) =
        composite_loss_with_grad(&preds, &targets, &LossWeights::default(), model.config().head_box_clamp).unwrap();
    let grads = g.backward(tr.levels.iter().copied().zip(level_grads).collect()).unwrap();

    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let (name, var) = tr.params[rng.gen_range(0..tr.params.len())].clone();
        let analytic_t = grads.get(var).cloned().unwrap_or_else(|| Tensor::zeros(g.value(var).dims()));
        let i = rng.gen_range(0..analytic_t.len());
        let base = model.weights().get(&name).unwrap().data().to_vec();
        let mut f = |p: &[f64]| {
            let mut m = model.clone();
            m.weights_mut().get_mut(&name).unwrap().data_mut().copy_from_slice(p);
            loss_of(&m, &x, &targets)
        };
        let numeric = central_diff(&base, i, 1e-5, &mut f);
        worst = worst.max(rel_err(analytic_t.data()[i], numeric));
    }
    worst
}

/// Library NMS against the textbook loop; returns mismatching scene count.
pub fn nms_equivalence(scenes: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scenes)
        .filter(|_| {
            let (dets, _) = random_scene(&mut rng, 50, 3);
            let thresh = rng.gen_range(0.2..0.8);
            nms(&dets, thresh) != nms_oracle(&dets, thresh)
        })
        .count()
}

/// Worst |AP − oracle| and |mAP − oracle| over random two-class scenes.
/// Each scene is a handful of frames matched per class.
pub fn ap_equivalence(scenes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..scenes {
        let frames = rng.gen_range(1..5);
        let mut lib: Vec<(Vec<(f64, bool)>, usize)> = vec![(Vec::new(), 0); 2];
        let mut ora: Vec<(Vec<(f64, bool)>, usize)> = vec![(Vec::new(), 0); 2];
        for _ in 0..frames {
            let (dets, gts) = random_scene(&mut rng, 30, 2);
            for c in 0..2 {
                let d: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).copied().collect();
                let g: Vec<BBox> = gts.iter().filter(|g| g.0 == c).map(|g| g.1).collect();
                let m = match_detections(&d, &g, 0.5);
                lib[c].0.extend(m.entries.iter().map(|e| (e.score, e.tp)));
                lib[c].1 += g.len();
                let (pairs, _) = match_oracle(&d, &g, 0.5);
                ora[c].0.extend(pairs);
                ora[c].1 += g.len();
            }
        }
        let lib_ap: Vec<Option<f64>> = lib.iter().map(|(s, n)| average_precision(s, *n)).collect();
        let ora_ap: Vec<Option<f64>> = ora.iter().map(|(s, n)| ap_oracle(s, *n)).collect();
        for (a, b) in lib_ap.iter().zip(&ora_ap) {
            match (a, b) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return f64::INFINITY,
            }
        }
        let present: Vec<f64> = ora_ap.iter().flatten().copied().collect();
        match mean_average_precision(&lib_ap) {
            Ok(m) => worst = worst.max((m - present.iter().sum::<f64>() / present.len() as f64).abs()),
            Err(_) if present.is_empty() => {}
            Err(_) => return f64::INFINITY,
        }
    }
    worst
}

/// Worst |depthwise − block-diagonal dense conv| plus worst |conv − naive
/// loops| over random shapes; both must be exactly zero.
pub fn conv_equivalence(trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dw, mut naive) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let c = rng.gen_range(1..6);
        let stride = rng.gen_range(1..=2);
        let x = random_tensor([rng.gen_range(1..3), c, rng.gen_range(3..9), rng.gen_range(3..9)], &mut rng);
        let k = random_tensor([c, 1, 3, 3], &mut rng);
        let depth = depthwise_conv2d(&x, &ConvParams::new(k.clone(), None, stride, 1, c)).unwrap();
        let dense = conv2d(&x, &ConvParams::new(block_diagonal(&k), None, stride, 1, 1)).unwrap();
        dw = dw.max(depth.max_abs_diff(&dense));

        let groups = [1, c][rng.gen_range(0..2)];
        let cout = groups * rng.gen_range(1..3);
        let kernel = random_tensor([cout, c / groups, 3, 3], &mut rng);
        let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = conv2d(&x, &ConvParams::new(kernel.clone(), Some(bias.clone()), stride, 1, groups)).unwrap();
        let want = naive_conv(&x, &kernel, Some(&bias), stride, 1, groups);
        naive = naive.max(got.max_abs_diff(&want));
    }
    (dw, naive)
}
