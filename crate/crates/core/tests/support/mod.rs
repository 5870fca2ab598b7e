//! Independent reference implementations used to check the library.
//! The oracles in this file use nothing from the library beyond plain data types.
#![allow(dead_code)]

pub mod suites;

use ltv_core::geometry::BBox;
use ltv_core::postprocess::Detection;
use ltv_core::tensor::{Graph, Tensor, Var};
use rand::Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tensor(dims: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0))
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(x: &[f64], i: usize, h: f64, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    p[i] = x[i] + h;
    let fp = f(&p);
    p[i] = x[i] - h;
    let fm = f(&p);
    (fp - fm) / (2.0 * h)
}

/// Builds a graph over `inputs`, contracts the output against a fixed random
/// tensor and compares tape gradients with central differences on `probes`
/// randomly chosen entries of every input. Returns the worst relative error.
pub fn check_graph_op(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
    probes: usize,
    rng: &mut impl Rng,
) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> Tensor<f64> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let y = build(&mut g, &vars);
        g.value(y).clone()
    };
    let out = eval(inputs);
    let weights = random_tensor(out.dims(), rng);
    let contract = |y: &Tensor<f64>| y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut g = Graph::recording();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = build(&mut g, &vars);
    let grads = g.backward(vec![(y, weights.clone())]).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.dims()));
        for _ in 0..probes {
            let i = rng.gen_range(0..input.len());
            let mut f = |x: &[f64]| {
                let mut xs = inputs.to_vec();
                xs[k] = Tensor::new(input.dims(), x.to_vec()).unwrap();
                contract(&eval(&xs))
            };
            let numeric = central_diff(input.data(), i, 1e-5, &mut f);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

pub fn bn_train(g: &mut Graph<'_, f64>, v: &[Var]) -> Var {
    g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0
}

pub fn bn_infer(g: &mut Graph<'_, f64>, v: &[Var], mean: &[f64], var: &[f64]) -> Var {
    g.batch_norm_infer(v[0], v[1], v[2], mean, var, 1e-5).unwrap()
}

/// Direct 7-loop grouped convolution with zero padding.
pub fn naive_conv(
    input: &Tensor<f64>,
    kernel: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let [n, _, h, w] = input.dims();
    let [cout, cin_g, kh, kw] = kernel.dims();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bs| bs[co]);
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += kernel.get(co, ci, ky, kx) * input.get(b, c, iy as usize, ix as usize);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Expands a depthwise kernel `(C, 1, k, k)` into a dense `(C, C, k, k)`
/// kernel that is zero off the diagonal.
pub fn block_diagonal(kernel: &Tensor<f64>) -> Tensor<f64> {
    let [c, _, kh, kw] = kernel.dims();
    let mut dense = Tensor::zeros([c, c, kh, kw]);
    for ch in 0..c {
        for y in 0..kh {
            for x in 0..kw {
                dense.set(ch, ch, y, x, kernel.get(ch, 0, y, x));
            }
        }
    }
    dense
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn ranks_before(a: &Detection, b: &Detection) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.bbox.x1 != b.bbox.x1 {
        return a.bbox.x1 < b.bbox.x1;
    }
    a.bbox.y1 < b.bbox.y1
}

/// Textbook suppression: repeatedly take the best remaining detection and
/// delete every same-class detection overlapping it by more than `thresh`.
pub fn nms_oracle(dets: &[Detection], thresh: f64) -> Vec<Detection> {
    let mut remaining = dets.to_vec();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if ranks_before(&remaining[i], &remaining[best]) {
                best = i;
            }
        }
        let top = remaining.swap_remove(best);
        remaining.retain(|d| d.class_id != top.class_id || iou_oracle(&d.bbox, &top.bbox) <= thresh);
        kept.push(top);
    }
    kept
}

/// Greedy matching re-derived from its definition; returns `(score, tp)`
/// pairs plus the number of matched ground-truth boxes.
pub fn match_oracle(dets: &[Detection], gts: &[BBox], thresh: f64) -> (Vec<(f64, bool)>, usize) {
    let mut order: Vec<Detection> = dets.to_vec();
    // selection sort keeps the comparison logic in one obvious place
    for i in 0..order.len() {
        let mut best = i;
        for j in i + 1..order.len() {
            if ranks_before(&order[j], &order[best]) {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let v = iou_oracle(&d.bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= thresh => {
                used[g] = true;
                out.push((d.score, true));
            }
            _ => out.push((d.score, false)),
        }
    }
    let matched = used.iter().filter(|&&u| u).count();
    (out, matched)
}

/// Area under the interpolated precision staircase. For every distinct score
/// threshold the operating point is recounted from scratch; the
/// interpolated precision at recall r is the best precision at any recall
/// ≥ r.
pub fn ap_oracle(scored: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&(f64, bool)> = scored.iter().filter(|s| s.0 >= t).collect();
            let tp = kept.iter().filter(|s| s.1).count() as f64;
            (tp / n_gt as f64, tp / kept.len() as f64)
        })
        .collect();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
        area += (r - prev_recall) * envelope;
        prev_recall = r;
    }
    Some(area)
}

pub fn random_box(rng: &mut impl Rng, extent: f64, min_size: f64, max_size: f64) -> BBox {
    let w = rng.gen_range(min_size..max_size);
    let h = rng.gen_range(min_size..max_size);
    let x = rng.gen_range(0.0..extent - w);
    let y = rng.gen_range(0.0..extent - h);
    BBox::new(x, y, x + w, y + h).unwrap()
}

/// A random scene of up to `max_dets` detections, some jittered copies of
/// ground truth. Scores are drawn from a coarse grid so that ties occur.
pub fn random_scene(rng: &mut impl Rng, max_dets: usize, classes: usize) -> (Vec<Detection>, Vec<(usize, BBox)>) {
    let n_gt = rng.gen_range(0..8);
    let gts: Vec<(usize, BBox)> = (0..n_gt)
        .map(|_| (rng.gen_range(0..classes), random_box(rng, 200.0, 10.0, 60.0)))
        .collect();
    let n = rng.gen_range(0..=max_dets);
    let dets = (0..n)
        .map(|_| {
            let class_id = rng.gen_range(0..classes);
            let bbox = if !gts.is_empty() && rng.gen_bool(0.6) {
                let g = gts[rng.gen_range(0..gts.len())].1;
                let j = |rng: &mut dyn rand::RngCore| rng.gen_range(-6.0..6.0);
                let (x1, y1) = (g.x1 + j(rng), g.y1 + j(rng));
                BBox::new(x1, y1, (g.x2 + j(rng)).max(x1 + 1.0), (g.y2 + j(rng)).max(y1 + 1.0)).unwrap()
            } else {
                random_box(rng, 200.0, 5.0, 60.0)
            };
            Detection {
                bbox,
                score: (rng.gen_range(1..=20) as f64) / 20.0,
                class_id,
                level: 0,
            }
        })
        .collect();
    (dets, gts)
}
