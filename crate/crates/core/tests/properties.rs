mod support;

use ltv_core::data::{format_annotations, make_folds, parse_annotation, Annotation, FoldItem, RunConfig};
use ltv_core::eval::{average_precision, f1_score, match_detections, pr_curve};
use ltv_core::geometry::{iou, BBox, LabeledBox};
use ltv_core::imaging::{brightness_contrast, fog_rain_overlay, hflip_with_boxes, letterbox_to_stride, ThermalFrame, Weather};
use ltv_core::model::{build_model, Init, ModelConfig, WeightStore};
use ltv_core::postprocess::{nms, threshold_filter, Detection};
use ltv_core::tensor::{
    batch_norm_infer, concat_channels, conv2d, upsample_nearest_2x, ConvParams, Tensor,
};
use ltv_core::train::{assign_batch, bce_loss, ciou_loss, ciou_with_grad, cosine_lr, level_for, LossBreakdown, LossWeights};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{iou_oracle, random_scene};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 0.5..80.0f64, 0.5..80.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn frame(max: usize) -> impl Strategy<Value = ThermalFrame> {
    (1..max, 1..max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0.0..=1.0f32, w * h)
            .prop_map(move |d| ThermalFrame::from_normalized(w, h, d).unwrap())
    })
}

fn std_dev(v: &[f32]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    (v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
}

proptest! {
    #[test]
    fn iou_bounded_and_symmetric(a in bbox(), b in bbox()) {
        let v = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a).unwrap());
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((v - iou_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn ciou_non_negative_with_finite_gradient(a in bbox(), b in bbox()) {
        let l = ciou_loss(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!(ciou_with_grad(&a, &b).1.iter().all(|g| g.is_finite()));
        prop_assert!(ciou_loss(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bce_finite_and_non_negative(z in -1e4..1e4f64, t in 0.0..=1.0f64) {
        let v = bce_loss(&Tensor::full([1, 1, 1, 1], z), &Tensor::full([1, 1, 1, 1], t)).unwrap();
        prop_assert!(v.is_finite() && v >= -1e-12);
    }

    #[test]
    fn weighted_total_is_exact(o in 0.0..10.0f64, c in 0.0..10.0f64, l in 0.0..10.0f64,
                               wo in 0.0..5.0f64, wc in 0.0..5.0f64, wl in 0.0..5.0f64) {
        let w = LossWeights { lambda_obj: wo, lambda_cls: wc, lambda_loc: wl };
        let b = LossBreakdown::combine(o, c, l, 0, &w);
        prop_assert_eq!(b.total, wo * o + wc * c + wl * l);
    }

    #[test]
    fn conv_output_shape(h in 1usize..10, w in 1usize..10, k in prop::sample::select(vec![1usize, 3]),
                         stride in 1usize..3, cin in 1usize..4, cout in 1usize..4) {
        let pad = k / 2;
        let x = Tensor::<f64>::full([1, cin, h, w], 1.0);
        let y = conv2d(&x, &ConvParams::new(Tensor::full([cout, cin, k, k], 1.0), None, stride, pad, 1)).unwrap();
        prop_assert_eq!(y.dims(), [1, cout, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
    }

    #[test]
    fn batch_norm_infer_is_affine_per_channel(vals in proptest::collection::vec(-5.0..5.0f64, 8),
                                              mean in -1.0..1.0f64, var in 0.0..3.0f64,
                                              gamma in -2.0..2.0f64, beta in -2.0..2.0f64) {
        let x = Tensor::new([2, 1, 2, 2], vals.clone()).unwrap();
        let y = batch_norm_infer(&x, &[gamma], &[beta], &[mean], &[var], 1e-5);
        for (xi, yi) in vals.iter().zip(y.data()) {
            let want = (xi - mean) / (var + 1e-5).sqrt() * gamma + beta;
            prop_assert!((yi - want).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_replicates_and_concat_preserves_order(h in 1usize..5, w in 1usize..5) {
        let a = Tensor::<f64>::from_fn([1, 2, h, w], |i| i as f64);
        let up = upsample_nearest_2x(&a);
        prop_assert_eq!(up.dims(), [1, 2, 2 * h, 2 * w]);
        for c in 0..2 { for y in 0..2 * h { for x in 0..2 * w {
            prop_assert_eq!(up.get(0, c, y, x), a.get(0, c, y / 2, x / 2));
        }}}
        let b = Tensor::<f64>::from_fn([1, 3, h, w], |i| -(i as f64));
        let cat = concat_channels(&a, &b).unwrap();
        prop_assert_eq!(cat.channels(), 5);
        prop_assert_eq!(cat.plane(0, 1), a.plane(0, 1));
        prop_assert_eq!(cat.plane(0, 4), b.plane(0, 2));
    }

    #[test]
    fn hflip_mirrors_pixels_and_boxes(f in frame(12), x1 in 0.0..5.0f64, w in 0.5..5.0f64) {
        let bx = LabeledBox::new(0, BBox::new(x1, 0.0, x1 + w, 1.0).unwrap());
        let (g, boxes) = hflip_with_boxes(&f, &[bx]);
        let (src, dst) = (f.values(), g.values());
        for y in 0..f.height { for x in 0..f.width {
            prop_assert_eq!(dst[y * f.width + x], src[y * f.width + f.width - 1 - x]);
        }}
        let fw = f.width as f64;
        prop_assert!((boxes[0].bbox.x1 - (fw - x1 - w)).abs() < 1e-12);
        prop_assert!((boxes[0].bbox.x2 - (fw - x1)).abs() < 1e-12);
        let (back, _) = hflip_with_boxes(&g, &boxes);
        prop_assert_eq!(back.values(), f.values());
    }

    #[test]
    fn brightness_contrast_formula(f in frame(8), b in -0.3..0.3f64, c in -0.3..0.3f64) {
        let g = brightness_contrast(&f, b, c);
        for (x, y) in f.values().iter().zip(g.values().iter()) {
            let want = (((*x as f64) - 0.5) * (1.0 + c) + 0.5 + b).clamp(0.0, 1.0);
            prop_assert!((*y as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn fog_never_raises_contrast(f in frame(16), a in 0.0..=1.0f64, seed in any::<u64>()) {
        let g = fog_rain_overlay(&f, Weather::Fog, a, seed).unwrap();
        prop_assert!(std_dev(&g.values()) <= std_dev(&f.values()) + 1e-6);
    }

    #[test]
    fn letterbox_pads_to_multiple(f in frame(40), m in 1usize..33) {
        let bx = LabeledBox::new(1, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap());
        let (g, boxes, rec) = letterbox_to_stride(&f, &[bx], m).unwrap();
        prop_assert_eq!(g.width % m, 0);
        prop_assert_eq!(g.height % m, 0);
        prop_assert!(g.width - f.width < m && g.height - f.height < m);
        prop_assert_eq!(rec.padded_width(), g.width);
        prop_assert_eq!(boxes, vec![bx]);
    }

    #[test]
    fn cosine_lr_bounded_and_non_increasing(total in 1usize..500, lr in 1e-5..1e-1f64, frac in 0.0..1.0f64) {
        let eta = lr * frac;
        let slack = lr * 1e-12;
        let mut prev = f64::INFINITY;
        for t in 0..=total {
            let v = cosine_lr(t, total, lr, eta).unwrap();
            prop_assert!(v <= prev + slack && v >= eta - slack && v <= lr + slack);
            prev = v;
        }
    }

    #[test]
    fn annotation_text_round_trip(anns in proptest::collection::vec(
        (0usize..2, 0.2..0.8f64, 0.2..0.8f64, 0.01..0.3f64, 0.01..0.3f64), 0..6)) {
        let anns: Vec<Annotation> = anns.into_iter()
            .map(|(class_id, cx, cy, w, h)| Annotation { class_id, cx, cy, w, h })
            .collect();
        let back = parse_annotation(&format_annotations(&anns), 2).unwrap();
        prop_assert_eq!(back.len(), anns.len());
        for (a, b) in anns.iter().zip(&back) {
            prop_assert_eq!(a.class_id, b.class_id);
            prop_assert!((a.cx - b.cx).abs() < 1e-6 && (a.w - b.w).abs() < 1e-6);
        }
    }

    #[test]
    fn folds_partition_the_dataset(counts in proptest::collection::vec((0usize..4, 0usize..4), 10..60),
                                   k in 2usize..6, seed in any::<u64>()) {
        let items: Vec<FoldItem> = counts.iter().enumerate()
            .map(|(i, &(c, a))| FoldItem { id: format!("img{i}"), class_counts: vec![c, a] })
            .collect();
        let split = make_folds(&items, k, seed).unwrap();
        prop_assert_eq!(split.k(), k);
        split.check_partition(items.iter().map(|i| i.id.as_str())).unwrap();
        let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(make_folds(&items, k, seed).unwrap(), split);
    }

    #[test]
    fn config_text_round_trip(lr in 1e-5..1e-1f64, epochs in 1usize..400, bs in 1usize..64,
                              tau in 0.0..=1.0f64, seed in any::<u64>()) {
        let cfg = RunConfig::default().with_overrides(&[
            format!("learning_rate={lr}"), format!("epochs={epochs}"), format!("batch_size={bs}"),
            format!("tau={tau}"), format!("seed={seed}"),
        ]).unwrap();
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nms_output_is_a_consistent_subset(seed in any::<u64>(), thresh in 0.1..0.9f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, _) = random_scene(&mut rng, 40, 3);
        let kept = nms(&dets, thresh);
        for d in &kept {
            prop_assert!(dets.contains(d));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox).unwrap() <= thresh);
            }
        }
        prop_assert_eq!(nms(&kept, thresh), kept);
    }

    #[test]
    fn matching_and_ap_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, gts) = random_scene(&mut rng, 30, 1);
        let gts: Vec<BBox> = gts.into_iter().map(|g| g.1).collect();
        let m = match_detections(&dets, &gts, 0.5);
        let mut seen = std::collections::HashSet::new();
        for e in &m.entries {
            if let Some(g) = e.gt {
                prop_assert!(seen.insert(g), "ground truth {} matched twice", g);
            }
        }
        prop_assert!(m.tp_count() <= dets.len().min(gts.len()));
        let scored: Vec<(f64, bool)> = m.entries.iter().map(|e| (e.score, e.tp)).collect();
        if let Some(ap) = average_precision(&scored, gts.len()) {
            prop_assert!((0.0..=1.0).contains(&ap));
        }
        for p in pr_curve(&scored, gts.len()) {
            prop_assert!((p.f1 - f1_score(p.precision, p.recall)).abs() < 1e-15);
        }
    }

    #[test]
    fn threshold_filter_keeps_sorted_survivors(seed in any::<u64>(), tau in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, _) = random_scene(&mut rng, 40, 2);
        let kept = threshold_filter(&dets, tau);
        prop_assert_eq!(kept.len(), dets.iter().filter(|d| d.score >= tau).count());
        prop_assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn every_box_lands_on_one_cell_or_is_dropped(
        boxes in proptest::collection::vec((0.0..200.0f64, 0.0..150.0f64, 4.0..180.0f64, 4.0..150.0f64, 0usize..2), 0..12)
    ) {
        let cfg = ModelConfig::shrunk();
        let labeled: Vec<LabeledBox> = boxes.iter()
            .map(|&(x, y, w, h, c)| LabeledBox::new(c, BBox::new(x, y, (x + w).min(224.0), (y + h).min(160.0)).unwrap()))
            .filter(|b| b.bbox.width() > 0.0 && b.bbox.height() > 0.0)
            .collect();
        let t = assign_batch(std::slice::from_ref(&labeled), &cfg, (224, 160)).unwrap();
        prop_assert_eq!(t.positive_count() + t.dropped, labeled.len());
        for (l, lt) in t.levels.iter().enumerate() {
            let ones = lt.objectness.iter().filter(|&&o| o == 1.0).count();
            prop_assert_eq!(ones, lt.positives.len());
            for p in &lt.positives {
                let (cx, cy) = p.bbox.center();
                prop_assert_eq!((cx / lt.stride as f64) as usize, p.col);
                prop_assert_eq!((cy / lt.stride as f64) as usize, p.row);
                prop_assert!(level_for(&p.bbox) <= l);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn weight_bytes_round_trip_and_reject_truncation(seed in any::<u64>(), cut in 1usize..64) {
        let m = build_model(ModelConfig::shrunk(), Init::Random { seed }).unwrap();
        let bytes = m.weights().to_bytes().unwrap();
        let back = WeightStore::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, m.weights());
        prop_assert!(WeightStore::<f32>::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn decoded_scores_are_probabilities(seed in any::<u64>()) {
        let m = build_model(ModelConfig::shrunk(), Init::Random { seed }).unwrap();
        let f = ThermalFrame::from_normalized(70, 50, (0..3500).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect()).unwrap();
        let det = ltv_core::postprocess::Detector::new(m, None, 0.0).unwrap();
        let dets: Vec<Detection> = det.detect(&f).unwrap();
        for d in &dets {
            prop_assert!((0.0..=1.0).contains(&d.score));
            prop_assert!(d.bbox.x1 >= 0.0 && d.bbox.y1 >= 0.0 && d.bbox.x2 <= 70.0 && d.bbox.y2 <= 50.0);
        }
    }
}
