mod common;

use common::*;
use crate_core::analysis::{affinity_matrix, attention_to_mask, iou, ncut_value, AttentionMap};
use crate_core::io::{decode_checkpoint, decode_pnm, encode_checkpoint, encode_pnm, render_heatmap};
use crate_core::model::{crate_layer_forward, ista_forward, layer_norm, softmax_rows};
use crate_core::objective::{coding_rate, coding_rate_subspaces};
use crate_core::train::{cross_entropy_grad, generate_sample, SynthDataConfig};
use crate_core::{Arch, CrateModel, ModelConfig};
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = Arch> {
    prop::sample::select(Arch::ALL.to_vec())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_stochastic(arch in arch(), seed in 0u64..1000, scale in 0.1..20.0f64) {
        let cfg = ModelConfig::tiny(arch);
        let m = CrateModel::init(&cfg, seed).unwrap();
        let z = gaussian(cfg.model_dim, cfg.num_tokens(), &mut rng(seed)) * scale;
        let (out, trace) = crate_layer_forward(&z, &m.layers[0], &cfg).unwrap();
        prop_assert!(out.iter().all(|v| v.is_finite()));
        for a in &trace.attention {
            for row in a.rows() {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_is_shift_invariant(z in matrix(6, 4), shift in -5.0..5.0f64) {
        let g = Array1::ones(6);
        let b = Array1::zeros(6);
        let a = layer_norm(&z, &g, &b);
        let c = layer_norm(&(&z + shift), &g, &b);
        prop_assert!(max_abs_diff(&a, &c) < 1e-8);
        for col in a.columns() {
            prop_assert!(col.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(s in matrix(3, 5), shift in -50.0..50.0f64) {
        prop_assert!(max_abs_diff(&softmax_rows(&s), &softmax_rows(&(&s + shift))) < 1e-12);
    }

    #[test]
    fn ista_output_is_nonnegative(z in matrix(5, 3), d in matrix(5, 5), lambda in 0.0..1.0f64) {
        prop_assert!(ista_forward(&z, &d, 0.1, lambda).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rates_nonnegative_and_rotation_invariant(z in matrix(4, 6), seed in 0u64..1000) {
        let mut r = rng(seed);
        let q = orthonormal(4, 4, &mut r);
        let r0 = coding_rate(&z, 1.0);
        prop_assert!(r0 >= 0.0);
        prop_assert!((coding_rate(&q.dot(&z), 1.0) - r0).abs() < 1e-9);
        let us = vec![orthonormal(4, 2, &mut r), orthonormal(4, 2, &mut r)];
        prop_assert!(coding_rate_subspaces(&z, &us, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 12), b in prop::collection::vec(any::<bool>(), 12)) {
        match (iou(&a, &b), iou(&b, &a)) {
            (Some(x), Some(y)) => {
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x));
            }
            (None, None) => prop_assert!(a.iter().chain(&b).all(|v| !v)),
            _ => prop_assert!(false, "asymmetric definedness"),
        }
    }

    #[test]
    fn top_p_mask_has_exact_count(values in prop::collection::vec(0.0..1.0f64, 1..200), p in 0.01..=1.0f64) {
        let n = values.len();
        let map = AttentionMap { values, head: 0, layer: 1 };
        let mask = attention_to_mask(&map, p).unwrap();
        let expected = ((p * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
        prop_assert_eq!(mask.count(), expected);
        // Every kept value is at least every dropped value.
        let kept = map.values.iter().zip(&mask.bits).filter(|(_, &b)| b).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
        let dropped = map.values.iter().zip(&mask.bits).filter(|(_, &b)| !b).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(kept >= dropped);
    }

    #[test]
    fn affinity_symmetric_thresholded(f in matrix(3, 7), tau in 0.0..0.99f64) {
        let a = affinity_matrix(&f, tau, true);
        for i in 0..7 {
            for j in 0..7 {
                prop_assert!((a.m[[i, j]] - a.m[[j, i]]).abs() < 1e-9);
                let v = a.m[[i, j]];
                prop_assert!(v == 0.0 || v >= tau);
            }
        }
    }

    #[test]
    fn ncut_in_unit_range(f in matrix(3, 6), side in prop::collection::vec(any::<bool>(), 6)) {
        let a = affinity_matrix(&f, 0.0, true);
        let v = ncut_value(&a.m, &side);
        if v.is_finite() {
            prop_assert!((0.0..=2.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero(logits in prop::collection::vec(-30.0..30.0f64, 2..6), y in 0usize..6) {
        let y = y % logits.len();
        let (loss, g) = cross_entropy_grad(Array1::from(logits).view(), y);
        prop_assert!(loss >= 0.0);
        prop_assert!(g.sum().abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(arch in arch(), seed in 0u64..10_000) {
        let m = CrateModel::init(&ModelConfig::tiny(arch), seed).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            prop_assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn pnm_read_write_read_idempotent(c in prop::sample::select(vec![1usize, 3]), h in 1usize..6, w in 1usize..6,
                                      v in prop::collection::vec(-0.2..1.2f64, 75)) {
        let img = Array3::from_shape_fn((c, h, w), |(a, b, d)| v[(a * h + b) * w + d]);
        let once = decode_pnm(&encode_pnm(&img).unwrap()).unwrap();
        let twice = decode_pnm(&encode_pnm(&once).unwrap()).unwrap();
        prop_assert_eq!(&once, &twice);
        for (x, y) in img.iter().zip(once.iter()) {
            prop_assert!((x.clamp(0.0, 1.0) - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn heatmap_in_unit_cube(values in prop::collection::vec(-10.0..10.0f64, 6)) {
        let img = render_heatmap(&values, (2, 3), 2).unwrap();
        prop_assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn samples_respect_area_and_grid(seed in 0u64..1000, index in 0u64..100) {
        let cfg = SynthDataConfig { seed, ..Default::default() };
        let s = generate_sample(&cfg, index);
        let area = s.gt_mask.iter().filter(|&&b| b).count() as f64 / (cfg.size * cfg.size) as f64;
        prop_assert!(area > 0.0 && area <= cfg.max_area + 0.05);
        prop_assert!(s.patch_gt.iter().any(|&b| b));
        prop_assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(s.label, (index % cfg.num_classes as u64) as usize);
    }
}
