#![cfg(not(feature = "f32"))]

use proptest::prelude::*;
use vnaw_core::augment::{augment_clip_with_masks, AugmentConfig, ClipTensor};
use vnaw_core::data::{decode_clip, encode_clip};
use vnaw_core::loss::{naw_weight, NawParams};
use vnaw_core::metrics::ConfusionCounts;
use vnaw_core::model::ProbVector;
use vnaw_core::tensors::{ops, RngStream, Tensor};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn randn(shape: &[usize], rng: &mut RngStream) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between `analytic` and the central difference of
/// `f` with respect to every entry of `x`.
fn fd_check(x: &Tensor, analytic: &Tensor, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + STEP;
        let plus = f(&probe);
        probe.data_mut()[i] = v - STEP;
        let minus = f(&probe);
        probe.data_mut()[i] = v;
        worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * STEP)));
    }
    worst
}

fn pv(raw: &[f64]) -> ProbVector {
    ProbVector::new(ops::softmax(raw).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_is_simplex_and_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let p = ops::softmax(&logits).unwrap();
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = ops::softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_and_linear_gradients(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let mut rng = RngStream::new(seed, 1);
        let (a, b, up) = (randn(&[m, k], &mut rng), randn(&[k, n], &mut rng), randn(&[m, n], &mut rng));
        let (ga, gb) = ops::matmul_backward(&a, &b, &up).unwrap();
        prop_assert!(fd_check(&a, &ga, |x| dot(&ops::matmul(x, &b).unwrap(), &up)) <= TOL);
        prop_assert!(fd_check(&b, &gb, |x| dot(&ops::matmul(&a, x).unwrap(), &up)) <= TOL);

        let bias = randn(&[n], &mut rng);
        let g = ops::linear_backward(&a, &b, &up).unwrap();
        let f = |x: &Tensor, w: &Tensor, c: &Tensor| dot(&ops::linear(x, w, c).unwrap(), &up);
        prop_assert!(fd_check(&a, &g.input, |x| f(x, &b, &bias)) <= TOL);
        prop_assert!(fd_check(&b, &g.weight, |w| f(&a, w, &bias)) <= TOL);
        prop_assert!(fd_check(&bias, &g.bias, |c| f(&a, &b, c)) <= TOL);
    }

    #[test]
    fn softmax_rows_gradient(seed in any::<u64>(), m in 1usize..4, n in 1usize..6) {
        let mut rng = RngStream::new(seed, 2);
        let (x, up) = (randn(&[m, n], &mut rng), randn(&[m, n], &mut rng));
        let p = ops::softmax_rows(&x).unwrap();
        let g = ops::softmax_rows_backward(&p, &up).unwrap();
        prop_assert!(fd_check(&x, &g, |x| dot(&ops::softmax_rows(x).unwrap(), &up)) <= TOL);
    }

    #[test]
    fn layer_norm_gradients(seed in any::<u64>(), m in 1usize..4, n in 3usize..8) {
        let mut rng = RngStream::new(seed, 3);
        let x = randn(&[m, n], &mut rng);
        let gamma = randn(&[n], &mut rng);
        let beta = randn(&[n], &mut rng);
        let up = randn(&[m, n], &mut rng);
        let (_, cache) = ops::layer_norm(&x, &gamma, &beta).unwrap();
        let g = ops::layer_norm_backward(&cache, &gamma, &up).unwrap();
        let f = |x: &Tensor, ga: &Tensor, be: &Tensor| dot(&ops::layer_norm(x, ga, be).unwrap().0, &up);
        prop_assert!(fd_check(&x, &g.input, |v| f(v, &gamma, &beta)) <= TOL);
        prop_assert!(fd_check(&gamma, &g.gamma, |v| f(&x, v, &beta)) <= TOL);
        prop_assert!(fd_check(&beta, &g.beta, |v| f(&x, &gamma, v)) <= TOL);
    }

    #[test]
    fn relu_and_residual_gradients(seed in any::<u64>(), m in 1usize..4, n in 1usize..6) {
        let mut rng = RngStream::new(seed, 4);
        let mut x = randn(&[m, n], &mut rng);
        // Keep inputs away from the kink.
        x.data_mut().iter_mut().for_each(|v| if v.abs() < 1e-3 { *v = 0.5 });
        let up = randn(&[m, n], &mut rng);
        let g = ops::relu_backward(&x, &up).unwrap();
        prop_assert!(fd_check(&x, &g, |x| dot(&ops::relu(x), &up)) <= TOL);

        let other = randn(&[m, n], &mut rng);
        let (ga, gb) = ops::residual_backward(&up);
        prop_assert!(fd_check(&x, &ga, |v| dot(&ops::residual_add(v, &other).unwrap(), &up)) <= TOL);
        prop_assert!(fd_check(&other, &gb, |v| dot(&ops::residual_add(&x, v).unwrap(), &up)) <= TOL);
    }

    #[test]
    fn metrics_match_direct_count(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 0..200),
    ) {
        let k = 5;
        let counts = ConfusionCounts::from_pairs(k, pairs.iter().copied()).unwrap();
        for c in 0..k {
            let tp = pairs.iter().filter(|(p, t)| *p == c && *t == c).count() as u64;
            let fp = pairs.iter().filter(|(p, t)| *p == c && *t != c).count() as u64;
            let fn_ = pairs.iter().filter(|(p, t)| *p != c && *t == c).count() as u64;
            prop_assert_eq!((counts.tp(c), counts.fp(c), counts.fn_(c)), (tp, fp, fn_));
            let f1 = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
            prop_assert!((counts.class_f1(c) - f1).abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_permutation_equivariant(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let a = ConfusionCounts::from_pairs(4, pairs.iter().copied()).unwrap();
        let b = ConfusionCounts::from_pairs(4, pairs.iter().map(|(p, t)| (perm[*p], perm[*t]))).unwrap();
        for (c, &pc) in perm.iter().enumerate() {
            prop_assert_eq!(a.class_f1(c), b.class_f1(pc));
        }
        prop_assert!((a.macro_f1() - b.macro_f1()).abs() <= 1e-12);
    }

    #[test]
    fn naw_weight_symmetric_under_permutation(
        logits in prop::collection::vec(-5.0f64..5.0, 4),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        sigma in 0.1f64..1.0,
    ) {
        let naw = NawParams::new(4, vnaw_core::loss::KernelMean::Uniform, sigma, None).unwrap();
        let p = pv(&logits);
        let q = ProbVector::new(perm.iter().map(|&i| p.as_slice()[i]).collect()).unwrap();
        prop_assert_eq!(naw_weight(&p, &naw).unwrap(), naw_weight(&q, &naw).unwrap());
    }

    #[test]
    fn naw_weight_grows_toward_uniform(
        logits in prop::collection::vec(-5.0f64..5.0, 3),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let naw = NawParams::default_for(3).unwrap();
        let p = pv(&logits);
        let mix = |t: f64| ProbVector::new(p.as_slice().iter().map(|v| (1.0 - t) * v + t / 3.0).collect()).unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(naw_weight(&mix(lo), &naw).unwrap() <= naw_weight(&mix(hi), &naw).unwrap() + 1e-12);
    }

    #[test]
    fn augmentation_invariants(
        seed in any::<u64>(),
        frames in 1usize..10,
        side in 1usize..9,
        channels in 1usize..3,
        ratio in 0.0f64..0.9,
    ) {
        let mut rng = RngStream::new(seed, 5);
        let len = frames * channels * side * side;
        let data = (0..len).map(|_| rng.uniform()).collect();
        let clip = ClipTensor::new(frames, channels, side, side, data).unwrap();
        let cfg = AugmentConfig { erase_ratio: ratio, ..AugmentConfig::default() };
        let (out, fmask, pmask) = augment_clip_with_masks(&clip, &cfg, &mut rng).unwrap();
        let fmask = fmask.unwrap();
        let pmask = pmask.unwrap();
        prop_assert!(out.frames() >= 1);
        prop_assert_eq!(out.frames(), fmask.retained());
        prop_assert!(out.frame_index().windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(pmask.erased().len(), (ratio * (side * side) as f64).floor() as usize);
        for (q, &src) in out.frame_index().iter().enumerate() {
            prop_assert!(fmask.bits()[src]);
            for c in 0..channels {
                for y in 0..side {
                    for x in 0..side {
                        let expected = if pmask.keep()[y * side + x] { clip.value(src, c, y, x) } else { 0.0 };
                        prop_assert_eq!(out.value(q, c, y, x), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn clip_round_trip(
        seed in any::<u64>(),
        frames in 1usize..6,
        channels in 1usize..4,
        h in 1usize..7,
        w in 1usize..7,
        label in 0usize..20,
    ) {
        let mut rng = RngStream::new(seed, 6);
        let data = (0..frames * channels * h * w).map(|_| rng.uniform() as f32 as f64).collect();
        let clip = ClipTensor::new(frames, channels, h, w, data).unwrap();
        let bytes = encode_clip(&clip, label).unwrap();
        let (back, l) = decode_clip(&bytes).unwrap();
        prop_assert_eq!(l, label);
        prop_assert_eq!(back, clip);
    }
}
