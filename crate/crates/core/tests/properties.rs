use blurfield::io::{decode_blurfield, encode_blurfield, ReadOptions};
use blurfield::metrics::{kernel_loss, reblur_loss, segment_weights, uniform_weights, KernelNorm};
use blurfield::operator::BlurOperator;
use blurfield::rl::{rl_step_basic, tv_gradient, RLState};
use blurfield::synth::rasterize_kernel;
use blurfield::testing::{random_field, random_image};
use blurfield::types::{validate_with_tolerance, MixingField, NORMALIZATION_TOL};
use blurfield::{apply, apply_adjoint, densify, Image, SegmentLabels};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(48)
}

/// (seed, width, height, basis count, kernel side)
fn instance() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 0usize..4, 1usize..5).prop_flat_map(|(seed, half, count)| {
        let side = 2 * half + 1;
        (Just(seed), side.max(2)..24, side.max(2)..24, Just(count), Just(side))
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn adjoint_identity((seed, w, h, b, k) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, w, h, b, k);
        let x = random_image(&mut rng, w, h, 1).map(|v| v - 0.5);
        let y = random_image(&mut rng, w, h, 1).map(|v| v - 0.5);
        let hx = apply(&field, &x).unwrap();
        let lhs = hx.dot(&y).unwrap();
        let rhs = x.dot(&apply_adjoint(&field, &y).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (hx.norm() * y.norm()).max(1e-300));
    }

    #[test]
    fn apply_is_linear((seed, w, h, b, k) in instance(), alpha in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, w, h, b, k);
        let x = random_image(&mut rng, w, h, 3);
        let y = random_image(&mut rng, w, h, 3);
        let combo = x.zip_map(&y, |a, b| alpha * a + b).unwrap();
        let lhs = apply(&field, &combo).unwrap();
        let hx = apply(&field, &x).unwrap();
        let hy = apply(&field, &y).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(hx.data()).zip(hy.data()) {
            prop_assert!((l - (alpha * a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_keeps_non_negative_and_constants((seed, w, h, b, k) in instance(), c in 0.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, w, h, b, k);
        let x = random_image(&mut rng, w, h, 1);
        prop_assert!(apply(&field, &x).unwrap().min_value() > -1e-14);
        let flat = apply(&field, &Image::filled(w, h, 1, c)).unwrap();
        prop_assert!(flat.data().iter().all(|v| (v - c).abs() < 1e-12 * c.max(1.0)));
    }

    #[test]
    fn mixing_constructor_agrees_with_validation(seed in any::<u64>(), scale in 0.9f64..1.1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, 6, 5, 2, 3);
        let mut maps = field.mixing().clone().into_maps();
        let pixel = rng.random_range(0..30);
        for m in &mut maps {
            m[pixel] *= scale;
        }
        let built = MixingField::new(6, 5, maps.clone());
        let sum: f64 = maps.iter().map(|m| m[pixel]).sum();
        prop_assert_eq!(built.is_ok(), (sum - 1.0).abs() <= NORMALIZATION_TOL);
        let unchecked = blurfield::BlurField::unvalidated(
            field.basis().clone(),
            MixingField::unvalidated(6, 5, maps).unwrap(),
        );
        prop_assert_eq!(
            validate_with_tolerance(&unchecked, NORMALIZATION_TOL).is_pass(),
            built.is_ok()
        );
    }

    #[test]
    fn nubf_quantizes_once((seed, w, h, b, k) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, w, h, b, k);
        let bytes = encode_blurfield(&field);
        let back = decode_blurfield(&bytes, ReadOptions::default()).unwrap();
        prop_assert_eq!(&encode_blurfield(&back), &bytes);
        let cut = rng.random_range(0..bytes.len());
        prop_assert!(decode_blurfield(&bytes[..cut], ReadOptions::default()).is_err());
    }

    #[test]
    fn segment_weights_sum_to_segment_count(seed in any::<u64>(), w in 1usize..20, h in 1usize..20, n in 1u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u32> = (0..w * h).map(|_| rng.random_range(0..n)).collect();
        let labels = SegmentLabels::new(w, h, labels).unwrap();
        let total: f64 = segment_weights(&labels).iter().sum();
        prop_assert!((total - labels.segment_count() as f64).abs() < 1e-9);
    }

    #[test]
    fn reblur_loss_symmetric_and_zero_iff_equal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 9, 7, 3);
        let b = random_image(&mut rng, 9, 7, 3);
        let w = uniform_weights(9, 7);
        let ab = reblur_loss(&a, &b, &w).unwrap();
        prop_assert_eq!(ab, reblur_loss(&b, &a, &w).unwrap());
        prop_assert!(ab > 0.0);
        prop_assert_eq!(reblur_loss(&a, &a, &w).unwrap(), 0.0);
    }

    #[test]
    fn kernel_l2_below_l1(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_field(&mut rng, 8, 6, 3, 5);
        let gt = densify(&random_field(&mut rng, 8, 6, 2, 5)).unwrap();
        let w = uniform_weights(8, 6);
        let l1 = kernel_loss(&pred, &gt, &w, KernelNorm::L1).unwrap();
        let l2 = kernel_loss(&pred, &gt, &w, KernelNorm::L2).unwrap();
        prop_assert!(l2 <= l1 + 1e-12);
        prop_assert_eq!(kernel_loss(&pred, &densify(&pred).unwrap(), &w, KernelNorm::L1).unwrap(), 0.0);
    }

    #[test]
    fn rasterized_kernels_are_valid(
        points in prop::collection::vec((-3.0f64..=3.0, -3.0f64..=3.0), 1..200),
    ) {
        let k = rasterize_kernel(&points, 9).unwrap();
        prop_assert!((k.sum() - 1.0).abs() < 1e-9);
        prop_assert!(k.data().iter().all(|&v| v >= 0.0));
        for j in 0..9 {
            for (r, c) in [(0, j), (8, j), (j, 0), (j, 8)] {
                prop_assert_eq!(k.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn tv_gradient_shift_invariant(seed in any::<u64>(), c in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_image(&mut rng, 7, 9, 1);
        let g = tv_gradient(&u, 1e-3);
        let gs = tv_gradient(&u.map(|v| v + c), 1e-3);
        for (a, b) in g.data().iter().zip(gs.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rl_step_preserves_non_negativity((seed, w, h, b, k) in instance()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = random_field(&mut rng, w, h, b, k);
        let op = BlurOperator::new(&field).unwrap();
        let u = random_image(&mut rng, w, h, 1).map(|v| if v < 0.2 { 0.0 } else { v });
        let v = random_image(&mut rng, w, h, 1);
        let next = rl_step_basic(&RLState::new(u.clone()).unwrap(), &op, &v).unwrap();
        prop_assert!(next.estimate.min_value() >= 0.0);
        for (a, b) in next.estimate.data().iter().zip(u.data()) {
            if *b == 0.0 {
                prop_assert_eq!(*a, 0.0);
            }
        }
    }
}
