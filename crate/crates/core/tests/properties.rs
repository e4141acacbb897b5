mod common;

use common::{brute_counts, brute_kappa};
use drseg::data::{hflip, rotate, vflip, SamplePair};
use drseg::metrics::{binarize, mean_record, quadratic_weighted_kappa, segmentation_metrics};
use drseg::ops::{conv2d, conv_transpose2d, ConvParams};
use drseg::report::{compose_report, parse_structured_block, Findings, LesionFinding, LesionState, Templates, Urgency};
use drseg::train::{adam_step, dice_bce_loss, AdamConfig, AdamState, Checkpoint, PlateauScheduler};
use drseg::{Error, Shape, Tensor};
use proptest::prelude::*;

fn mask_strategy(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f32), len)
}

fn pair_strategy() -> impl Strategy<Value = SamplePair> {
    (1usize..7, 1usize..7).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0.0f32..1.0, 3 * h * w),
            mask_strategy(h * w),
        )
            .prop_map(move |(img, m)| {
                SamplePair::new(
                    "p",
                    Tensor::from_vec(Shape::new(1, 3, h, w), img).unwrap(),
                    Tensor::from_vec(Shape::new(1, 1, h, w), m).unwrap(),
                )
                .unwrap()
            })
    })
}

fn state_strategy() -> impl Strategy<Value = LesionState> {
    prop::sample::select(LesionState::ALL.to_vec())
}

fn findings_strategy() -> impl Strategy<Value = Findings> {
    (
        0u8..5,
        0.0f64..=1.0,
        prop::array::uniform6((state_strategy(), prop::option::of(0.0f64..=1.0))),
    )
        .prop_map(|(grade, presence_threshold, ls)| Findings {
            grade,
            presence_threshold,
            lesions: ls.map(|(state, fraction)| LesionFinding { state, fraction }),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_identities(a in mask_strategy(64), b in mask_strategy(64)) {
        let s = Shape::new(1, 1, 8, 8);
        let (pred, gt) = (Tensor::from_vec(s, a.clone()).unwrap(), Tensor::from_vec(s, b.clone()).unwrap());
        let r = segmentation_metrics("x", &pred, &gt).unwrap();
        let c = r.counts;
        prop_assert_eq!((c.tp, c.fp, c.fn_, c.tn), brute_counts(&a, &b));
        prop_assert_eq!(c.total(), 64);
        prop_assert!(r.jaccard <= r.f1 && r.f1 <= 1.0);
        prop_assert!(r.ratios().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.accuracy >= c.tn as f64 / 64.0);
        let swapped = segmentation_metrics("y", &gt, &pred).unwrap();
        prop_assert_eq!(r.precision, swapped.recall);
        if c.tp + c.fp > 0 && c.tp + c.fn_ > 0 && r.precision + r.recall > 0.0 {
            let harmonic = 2.0 * r.precision * r.recall / (r.precision + r.recall);
            prop_assert!((r.f1 - harmonic).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_record_is_arithmetic_mean(masks in prop::collection::vec((mask_strategy(16), mask_strategy(16)), 1..12)) {
        let s = Shape::new(1, 1, 4, 4);
        let recs: Vec<_> = masks
            .iter()
            .map(|(a, b)| segmentation_metrics("i", &Tensor::from_vec(s, a.clone()).unwrap(), &Tensor::from_vec(s, b.clone()).unwrap()).unwrap())
            .collect();
        let m = mean_record(&recs).unwrap();
        for k in 0..5 {
            let direct: f64 = recs.iter().map(|r| r.ratios()[k]).sum::<f64>() / recs.len() as f64;
            prop_assert!((m.ratios()[k] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn binarize_is_binary(p in prop::collection::vec(0.0f32..=1.0, 1..50), t in 0.0f64..=1.0) {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, p.len()), p.clone()).unwrap();
        let b = binarize(&x, t).unwrap();
        for (&v, &q) in b.data().iter().zip(&p) {
            prop_assert_eq!(v, if q >= t as f32 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn kappa_matches_oracle_and_ignores_order(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60), rot in 0usize..60) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let k = quadratic_weighted_kappa(&p, &t).unwrap();
        prop_assert!((k - brute_kappa(&p, &t)).abs() <= 1e-12);
        prop_assert!(k <= 1.0 + 1e-12);
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % pairs.len());
        let (p2, t2): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
        prop_assert!((quadratic_weighted_kappa(&p2, &t2).unwrap() - k).abs() <= 1e-12);
    }

    #[test]
    fn loss_is_non_negative(z in prop::collection::vec(-30.0f64..30.0, 1..40), seed in any::<u64>()) {
        let n = z.len();
        let g: Vec<f64> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as f64).collect();
        let s = Shape::new(1, 1, 1, n);
        let (loss, grad) = dice_bce_loss(&Tensor::from_vec(s, z).unwrap(), &Tensor::from_vec(s, g).unwrap()).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert!(grad.all_finite());
    }

    #[test]
    fn adam_second_moment_stays_non_negative(grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..20)) {
        let mut p = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 3));
        let mut st = AdamState::new();
        for g in &grads {
            p.zero_grad();
            p.accumulate_grad(g);
            adam_step(&mut [("p".to_string(), &mut p)], &mut st, &AdamConfig::default(), 1e-3).unwrap();
        }
        prop_assert_eq!(st.steps(), grads.len() as u64);
        prop_assert!(st.second_moment(0).unwrap().iter().all(|&v| v >= 0.0));
        prop_assert!(p.all_finite());
    }

    #[test]
    fn scheduler_is_monotone_and_floored(losses in prop::collection::vec(0.0f64..2.0, 1..300), patience in 0usize..8) {
        let mut s = PlateauScheduler::new(1e-3, 0.5, patience);
        let mut prev = s.lr();
        for l in losses {
            let lr = s.step(l);
            prop_assert!(lr <= prev && lr >= PlateauScheduler::MIN_LR);
            prev = lr;
        }
    }

    #[test]
    fn flips_are_involutions(p in pair_strategy()) {
        prop_assert_eq!(hflip(&hflip(&p)), p.clone());
        prop_assert_eq!(vflip(&vflip(&p)), p);
    }

    #[test]
    fn rotations_keep_masks_binary(p in pair_strategy(), angle in -360.0f64..360.0) {
        let r = rotate(&p, angle);
        prop_assert!(r.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(r.image.shape(), p.image.shape());
    }

    #[test]
    fn quarter_turn_preserves_mask_count(n in 1usize..9, m in mask_strategy(81)) {
        let mask = Tensor::from_vec(Shape::new(1, 1, n, n), m[..n * n].to_vec()).unwrap();
        let p = SamplePair::new("q", Tensor::zeros(Shape::new(1, 3, n, n)), mask).unwrap();
        for angle in [90.0, 180.0, 270.0, -90.0] {
            prop_assert_eq!(rotate(&p, angle).mask.sum(), p.mask.sum());
        }
    }

    #[test]
    fn conv_adjoint_identity(
        (n, c, o, h, w, k, stride, pad) in (1usize..3, 1usize..4, 1usize..4, 3usize..9, 3usize..9, 1usize..4, 1usize..3, 0usize..2)
            .prop_filter("transpose recovers the input extent", |&(_, _, _, h, w, k, s, pad)| {
                k <= h + 2 * pad && k <= w + 2 * pad && (h + 2 * pad - k) % s == 0 && (w + 2 * pad - k) % s == 0
            }),
        seed in any::<u64>(),
    ) {
        let mut g = common::rng(seed);
        let x = Tensor::<f64>::randn(Shape::new(n, c, h, w), 1.0, &mut g);
        let p = ConvParams::with_zero_bias(Tensor::randn(Shape::new(o, c, k, k), 1.0, &mut g), o, stride, pad).unwrap();
        let y_shape = conv2d(&x, &p).unwrap().shape();
        let y = Tensor::<f64>::randn(y_shape, 1.0, &mut g);
        let pt = ConvParams::with_zero_bias(p.weight.clone(), c, stride, pad).unwrap();
        let back = conv_transpose2d(&y, &pt).unwrap();
        let lhs = conv2d(&x, &p).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&back).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = Checkpoint::<f32>::from_bytes(&bytes);
    }

    #[test]
    fn truncated_checkpoints_report_corruption(cut in 0usize..10_000) {
        let model = drseg::UNetModel::<f32>::new(drseg::UNetConfig { base_width: 2, depth: 1, ..Default::default() }, 1).unwrap();
        let bytes = Checkpoint::from_model(&model, 1, 0.5).to_bytes();
        let cut = cut % bytes.len();
        let is_corrupt = matches!(Checkpoint::<f32>::from_bytes(&bytes[..cut]), Err(Error::Corrupt { .. }));
        prop_assert!(is_corrupt);
    }

    #[test]
    fn structured_block_roundtrips(f in findings_strategy()) {
        let r = compose_report(&f, &Templates::default()).unwrap();
        let (back, urgency) = parse_structured_block(&r.render()).unwrap();
        prop_assert_eq!(back, f);
        prop_assert_eq!(urgency, r.urgency);
    }

    #[test]
    fn urgency_is_monotone_in_grade(f in findings_strategy()) {
        let mut prev = Urgency::Routine;
        for grade in 0..5 {
            let g = Findings { grade, ..f.clone() };
            let u = compose_report(&g, &Templates::default()).unwrap().urgency;
            prop_assert!(u >= prev);
            prev = u;
        }
        prop_assert_eq!(prev, Urgency::Immediate);
    }
}
