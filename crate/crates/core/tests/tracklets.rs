mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use steerseg::numerics::logit_transform;
use steerseg::tracklets::{binarize_mask, dedupe_nms, fuse, keyframe_volume};

fn random_masks(seed: u64, n: usize) -> (Vec<Array2<f64>>, Vec<f64>, Vec<usize>) {
    let mut r = common::rng(seed);
    let masks = (0..n)
        .map(|_| {
            let (r0, c0) = (r.random_range(0..10usize), r.random_range(0..10usize));
            let (h, w) = (r.random_range(1..7usize), r.random_range(1..7usize));
            Array2::from_shape_fn((16, 16), |(y, x)| f64::from(u8::from((r0..r0 + h).contains(&y) && (c0..c0 + w).contains(&x))))
        })
        .collect();
    // Coarse priorities force ties so the secondary keys matter.
    let priorities = (0..n).map(|_| f64::from(r.random_range(0..4u8)) / 4.0).collect();
    let order = (0..n).map(|_| r.random_range(0..5usize)).collect();
    (masks, priorities, order)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn nms_matches_reference(seed in any::<u64>(), n in 0usize..14, thresh in 0.0f64..1.0) {
        let (m, p, o) = random_masks(seed, n);
        prop_assert_eq!(dedupe_nms(&m, &p, &o, thresh).unwrap(), common::reference_nms(&m, &p, &o, thresh));
    }

    #[test]
    fn kept_masks_pairwise_below_threshold(seed in any::<u64>(), n in 1usize..14) {
        let (m, p, o) = random_masks(seed, n);
        let kept = dedupe_nms(&m, &p, &o, 0.5).unwrap();
        for (a, &i) in kept.iter().enumerate() {
            for &k in &kept[a + 1..] {
                prop_assert!(common::brute_iou(&m[i], &m[k]) <= 0.5);
            }
        }
        // The best-ranked mask always survives.
        prop_assert_eq!(kept[0], common::reference_nms(&m, &p, &o, 0.5)[0]);
    }

    #[test]
    fn fusion_is_affine(alpha in 0.0f64..=1.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let s = fuse(alpha, a, b);
        prop_assert!((s.s - (alpha * a + (1.0 - alpha) * b)).abs() <= 1e-12);
        prop_assert_eq!((s.s_frm, s.s_vid), (a, b));
    }
}

#[test]
fn nms_is_deterministic() {
    let (m, p, o) = random_masks(5, 12);
    let first = dedupe_nms(&m, &p, &o, 0.3).unwrap();
    for _ in 0..5 {
        assert_eq!(dedupe_nms(&m, &p, &o, 0.3).unwrap(), first);
    }
}

#[test]
fn fusion_endpoints_are_exact() {
    assert_eq!(fuse(1.0, 0.37, -0.2).s, 0.37);
    assert_eq!(fuse(0.0, 0.37, -0.2).s, -0.2);
}

#[test]
fn keyframe_volume_applies_logit_before_pooling() {
    let mut m = Array2::zeros((4, 4));
    m[[0, 0]] = 1.0;
    let v = keyframe_volume(&[m.clone()], &[0], (2, 2), 1e-4).unwrap();
    let l = logit_transform(&m, 1e-4).unwrap();
    let want = (l[[0, 0]] + l[[0, 1]] + l[[1, 0]] + l[[1, 1]]) / 4.0;
    assert!((v[[0, 0, 0]] - want).abs() < 1e-12);
    assert!((v[[0, 1, 1]] - l[[3, 3]]).abs() < 1e-12);
}

#[test]
fn binarize_uses_inclusive_threshold() {
    let m = Array2::from_shape_vec((1, 3), vec![0.49, 0.5, 0.9]).unwrap();
    assert_eq!(binarize_mask(&m, 0.5).into_raw_vec_and_offset().0, vec![0, 1, 1]);
}
