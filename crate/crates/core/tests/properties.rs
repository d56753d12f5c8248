//! Randomized invariants of the geometric and loss kernels.

use liga::boxes::{bev_iou_rotated, decode_residuals, encode_residuals, Box3D, BoxBEV};
use liga::eval::ap40;
use liga::geometry::DepthBinning;
use liga::losses::{imitation_layer_loss, triangle_weights, Adapter, MaskPair};
use liga::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn bev() -> impl Strategy<Value = BoxBEV> {
    (-2.0..2.0f64, -2.0..2.0f64, 0.2..4.0f64, 0.2..4.0f64, -3.2..3.2f64)
        .prop_map(|(x, z, l, w, t)| BoxBEV::new(x, z, l, w, t).unwrap())
}

fn car() -> impl Strategy<Value = Box3D> {
    (-10.0..10.0f64, 0.0..2.0f64, 3.0..40.0f64, 0.5..5.0f64, 0.5..2.0f64, 0.5..2.0f64, -3.1..3.1f64)
        .prop_map(|(x, y, z, l, w, h, t)| Box3D::new([x, y, z], [l, w, h], t, 0).unwrap())
}

fn ranked() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, usize)> {
    prop::collection::vec((any::<bool>(), 0.0..1.0f64), 0..12).prop_flat_map(|v| {
        let tp = v.iter().filter(|x| x.0).count();
        (Just(v), 0..4usize).prop_map(move |(v, extra)| {
            let (f, s) = v.into_iter().unzip();
            (f, s, tp + extra)
        })
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bev(), b in bev()) {
        let ab = bev_iou_rotated(&a, &b).unwrap();
        let ba = bev_iou_rotated(&b, &a).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((bev_iou_rotated(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_round_trip(gt in car(), anchor in car()) {
        let r = encode_residuals(&gt, &anchor).unwrap();
        let back = decode_residuals(&r, &anchor).unwrap();
        for (x, y) in back.params().iter().zip(gt.params()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn ap_is_bounded_and_a_top_hit_never_hurts((flags, scores, num_gt) in ranked()) {
        let ap = ap40(&flags, &scores, num_gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let (mut f2, mut s2) = (flags.clone(), scores.clone());
        f2.push(true);
        s2.push(2.0);
        let with_hit = ap40(&f2, &s2, num_gt + 1).unwrap();
        prop_assert!(with_hit >= ap);
    }

    #[test]
    fn triangle_weights_sum_to_one(z in 2.0..25.5f64) {
        let b = DepthBinning::new(2.0, 0.5, 48).unwrap();
        let w = triangle_weights(z, &b);
        let sum: f64 = w.iter().map(|t| t.1).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.len() <= 2);
    }

    #[test]
    fn combined_mask_is_inside_foreground(
        bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)
    ) {
        let n = bits.len();
        let fg = Tensor::new(vec![n], bits.iter().map(|b| f64::from(u8::from(b.0))).collect()).unwrap();
        let sp = Tensor::new(vec![n], bits.iter().map(|b| f64::from(u8::from(b.1))).collect()).unwrap();
        let m = MaskPair::new(fg.clone(), sp).unwrap();
        for (c, f) in m.combined().iter().zip(fg.data()) {
            prop_assert!(*c <= *f);
        }
    }

    #[test]
    fn imitation_ignores_teacher_scale(
        vals in prop::collection::vec(-2.0..2.0f64, 12),
        teach in prop::collection::vec(0.1..3.0f64, 12),
        scale in prop::collection::vec(0.1..10.0f64, 2),
    ) {
        let student = Tensor::new(vec![2, 6], vals).unwrap();
        let teacher = Tensor::new(vec![2, 6], teach.clone()).unwrap();
        let scaled: Vec<f64> = teach.iter().enumerate().map(|(i, t)| t * scale[i / 6]).collect();
        let scaled = Tensor::new(vec![2, 6], scaled).unwrap();
        let masks = MaskPair::new(
            Tensor::new(vec![6], vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap(),
            Tensor::new(vec![6], vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let value = |t: &Tensor| {
            let mut tape = Tape::new();
            let s = tape.constant(student.clone());
            let adapter = Adapter {
                weight: tape.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
                bias: tape.constant(Tensor::zeros(&[2]).unwrap()),
                relu_after: false,
            };
            let l = imitation_layer_loss(&mut tape, s, &adapter, t, &masks).unwrap();
            tape.value(l).item().unwrap()
        };
        let (a, b) = (value(&teacher), value(&scaled));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
