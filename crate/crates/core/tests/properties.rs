//! Randomized invariants across the library.

use dcnet::autograd::Tape;
use dcnet::auxmaps::{edge_map, BinaryMask};
use dcnet::erf::{erf_area, ErfMap};
use dcnet::io::{decode_pnm, decode_tensor, encode_pgm, encode_tensor};
use dcnet::metrics::{e_measure_mean, mae, max_f, pr_and_f_curves, s_measure, weighted_f, MetricConfig};
use dcnet::ops::conv2d;
use dcnet::reparam::{execute_merged, merge_parallel_convs};
use dcnet::{ConvSpec, Tensor};
use proptest::prelude::*;

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-1.0f32..1.0, len).prop_map(move |d| Tensor::new(shape, d).unwrap())
}

fn image_and_mask(h: usize, w: usize) -> impl Strategy<Value = (Tensor, BinaryMask)> {
    (
        prop::collection::vec(0.0f32..=1.0, h * w),
        prop::collection::vec(any::<bool>(), h * w),
    )
        .prop_map(move |(p, g)| (Tensor::new([1, 1, h, w], p).unwrap(), BinaryMask::new(h, w, g).unwrap()))
}

fn blob_mask() -> impl Strategy<Value = BinaryMask> {
    (
        8usize..24,
        8usize..24,
        prop::collection::vec((0usize..24, 0usize..24, 1usize..8), 1..4),
    )
        .prop_map(|(h, w, discs)| {
            BinaryMask::from_fn(h, w, |y, x| {
                discs.iter().any(|&(cy, cx, r)| {
                    let (dy, dx) = (y as i64 - cy as i64, x as i64 - cx as i64);
                    dy * dy + dx * dx <= (r * r) as i64
                })
            })
            .unwrap()
        })
}

fn conv_case() -> impl Strategy<Value = (ConvSpec, usize, usize)> {
    (
        1usize..4,
        1usize..4,
        1usize..4,
        1usize..3,
        0usize..3,
        1usize..3,
        4usize..10,
        4usize..10,
    )
        .prop_filter_map("input too small", |(ci, co, k, s, p, d, h, w)| {
            let spec = ConvSpec::new(ci, co, k).stride(s).padding(p).dilation(d);
            spec.output_size(h, w).ok().map(|_| (spec, h, w))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_length_is_shape_product(n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6, extra in 1usize..3) {
        let len = n * c * h * w;
        prop_assert_eq!(Tensor::zeros([n, c, h, w]).len(), len);
        prop_assert!(Tensor::new([n, c, h, w], vec![0.0; len + extra]).is_err());
        prop_assert!(Tensor::new([n, c, h, w], vec![0.0; len]).is_ok());
    }

    #[test]
    fn conv_output_shape_follows_formula(case in conv_case(), n in 1usize..3) {
        let (spec, h, w) = case;
        let x = Tensor::full([n, spec.in_channels, h, w], 0.5);
        let wt = Tensor::full(spec.weight_shape(), 0.1);
        let y = conv2d(&x, &wt, None, &spec).unwrap();
        let axis = |size: usize, k: usize, s: usize, p: usize, d: usize| (size + 2 * p - d * (k - 1) - 1) / s + 1;
        let ho = axis(h, spec.kernel.0, spec.stride.0, spec.padding.0, spec.dilation.0);
        let wo = axis(w, spec.kernel.1, spec.stride.1, spec.padding.1, spec.dilation.1);
        prop_assert_eq!(y.shape(), [n, spec.out_channels, ho, wo]);
    }

    #[test]
    fn conv_is_linear_in_its_input(
        (a, b, x, y, wt) in (-2.0f32..2.0, -2.0f32..2.0, tensor([1, 2, 7, 6]), tensor([1, 2, 7, 6]), tensor([3, 2, 3, 3]))
    ) {
        let spec = ConvSpec::same3x3(2, 3, 2);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &wt, None, &spec).unwrap();
        let (cx, cy) = (conv2d(&x, &wt, None, &spec).unwrap(), conv2d(&y, &wt, None, &spec).unwrap());
        let rhs = cx.zip_map(&cy, |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-4);
    }

    #[test]
    fn merged_branches_match_separate_convs(
        x in tensor([2, 3, 9, 9]),
        dils in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        let specs: Vec<ConvSpec> = dils.iter().map(|&d| ConvSpec::same3x3(3, 2, d)).collect();
        let weights: Vec<Tensor> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Tensor::from_fn(s.weight_shape(), |o, c, y, x| {
                    let k = seed.wrapping_add((i * 1000 + o * 100 + c * 10 + y * 3 + x) as u64);
                    ((k % 97) as f32 / 48.5) - 1.0
                })
            })
            .collect();
        let bias = Tensor::vector(vec![0.25, -0.5]);
        let branches: Vec<_> = specs.iter().zip(&weights).map(|(s, w)| (*s, w, Some(&bias))).collect();
        let plan = merge_parallel_convs(&branches).unwrap();
        let (outs, _) = execute_merged(&plan, &[&x]).unwrap();
        for ((s, w), got) in specs.iter().zip(&weights).zip(&outs) {
            let want = conv2d(&x, w, Some(&bias), s).unwrap();
            prop_assert!(got.max_abs_diff(&want).unwrap() < 1e-5);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval((p, g) in image_and_mask(9, 11)) {
        let cfg = MetricConfig::default();
        let values = [
            mae(&p, &g).unwrap(),
            max_f(&pr_and_f_curves(&p, &g, &cfg).unwrap()),
            weighted_f(&p, &g, &cfg).unwrap().score,
            s_measure(&p, &g, &cfg).unwrap(),
            e_measure_mean(&p, &g, &cfg).unwrap(),
        ];
        for v in values {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn mae_is_symmetric_under_complement((p, g) in image_and_mask(7, 8)) {
        let inv_p = p.map(|v| 1.0 - v);
        let inv_g = BinaryMask::from_fn(g.height(), g.width(), |y, x| !g.get(y, x)).unwrap();
        prop_assert!((mae(&p, &g).unwrap() - mae(&inv_p, &inv_g).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn max_f_ignores_order_preserving_relabeling(
        levels in prop::collection::vec(0u8..128, 80),
        gt in prop::collection::vec(any::<bool>(), 80),
    ) {
        let g = BinaryMask::new(8, 10, gt).unwrap();
        let make = |scale: f32| {
            Tensor::new([1, 1, 8, 10], levels.iter().map(|&l| l as f32 * scale / 255.0).collect()).unwrap()
        };
        let cfg = MetricConfig::default();
        let a = max_f(&pr_and_f_curves(&make(1.0), &g, &cfg).unwrap());
        let b = max_f(&pr_and_f_curves(&make(2.0), &g, &cfg).unwrap());
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn erf_area_shrinks_as_tau_grows(values in prop::collection::vec(0.0f64..=1.0, 36), t1 in 0.001f64..0.999, t2 in 0.001f64..0.999) {
        let map = ErfMap { height: 6, width: 6, values };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(erf_area(&map, lo).unwrap() >= erf_area(&map, hi).unwrap());
    }

    #[test]
    fn tensor_codec_round_trips(t in (1usize..3, 1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(n, c, h, w)| tensor([n, c, h, w]))) {
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn pgm_round_trips_quantized_levels(h in 1usize..9, w in 1usize..9, seed in any::<u32>()) {
        let t = Tensor::from_fn([1, 1, h, w], |_, _, y, x| {
            ((seed as usize).wrapping_add(y * 31 + x * 7) % 256) as f32 / 255.0
        });
        let back = decode_pnm(&encode_pgm(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn edge_bands_are_nested(mask in blob_mask(), w1 in 1usize..6, w2 in 1usize..6) {
        let (lo, hi) = (w1.min(w2), w1.max(w2));
        let a = edge_map(&mask, lo).unwrap();
        let b = edge_map(&mask, hi).unwrap();
        prop_assert!(a.is_subset_of(&b));
        prop_assert!(b.is_subset_of(&mask));
    }

    #[test]
    fn backward_leaves_forward_values_untouched(x in tensor([2, 2, 6, 6]), wt in tensor([2, 2, 3, 3])) {
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let wv = tape.leaf(wt);
        let y = tape.conv2d(xv, wv, None, &ConvSpec::same3x3(2, 2, 1)).unwrap();
        let r = tape.relu(y);
        let s = tape.sigmoid(r);
        let loss = tape.sum(s);
        let before: Vec<Tensor> = [xv, wv, y, r, s, loss].iter().map(|&v| tape.value(v).clone()).collect();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        for (v, b) in [xv, wv, y, r, s, loss].iter().zip(&before) {
            prop_assert_eq!(tape.value(*v), b);
        }
    }
}
