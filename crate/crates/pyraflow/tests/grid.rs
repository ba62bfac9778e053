use proptest::prelude::*;

use pyraflow::grid::{
    bilinear_sample, bilinear_sample_grad, build_pyramid, downsample, upsample_flow, upsample_flow_adjoint, warp_image,
    FlowField, Image,
};
use pyraflow::toy::{gen_scene, small_object_scene};

fn affine(h: usize, w: usize, a: f64, b: f64, c: f64) -> Image {
    Image::from_fn(h, w, 1, |x, y, _| a * x as f64 + b * y as f64 + c)
}

#[test]
fn ramp_derivative_is_one() {
    let img = affine(6, 6, 1.0, 0.0, 0.0);
    let g = bilinear_sample_grad(&img, 2.3, 3.7).unwrap();
    assert_eq!(g.d_value_d_u, vec![1.0]);
    assert_eq!(g.d_value_d_v, vec![0.0]);
}

#[test]
fn border_clamp_replicates_edges() {
    let img = Image::from_fn(3, 4, 1, |x, y, _| (10 * y + x) as f64);
    assert_eq!(bilinear_sample(&img, -5.0, 1.0).unwrap(), vec![10.0]);
    assert_eq!(bilinear_sample(&img, 9.5, 2.0).unwrap(), vec![23.0]);
    assert_eq!(bilinear_sample(&img, 3.0, -0.5).unwrap(), vec![3.0]);
    let g = bilinear_sample_grad(&img, 7.0, 1.0).unwrap();
    assert_eq!(g.d_value_d_u, vec![0.0]);
}

#[test]
fn integer_coordinates_use_right_cell() {
    let img = Image::from_fn(1, 4, 1, |x, _, _| [0.0, 1.0, 5.0, 6.0][x]);
    // at x = 1 the cell [1, 2) has slope 4, the cell to the left slope 1
    assert_eq!(bilinear_sample_grad(&img, 1.0, 0.0).unwrap().d_value_d_u, vec![4.0]);
}

#[test]
fn non_finite_coordinates_are_rejected() {
    let img = affine(3, 3, 1.0, 1.0, 0.0);
    assert!(bilinear_sample(&img, f64::NAN, 0.0).is_err());
    assert!(bilinear_sample_grad(&img, 0.0, f64::INFINITY).is_err());
}

#[test]
fn pyramid_of_seven_by_five() {
    let img = Image::from_fn(5, 7, 1, |x, y, _| (x * 3 + y * 11) as f64 * 0.25 + ((x * y) % 3) as f64);
    let p = build_pyramid(&img, 2).unwrap();
    assert_eq!(p.len(), 2);
    let l1 = &p.levels[1];
    assert_eq!((l1.height(), l1.width()), (3, 4));
    for y in 0..3 {
        for x in 0..4 {
            let mut vals = Vec::new();
            for yy in 2 * y..(2 * y + 2).min(5) {
                for xx in 2 * x..(2 * x + 2).min(7) {
                    vals.push(img.at(xx, yy, 0));
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((l1.at(x, y, 0) - mean).abs() < 1e-12);
        }
    }
    assert!(build_pyramid(&img, 0).is_err());
}

#[test]
fn upsampled_linear_ramp_matches_interpolation() {
    // coarse u = 0.5 i + 0.25 j - 1, v = -i
    let coarse = FlowField::from_fn(4, 5, |x, y| (0.5 * x as f64 + 0.25 * y as f64 - 1.0, -(x as f64)));
    let up = upsample_flow(&coarse, None);
    assert_eq!((up.height(), up.width()), (8, 10));
    for y in 0..8 {
        for x in 0..10 {
            let cx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 4.0);
            let cy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 3.0);
            let (u, v) = up.get(x, y);
            assert!((u - 2.0 * (0.5 * cx + 0.25 * cy - 1.0)).abs() < 1e-12);
            assert!((v + 2.0 * cx).abs() < 1e-12);
        }
    }
    let clipped = upsample_flow(&coarse, Some((7, 9)));
    assert_eq!((clipped.height(), clipped.width()), (7, 9));
}

#[test]
fn small_object_is_ghosted_by_background_warp() {
    for seed in 0..5 {
        let s = gen_scene(&small_object_scene(seed)).unwrap();
        // what the coarse levels deliver: the box motion over the object
        let bg = FlowField::from_fn(32, 32, |x, y| {
            if s.object_mask[y * 32 + x] {
                (4.0, 0.0)
            } else {
                s.gt_flow.get(x, y)
            }
        });
        let warped = warp_image(&s.i2, &bg).unwrap();
        for (i, _) in s.object_mask.iter().enumerate().filter(|(_, &m)| m) {
            let (x, y) = (i % 32, i / 32);
            assert!((warped.at(x, y, 0) - s.i1.at(x, y, 0)).abs() > 0.1);
        }
    }
}

proptest! {
    #[test]
    fn bilinear_exact_on_affine(
        a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64,
        x in 0.0..6.0f64, y in 0.0..4.0f64,
    ) {
        let img = affine(5, 7, a, b, c);
        let v = bilinear_sample(&img, x, y).unwrap()[0];
        prop_assert!((v - (a * x + b * y + c)).abs() < 1e-9);
    }

    #[test]
    fn integer_samples_return_pixels(
        data in prop::collection::vec(-1.0..1.0f64, 24),
        x in 0usize..4, y in 0usize..3,
    ) {
        let img = Image::new(3, 4, 2, data).unwrap();
        prop_assert_eq!(bilinear_sample(&img, x as f64, y as f64).unwrap(), img.pixel(x, y).to_vec());
    }

    #[test]
    fn constant_flow_upsamples_exactly(u in -4.0..4.0f64, v in -4.0..4.0f64, h in 1usize..6, w in 1usize..6) {
        let up = upsample_flow(&FlowField::constant(h, w, u, v), None);
        prop_assert!(up.data().chunks(2).all(|p| p[0] == 2.0 * u && p[1] == 2.0 * v));
    }

    #[test]
    fn upsample_adjoint_dot_product(
        a in prop::collection::vec(-1.0..1.0f64, 2 * 3 * 4),
        g in prop::collection::vec(-1.0..1.0f64, 2 * 6 * 7),
    ) {
        let a = FlowField::new(3, 4, a).unwrap();
        let g = FlowField::new(6, 7, g).unwrap();
        let lhs: f64 = upsample_flow(&a, Some((6, 7))).data().iter().zip(g.data()).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.data().iter().zip(upsample_flow_adjoint(&g, 3, 4).data()).map(|(p, q)| p * q).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn downsample_sizes(h in 1usize..20, w in 1usize..20) {
        let d = downsample(&Image::zeros(h, w, 1));
        prop_assert_eq!((d.height(), d.width()), (h.div_ceil(2), w.div_ceil(2)));
    }
}
