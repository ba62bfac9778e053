use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pyraflow::distill::{erosion_prune, filter_masks, make_pseudo_gt, occlusion_consistency, DistillConfig};
use pyraflow::grid::{FlowField, Image};

/// Square min-filter, out-of-image neighbors count as false.
fn min_filter(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let r = r as i64;
    let mut out = vec![false; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut all = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    all &= nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && mask[(ny * w as i64 + nx) as usize];
                }
            }
            out[(y * w as i64 + x) as usize] = all;
        }
    }
    out
}

struct Inputs {
    f12: FlowField,
    f21: FlowField,
    i1: Image,
    i2: Image,
    conf: Vec<f64>,
    gt: FlowField,
}

fn random_inputs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Inputs {
    let f12 = FlowField::from_fn(h, w, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
    // a noisy inverse so that some pixels pass the occlusion test
    let f21 = FlowField::from_fn(h, w, |x, y| {
        let (u, v) = f12.get(x, y);
        (-u + rng.random_range(-0.3..0.3), -v + rng.random_range(-0.3..0.3))
    });
    let i1 = Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>());
    let i2 = Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>());
    let conf = (0..h * w).map(|_| rng.random_range(0.8..1.0)).collect();
    let valid = (0..h * w).map(|_| rng.random_bool(0.3)).collect();
    let gt = FlowField::from_fn(h, w, |x, y| {
        let (u, v) = f12.get(x, y);
        (u + rng.random_range(-4.0..4.0), v + rng.random_range(-4.0..4.0))
    })
    .with_valid(valid)
    .unwrap();
    Inputs { f12, f21, i1, i2, conf, gt }
}

#[test]
fn default_constants_classify_reference_pairs() {
    let cfg = DistillConfig::default();
    assert_eq!((cfg.occl_abs, cfg.occl_rel), (0.05, 0.01));
    for t in [-3.0, 0.5, 2.0, 7.0] {
        let f12 = FlowField::constant(6, 12, t, -t / 2.0);
        let f21 = FlowField::constant(6, 12, -t, t / 2.0);
        assert!(occlusion_consistency(&f12, &f21, &cfg).unwrap().iter().all(|&b| b));
    }
    let f12 = FlowField::constant(6, 12, 10.0, 0.0);
    let f21 = FlowField::zeros(6, 12);
    assert!(occlusion_consistency(&f12, &f21, &cfg).unwrap().iter().all(|&b| !b));
}

#[test]
fn occluded_region_is_removed_with_margin() {
    let (h, w) = (16, 20);
    let f12 = FlowField::constant(h, w, 2.0, 0.0);
    // inconsistent backward flow over a block in frame 2
    let in_block = |x: usize, y: usize| (8..12).contains(&x) && (5..9).contains(&y);
    let f21 = FlowField::from_fn(h, w, |x, y| if in_block(x, y) { (3.0, 3.0) } else { (-2.0, 0.0) });
    let img = Image::from_fn(h, w, 1, |_, _, _| 0.5);
    let conf = vec![1.0; h * w];
    let cfg = DistillConfig::default();
    let pgt = make_pseudo_gt(&f12, &f21, &img, &img, &conf, None, &cfg).unwrap();
    // a pixel is occluded exactly when its match x + 2 lands in the block
    let visible: Vec<bool> = (0..h * w).map(|i| !in_block(((i % w) + 2).min(w - 1), i / w)).collect();
    assert_eq!(pgt.valid, min_filter(&visible, h, w, cfg.erosion_radius));
    assert_eq!(pgt.flow, f12);
}

#[test]
fn any_all_false_filter_empties_the_result() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inp = random_inputs(&mut rng, 8, 8);
    let cfg = DistillConfig::default();
    let low_conf = vec![0.5; 64];
    let p = make_pseudo_gt(&inp.f12, &inp.f21, &inp.i1, &inp.i2, &low_conf, None, &cfg).unwrap();
    assert!(p.valid.iter().all(|&b| !b));
}

#[test]
fn all_pass_gives_eroded_full_mask() {
    let f = FlowField::zeros(9, 9);
    let img = Image::from_fn(9, 9, 1, |x, y, _| (x + y) as f64 / 20.0);
    let p = make_pseudo_gt(&f, &f, &img, &img, &[1.0; 81], None, &DistillConfig::default()).unwrap();
    assert_eq!(p.valid, min_filter(&[true; 81], 9, 9, 2));
    assert_eq!(p.valid.iter().filter(|&&b| b).count(), 25);
}

#[test]
fn bad_config_and_shapes_are_rejected() {
    let f = FlowField::zeros(3, 3);
    let img = Image::zeros(3, 3, 1);
    let bad = DistillConfig { photo_thresh: -1.0, ..DistillConfig::default() };
    assert!(make_pseudo_gt(&f, &f, &img, &img, &[1.0; 9], None, &bad).is_err());
    assert!(make_pseudo_gt(&f, &f, &img, &img, &[1.0; 8], None, &DistillConfig::default()).is_err());
    assert!(erosion_prune(&[true; 8], 3, 3, 1).is_err());
}

fn tightened(cfg: &DistillConfig, rng: &mut ChaCha8Rng) -> DistillConfig {
    DistillConfig {
        occl_abs: cfg.occl_abs * rng.random_range(0.0..1.0),
        occl_rel: cfg.occl_rel * rng.random_range(0.0..1.0),
        conf_min: cfg.conf_min + (1.0 - cfg.conf_min) * rng.random_range(0.0..1.0),
        gt_dist_max: cfg.gt_dist_max * rng.random_range(0.0..1.0),
        photo_thresh: cfg.photo_thresh * rng.random_range(0.0..1.0),
        erosion_radius: cfg.erosion_radius + rng.random_range(0..2),
    }
}

#[test]
fn tightening_never_adds_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let inp = random_inputs(&mut rng, 10, 12);
        let loose = DistillConfig {
            occl_abs: rng.random_range(0.0..1.0),
            occl_rel: rng.random_range(0.0..0.5),
            conf_min: rng.random_range(0.8..1.0),
            gt_dist_max: rng.random_range(0.0..6.0),
            photo_thresh: rng.random_range(0.0..0.6),
            erosion_radius: rng.random_range(0..2),
        };
        let tight = tightened(&loose, &mut rng);
        let a = make_pseudo_gt(&inp.f12, &inp.f21, &inp.i1, &inp.i2, &inp.conf, Some(&inp.gt), &loose).unwrap();
        let b = make_pseudo_gt(&inp.f12, &inp.f21, &inp.i1, &inp.i2, &inp.conf, Some(&inp.gt), &tight).unwrap();
        assert!(a.valid.iter().zip(&b.valid).all(|(&l, &t)| l || !t));
    }
}

proptest! {
    #[test]
    fn erosion_matches_min_filter(mask in prop::collection::vec(prop::bool::weighted(0.8), 9 * 11), r in 0usize..4) {
        prop_assert_eq!(erosion_prune(&mask, 9, 11, r).unwrap(), min_filter(&mask, 9, 11, r));
    }

    #[test]
    fn valid_set_is_eroded_intersection(seed in any::<u64>(), radius in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inp = random_inputs(&mut rng, 9, 10);
        let cfg = DistillConfig { erosion_radius: radius, photo_thresh: 0.5, conf_min: 0.85, ..DistillConfig::default() };
        let masks = filter_masks(&inp.f12, &inp.f21, &inp.i1, &inp.i2, &inp.conf, Some(&inp.gt), &cfg).unwrap();
        let p = make_pseudo_gt(&inp.f12, &inp.f21, &inp.i1, &inp.i2, &inp.conf, Some(&inp.gt), &cfg).unwrap();
        let inter: Vec<bool> = (0..90)
            .map(|i| masks.occlusion[i] && masks.photometric[i] && masks.confidence[i] && masks.gt_distance[i])
            .collect();
        prop_assert_eq!(p.valid, min_filter(&inter, 9, 10, radius));
    }

    #[test]
    fn confidence_threshold_oracle(conf in prop::collection::vec(0.0..1.0f64, 1..50), t in 0.0..1.0f64) {
        let cfg = DistillConfig { conf_min: t, ..DistillConfig::default() };
        let got = pyraflow::distill::confidence_filter(&conf, &cfg);
        prop_assert!(got.iter().zip(&conf).all(|(&g, &c)| g == (c >= t)));
    }
}
