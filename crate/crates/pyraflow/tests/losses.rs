use proptest::prelude::*;

use pyraflow::cost_volume::SearchRange;
use pyraflow::grid::FlowField;
use pyraflow::losses::{
    distillation_term, lmp_loss, lmp_weights, out_of_range_mask, per_pixel_epe_loss, sparse_rescale, supervised_term,
    LmpConfig, LossCombineConfig, PixelLossMap, TrainingObjective,
};

/// Optimum of `max sum w l` over `0 <= w <= cap`, `sum w <= 1` by visiting
/// every vertex: each coordinate sits at 0 or the cap except possibly one
/// that takes the remaining budget.
fn lp_optimum(losses: &[f64], cap: f64) -> f64 {
    let n = losses.len();
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << n) {
        let at_cap = mask.count_ones() as f64;
        let used = at_cap * cap;
        if used > 1.0 + 1e-12 {
            continue;
        }
        let base: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| cap * losses[i]).sum();
        best = best.max(base);
        let rest = 1.0 - used;
        if rest > 0.0 && rest <= cap {
            for j in (0..n).filter(|j| mask & (1 << j) == 0) {
                best = best.max(base + rest * losses[j]);
            }
        }
    }
    best
}

fn all_valid(losses: &[f64]) -> PixelLossMap {
    PixelLossMap::new(1, losses.len(), losses.to_vec(), vec![true; losses.len()]).unwrap()
}

#[test]
fn matches_enumeration_on_small_alphabet_instances() {
    let alphabet = [0.0, 1.0, 2.5];
    for n in 1..=6usize {
        for code in 0..3usize.pow(n as u32) {
            let losses: Vec<f64> = (0..n).map(|i| alphabet[(code / 3usize.pow(i as u32)) % 3]).collect();
            for keep in [0.2, 0.5, 0.75, 1.0] {
                let cfg = LmpConfig { keep_fraction: keep };
                let v = lmp_loss(&all_valid(&losses), &cfg).unwrap();
                let oracle = lp_optimum(&losses, 1.0 / (keep * n as f64));
                assert!((v - oracle).abs() < 1e-12, "{losses:?} keep={keep}: {v} vs {oracle}");
            }
        }
    }
}

#[test]
fn distillation_ignores_lmp() {
    let pred = FlowField::from_fn(2, 3, |x, y| (x as f64, y as f64));
    let gt = FlowField::zeros(2, 3);
    let pseudo = FlowField::constant(2, 3, 1.0, 0.0).with_valid(vec![true, false, true, true, false, true]).unwrap();
    let with = TrainingObjective { lmp: Some(LmpConfig { keep_fraction: 0.25 }), combine: LossCombineConfig::default() };
    let without = TrainingObjective { lmp: None, ..with };
    let a = with.evaluate(&pred, &gt, &pseudo).unwrap();
    let b = without.evaluate(&pred, &gt, &pseudo).unwrap();
    assert_eq!(a.distillation, b.distillation);
    assert_eq!(a.distillation, distillation_term(&pred, &pseudo).unwrap());
    assert!(a.supervised >= b.supervised);
    assert!((a.total - (0.9 * a.supervised + 0.1 * a.distillation)).abs() < 1e-12);
}

#[test]
fn supervised_term_without_lmp_is_rescaled_mean() {
    let pred = FlowField::constant(1, 4, 3.0, 4.0);
    let gt = FlowField::zeros(1, 4).with_valid(vec![true, false, false, false]).unwrap();
    assert!((supervised_term(&pred, &gt, None).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn out_of_range_pixels_can_be_masked() {
    let res = FlowField::from_fn(1, 4, |x, _| [(0.0, 0.0), (4.0, -4.0), (4.5, 0.0), (0.0, -9.0)][x]);
    let m = out_of_range_mask(&res, SearchRange::new(4));
    assert_eq!(m, vec![true, true, false, false]);
    let map = per_pixel_epe_loss(&res, &FlowField::zeros(1, 4)).unwrap().masked(&m).unwrap();
    assert_eq!(map.n_valid(), 2);
    assert_eq!(map.loss()[2], 0.0);
}

#[test]
fn loss_map_rejects_bad_input() {
    assert!(PixelLossMap::new(1, 2, vec![1.0], vec![true, true]).is_err());
    assert!(PixelLossMap::new(1, 1, vec![-1.0], vec![true]).is_err());
    assert!(PixelLossMap::new(1, 1, vec![f64::NAN], vec![true]).is_err());
}

fn losses_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (prop::collection::vec(0.0..10.0f64, n), prop::collection::vec(prop::bool::weighted(0.8), n))
    })
}

proptest! {
    #[test]
    fn weights_respect_constraints((losses, valid) in losses_strategy(), keep in 0.01..1.0f64) {
        let n = losses.len();
        let map = PixelLossMap::new(1, n, losses, valid.clone()).unwrap();
        let nv = map.n_valid();
        prop_assume!(nv > 0);
        let cfg = LmpConfig { keep_fraction: keep };
        let w = lmp_weights(&map, &cfg).unwrap();
        let cap = 1.0 / (keep * nv as f64);
        prop_assert!(w.iter().all(|&x| x >= 0.0 && x <= cap * (1.0 + 1e-12)));
        prop_assert!(w.iter().sum::<f64>() <= 1.0 + 1e-12);
        prop_assert!(w.iter().zip(&valid).all(|(&x, &v)| v || x == 0.0));
        let mean = map.loss().iter().sum::<f64>() / nv as f64;
        prop_assert!(lmp_loss(&map, &cfg).unwrap() >= mean - 1e-12);
    }

    #[test]
    fn value_matches_enumeration(losses in prop::collection::vec(0.0..5.0f64, 1..9), keep in 0.05..1.0f64) {
        let v = lmp_loss(&all_valid(&losses), &LmpConfig { keep_fraction: keep }).unwrap();
        let oracle = lp_optimum(&losses, 1.0 / (keep * losses.len() as f64));
        prop_assert!((v - oracle).abs() < 1e-9);
    }

    #[test]
    fn permutation_equivariant(losses in prop::collection::vec(0.0..5.0f64, 2..20), keep in 0.05..1.0f64, rot in 0usize..20) {
        // distinct values make the optimum unique, so weights follow the permutation
        let mut distinct = losses.clone();
        distinct.iter_mut().enumerate().for_each(|(i, l)| *l += i as f64 * 1e-6);
        let n = distinct.len();
        let r = rot % n;
        let mut rotated = distinct.clone();
        rotated.rotate_left(r);
        let cfg = LmpConfig { keep_fraction: keep };
        let w = lmp_weights(&all_valid(&distinct), &cfg).unwrap();
        let mut wr = lmp_weights(&all_valid(&rotated), &cfg).unwrap();
        wr.rotate_right(r);
        for (a, b) in w.iter().zip(&wr) {
            prop_assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rescale_preserves_valid_mean(losses in prop::collection::vec(0.0..5.0f64, 1..30), seed in any::<u64>()) {
        let n = losses.len();
        let valid: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1 || i == 0).collect();
        let map = PixelLossMap::new(1, n, losses, valid).unwrap();
        let r = sparse_rescale(&map).unwrap();
        let valid_mean = map.loss().iter().sum::<f64>() / map.n_valid() as f64;
        prop_assert!((r.mean() - valid_mean).abs() < 1e-9);
    }
}
