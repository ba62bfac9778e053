use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pyraflow::cues::{build_cue_stack, fwd_bwd_warp, out_of_image, reverse_flow, uniqueness_density};
use pyraflow::grid::FlowField;

fn hat(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Every target gathers from every source: `O(N^2)` evaluation of the
/// weighted mean of `-F21`.
fn direct_reverse(f21: &FlowField) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (f21.height(), f21.width());
    let mut flow = vec![0.0; 2 * h * w];
    let mut dens = vec![0.0; h * w];
    for ty in 0..h {
        for tx in 0..w {
            let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
            for sy in 0..h {
                for sx in 0..w {
                    if !f21.is_valid(sx, sy) {
                        continue;
                    }
                    let (u, v) = f21.get(sx, sy);
                    let wt = hat(tx as f64 - (sx as f64 + u)) * hat(ty as f64 - (sy as f64 + v));
                    su -= wt * u;
                    sv -= wt * v;
                    sw += wt;
                }
            }
            let i = ty * w + tx;
            dens[i] = sw;
            if sw > 0.0 {
                flow[2 * i] = su / sw;
                flow[2 * i + 1] = sv / sw;
            }
        }
    }
    (flow, dens)
}

#[test]
fn splatting_matches_direct_gather() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let f21 = FlowField::from_fn(8, 8, |_, _| (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)));
        let (rev, den) = reverse_flow(&f21).unwrap();
        let (oflow, oden) = direct_reverse(&f21);
        for (a, b) in rev.data().iter().zip(&oflow) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in den.iter().zip(&oden) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn exact_inverse_translation() {
    let (h, w, t) = (5, 9, 2);
    let f12 = FlowField::constant(h, w, t as f64, 0.0);
    let f21 = FlowField::constant(h, w, -(t as f64), 0.0);
    let fb = fwd_bwd_warp(&f12, &f21).unwrap();
    let (rev, _) = reverse_flow(&f21).unwrap();
    for y in 0..h {
        for x in 0..w - t {
            assert_eq!(fb.get(x, y), (t as f64, 0.0));
            assert_eq!(rev.get(x, y), (t as f64, 0.0));
        }
    }
}

#[test]
fn translation_density_and_vacated_strip() {
    let f21 = FlowField::constant(3, 10, 3.0, 0.0);
    let den = uniqueness_density(&f21).unwrap();
    for y in 0..3 {
        for x in 0..10 {
            assert_eq!(den[y * 10 + x], if x < 3 { 0.0 } else { 1.0 });
        }
    }
    let (rev, _) = reverse_flow(&f21).unwrap();
    assert_eq!(rev.get(1, 1), (0.0, 0.0));
}

#[test]
fn stack_is_composition_of_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f12 = FlowField::from_fn(6, 7, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
    let f21 = FlowField::from_fn(6, 7, |_, _| (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
    let (fwd, bwd) = build_cue_stack(&f12, &f21).unwrap();
    assert_eq!(fwd.fb_flow, fwd_bwd_warp(&f12, &f21).unwrap());
    assert_eq!((fwd.rev_flow.clone(), fwd.density.clone()), reverse_flow(&f21).unwrap());
    assert_eq!(fwd.oob, out_of_image(&f12));
    assert_eq!(bwd.fb_flow, fwd_bwd_warp(&f21, &f12).unwrap());
    assert_eq!(bwd.density, uniqueness_density(&f12).unwrap());
    assert_eq!(bwd.oob, out_of_image(&f21));
    assert!(build_cue_stack(&f12, &FlowField::zeros(6, 6)).is_err());
}

proptest! {
    #[test]
    fn mass_is_conserved_away_from_borders(
        data in prop::collection::vec(-1.0..1.0f64, 2 * 8 * 8),
    ) {
        // sources in the inner 4x4 with |flow| < 1 keep every footprint inside
        let mut f = FlowField::new(8, 8, data).unwrap();
        let valid: Vec<bool> = (0..64).map(|i| (2..6).contains(&(i % 8)) && (2..6).contains(&(i / 8))).collect();
        f = f.with_valid(valid).unwrap();
        let den = uniqueness_density(&f).unwrap();
        prop_assert!((den.iter().sum::<f64>() - 16.0).abs() < 1e-9);
    }

    #[test]
    fn rigid_integer_translation_recovers_flow(tx in -3i64..=3, ty in -3i64..=3) {
        let (h, w) = (7usize, 8usize);
        let f12 = FlowField::constant(h, w, tx as f64, ty as f64);
        let f21 = FlowField::constant(h, w, -tx as f64, -ty as f64);
        let fb = fwd_bwd_warp(&f12, &f21).unwrap();
        let (rev, _) = reverse_flow(&f21).unwrap();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (x2, y2) = (x + tx, y + ty);
                if x2 < 0 || y2 < 0 || x2 >= w as i64 || y2 >= h as i64 {
                    continue;
                }
                prop_assert_eq!(fb.get(x as usize, y as usize), (tx as f64, ty as f64));
                prop_assert_eq!(rev.get(x as usize, y as usize), (tx as f64, ty as f64));
            }
        }
    }

    #[test]
    fn splatting_is_deterministic(data in prop::collection::vec(-3.0..3.0f64, 2 * 5 * 6)) {
        let f = FlowField::new(5, 6, data).unwrap();
        prop_assert_eq!(reverse_flow(&f).unwrap(), reverse_flow(&f).unwrap());
    }
}
