//! Finite-difference checks of every analytic gradient in the crate.
//!
//! Each suite draws random instances whose sample coordinates keep
//! fractional parts in `[0.2, 0.8]`, so a central difference with
//! `h = 1e-3` never crosses a cell boundary. SAD entries whose residual
//! comes within 0.01 of zero get no upstream weight, so every term that
//! enters the objective keeps its sign over the stencil.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost_volume::{cost_volume, cv_grad_wrt_flow, CvMode, SearchRange};
use crate::error::{Error, Result};
use crate::grid::{bilinear_sample, bilinear_sample_grad, sample_into, upsample_flow, upsample_flow_adjoint, FlowField, Image};
use crate::toy::data_term;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, for gradients that are ~0.
pub const ABS_FLOOR: f64 = 1e-6;

/// Factor applied to analytic gradients when a suite is deliberately broken.
pub const PERTURB_FACTOR: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    Bilinear,
    SampleCorr,
    SampleSad,
    WarpCorr,
    WarpSad,
    DataTerm,
    CrossLevel,
    UpsampleAdjoint,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Bilinear,
        Suite::SampleCorr,
        Suite::SampleSad,
        Suite::WarpCorr,
        Suite::WarpSad,
        Suite::DataTerm,
        Suite::CrossLevel,
        Suite::UpsampleAdjoint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bilinear => "bilinear",
            Suite::SampleCorr => "sample-corr",
            Suite::SampleSad => "sample-sad",
            Suite::WarpCorr => "warp-corr",
            Suite::WarpSad => "warp-sad",
            Suite::DataTerm => "data-term",
            Suite::CrossLevel => "cross-level",
            Suite::UpsampleAdjoint => "upsample-adjoint",
        }
    }

    pub fn parse(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn frac_coord(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo..hi) as f64 + rng.random_range(0.2..0.8)
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
}

/// Flow whose components all have fractional parts in `[0.2, 0.8]`.
fn random_flow(rng: &mut ChaCha8Rng, h: usize, w: usize, span: i64) -> FlowField {
    FlowField::from_fn(h, w, |_, _| (frac_coord(rng, -span, span), frac_coord(rng, -span, span)))
}

/// Largest relative error over all flow components of a scalar objective.
fn check_flow_grad(
    flow: &FlowField,
    analytic: &FlowField,
    scale: f64,
    mut objective: impl FnMut(&FlowField) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut probe = flow.clone();
    for i in 0..flow.data().len() {
        let x0 = flow.data()[i];
        probe.data_mut()[i] = x0 + STEP;
        let fp = objective(&probe)?;
        probe.data_mut()[i] = x0 - STEP;
        let fm = objective(&probe)?;
        probe.data_mut()[i] = x0;
        let numeric = (fp - fm) / (2.0 * STEP);
        worst = worst.max(rel_err(scale * analytic.data()[i], numeric));
    }
    Ok(worst)
}

fn bilinear_instance(rng: &mut ChaCha8Rng, scale: f64) -> Result<f64> {
    let img = random_image(rng, 8, 8, 2);
    let (x, y) = (frac_coord(rng, 0, 7), frac_coord(rng, 0, 7));
    let g = bilinear_sample_grad(&img, x, y)?;
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        let nu = (bilinear_sample(&img, x + STEP, y)?[c] - bilinear_sample(&img, x - STEP, y)?[c]) / (2.0 * STEP);
        let nv = (bilinear_sample(&img, x, y + STEP)?[c] - bilinear_sample(&img, x, y - STEP)?[c]) / (2.0 * STEP);
        worst = worst.max(rel_err(scale * g.d_value_d_u[c], nu));
        worst = worst.max(rel_err(scale * g.d_value_d_v[c], nv));
    }
    Ok(worst)
}

/// Cost-volume entries (offset-major) with a SAD residual within 0.01 of zero.
fn sad_kinks(mode: CvMode, i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange) -> Vec<bool> {
    let (h, w, c) = (i1.height(), i1.width(), i1.channels());
    let n = h * w;
    let mut s = vec![0.0; c];
    let mut out = vec![false; r.len() * n];
    for y in 0..h {
        for x in 0..w {
            for k in 0..r.len() {
                let (du, dv) = r.offset(k);
                let (px, py) = if mode.is_warp() {
                    // padded warp: the probe cell carries the flow of its clamped position
                    let (qx, qy) = (x as i64 + du, y as i64 + dv);
                    let (u, v) = flow.get(qx.clamp(0, w as i64 - 1) as usize, qy.clamp(0, h as i64 - 1) as usize);
                    (qx as f64 + u, qy as f64 + v)
                } else {
                    let (u, v) = flow.get(x, y);
                    (x as f64 + du as f64 + u, y as f64 + dv as f64 + v)
                };
                sample_into(i2, px, py, &mut s);
                out[k * n + y * w + x] = i1.pixel(x, y).iter().zip(&s).any(|(a, b)| (a - b).abs() < 0.01);
            }
        }
    }
    out
}

fn cost_volume_instance(rng: &mut ChaCha8Rng, mode: CvMode, scale: f64) -> Result<f64> {
    let (h, w, c) = (5, 6, 2);
    let r = SearchRange::new(1);
    let i1 = random_image(rng, h, w, c);
    let i2 = random_image(rng, h, w, c);
    let flow = random_flow(rng, h, w, 2);
    let mut upstream: Vec<f64> = (0..r.len() * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    if mode.is_sad() {
        let kinks = sad_kinks(mode, &i1, &i2, &flow, r);
        upstream.iter_mut().zip(kinks).filter(|(_, k)| *k).for_each(|(u, _)| *u = 0.0);
    }
    let analytic = cv_grad_wrt_flow(mode, &i1, &i2, &flow, r, &upstream, false)?;
    check_flow_grad(&flow, &analytic, scale, |f| {
        let cv = cost_volume(mode, &i1, &i2, f, r)?;
        Ok(cv.data.iter().zip(&upstream).map(|(a, b)| a * b).sum())
    })
}

/// A wide Charbonnier scale keeps third derivatives, and so the
/// central-difference error, small.
const CHECK_EPS: f64 = 20.0;

fn data_term_instance(rng: &mut ChaCha8Rng, scale: f64) -> Result<f64> {
    let (h, w) = (6, 7);
    let i1 = random_image(rng, h, w, 2);
    let i2 = random_image(rng, h, w, 2);
    let flow = random_flow(rng, h, w, 2);
    let eps = CHECK_EPS;
    let (_, analytic) = data_term(&i1, &i2, &flow, eps);
    check_flow_grad(&flow, &analytic, scale, |f| Ok(data_term(&i1, &i2, f, eps).0))
}

/// Partial of the fine loss with respect to the coarse flow, through the
/// upsampler: `upsample^T` of the fine-flow gradient.
fn cross_level_instance(rng: &mut ChaCha8Rng, scale: f64) -> Result<f64> {
    let (h, w) = (8, 10);
    let (hc, wc) = (4, 5);
    let i1 = random_image(rng, h, w, 2);
    let i2 = random_image(rng, h, w, 2);
    let coarse = FlowField::from_fn(hc, wc, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let target = random_flow(rng, h, w, 2);
    // residual chosen so the fine flow has safe fractional parts
    let up = upsample_flow(&coarse, Some((h, w)));
    let mut residual = target.clone();
    residual.data_mut().iter_mut().zip(up.data()).for_each(|(r, u)| *r -= u);
    let eps = CHECK_EPS;
    let (_, g) = data_term(&i1, &i2, &target, eps);
    let analytic = upsample_flow_adjoint(&g, hc, wc);
    // perturbations of 1e-3 move fine coordinates by at most 1e-3 * 2
    check_flow_grad(&coarse, &analytic, scale, |c| {
        let mut fine = upsample_flow(c, Some((h, w)));
        fine.data_mut().iter_mut().zip(residual.data()).for_each(|(f, r)| *f += r);
        Ok(data_term(&i1, &i2, &fine, eps).0)
    })
}

/// Dot-product test `<up(a), g> = <a, up^T g>`.
fn upsample_adjoint_instance(rng: &mut ChaCha8Rng, scale: f64) -> Result<f64> {
    let (hc, wc) = (rng.random_range(1..6), rng.random_range(1..6));
    let (h, w) = (2 * hc - rng.random_range(0..2), 2 * wc - rng.random_range(0..2));
    let a = FlowField::from_fn(hc, wc, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let g = FlowField::from_fn(h, w, |_, _| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let lhs: f64 = upsample_flow(&a, Some((h, w))).data().iter().zip(g.data()).map(|(p, q)| p * q).sum();
    let adj = upsample_flow_adjoint(&g, hc, wc);
    let rhs: f64 = a.data().iter().zip(adj.data()).map(|(p, q)| p * q).sum();
    Ok(rel_err(scale * rhs, lhs))
}

fn run_instance(suite: Suite, rng: &mut ChaCha8Rng, scale: f64) -> Result<f64> {
    match suite {
        Suite::Bilinear => bilinear_instance(rng, scale),
        Suite::SampleCorr => cost_volume_instance(rng, CvMode::SampleCorr, scale),
        Suite::SampleSad => cost_volume_instance(rng, CvMode::SampleSad, scale),
        Suite::WarpCorr => cost_volume_instance(rng, CvMode::WarpCorr, scale),
        Suite::WarpSad => cost_volume_instance(rng, CvMode::WarpSad, scale),
        Suite::DataTerm => data_term_instance(rng, scale),
        Suite::CrossLevel => cross_level_instance(rng, scale),
        Suite::UpsampleAdjoint => upsample_adjoint_instance(rng, scale),
    }
}

/// Runs `instances` random instances of one suite. With `perturb`, analytic
/// gradients are scaled by [`PERTURB_FACTOR`], which must make it fail.
pub fn run_suite(suite: Suite, instances: usize, seed: u64, perturb: bool) -> Result<SuiteReport> {
    if instances == 0 {
        return Err(Error::Config("a suite needs at least one instance".into()));
    }
    let scale = if perturb { PERTURB_FACTOR } else { 1.0 };
    let errs: Vec<f64> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64));
            run_instance(suite, &mut rng, scale)
        })
        .collect::<Result<_>>()?;
    Ok(SuiteReport {
        suite,
        instances,
        failures: errs.iter().filter(|&&e| e.is_nan() || e > REL_TOL).count(),
        max_rel_err: errs.iter().copied().fold(0.0, f64::max),
    })
}

/// Every suite, perturbing the ones listed.
pub fn run_all(instances: usize, seed: u64, perturbed: &[Suite]) -> Result<Vec<SuiteReport>> {
    Suite::ALL.iter().map(|&s| run_suite(s, instances, seed, perturbed.contains(&s))).collect()
}
