//! Warping- and sampling-based cost volumes over a square integer search
//! window, their analytic gradients with respect to the incoming coarse flow,
//! and winner-take-all decoding.
//!
//! Scores are channel means: correlation `sum_c a_c b_c / C`, SAD
//! `sum_c |a_c - b_c| / C`. Correlation is a similarity (argmax), SAD a cost
//! (argmin).
//!
//! Storage is offset-major: entry `(x, y, du, dv)` lives at
//! `k * H * W + y * W + x` with `k = (dv + D) * (2D + 1) + (du + D)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{sample_grad_into, sample_into, FlowField, Image};

/// Search window `[-delta, delta]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchRange {
    pub delta: usize,
}

impl SearchRange {
    pub fn new(delta: usize) -> Self {
        Self { delta }
    }

    pub fn side(&self) -> usize {
        2 * self.delta + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Offset `(du, dv)` of plane `k`.
    pub fn offset(&self, k: usize) -> (i64, i64) {
        let d = self.delta as i64;
        let side = self.side();
        ((k % side) as i64 - d, (k / side) as i64 - d)
    }

    /// Plane index of offset `(du, dv)`; `None` outside the window.
    pub fn index(&self, du: i64, dv: i64) -> Option<usize> {
        let d = self.delta as i64;
        if du.abs() > d || dv.abs() > d {
            return None;
        }
        Some(((dv + d) as usize) * self.side() + (du + d) as usize)
    }
}

/// Which construction builds the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvMode {
    /// Correlate against the image warped by the coarse flow.
    WarpCorr,
    /// SAD against the image warped by the coarse flow.
    WarpSad,
    /// Correlate against the original image, flow used as an offset.
    SampleCorr,
    /// SAD against the original image, flow used as an offset.
    SampleSad,
}

impl CvMode {
    pub fn is_warp(self) -> bool {
        matches!(self, CvMode::WarpCorr | CvMode::WarpSad)
    }

    pub fn is_sad(self) -> bool {
        matches!(self, CvMode::WarpSad | CvMode::SampleSad)
    }

    pub fn from_parts(warp: bool, sad: bool) -> Self {
        match (warp, sad) {
            (true, false) => CvMode::WarpCorr,
            (true, true) => CvMode::WarpSad,
            (false, false) => CvMode::SampleCorr,
            (false, true) => CvMode::SampleSad,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub height: usize,
    pub width: usize,
    pub range: SearchRange,
    pub mode: CvMode,
    pub data: Vec<f64>,
}

impl CostVolume {
    pub fn get(&self, x: usize, y: usize, du: i64, dv: i64) -> f64 {
        let k = self.range.index(du, dv).expect("offset inside the search window");
        self.data[k * self.height * self.width + y * self.width + x]
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    /// Best offset per pixel (argmax for correlation, argmin for SAD). Ties go
    /// to the smallest `|delta|`, then to the first offset in row-major order.
    pub fn winner_take_all(&self) -> Vec<(i64, i64)> {
        let n = self.height * self.width;
        let order = tie_order(self.range);
        (0..n)
            .map(|p| {
                let mut best = order[0];
                let mut best_score = self.data[best * n + p];
                for &k in &order[1..] {
                    let s = self.data[k * n + p];
                    let better = if self.mode.is_sad() { s < best_score } else { s > best_score };
                    if better {
                        best = k;
                        best_score = s;
                    }
                }
                self.range.offset(best)
            })
            .collect()
    }
}

/// Plane indices sorted by `(du^2 + dv^2, k)`, so a strict comparison keeps
/// the preferred offset on ties.
fn tie_order(r: SearchRange) -> Vec<usize> {
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by_key(|&k| {
        let (du, dv) = r.offset(k);
        (du * du + dv * dv, k)
    });
    order
}

/// Per-pixel gradient of a scalar objective with respect to the coarse flow.
pub type FlowGradField = FlowField;

fn check_inputs(i1: &Image, i2: &Image, flow: &FlowField) -> Result<()> {
    if !i1.same_shape(i2) {
        return Err(Error::Shape(format!(
            "I1 is {}x{}x{}, I2 is {}x{}x{}",
            i1.height(),
            i1.width(),
            i1.channels(),
            i2.height(),
            i2.width(),
            i2.channels()
        )));
    }
    if !flow.same_size(i1.height(), i1.width()) {
        return Err(Error::Shape(format!(
            "flow is {}x{}, images are {}x{}",
            flow.height(),
            flow.width(),
            i1.height(),
            i1.width()
        )));
    }
    flow.check_finite()
}

#[inline]
fn score(sad: bool, a: &[f64], b: &[f64]) -> f64 {
    let c = a.len() as f64;
    if sad {
        a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / c
    } else {
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / c
    }
}

/// `I2` warped by the flow on a grid padded by `pad` on every side:
/// `W(q) = I2(q + F(clamp(q)))`. Padding lets offsets probe past the border
/// with the flow of the nearest pixel, so a constant flow gives the same
/// probe positions as sampling.
struct PaddedWarp {
    pad: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl PaddedWarp {
    fn new(i2: &Image, flow: &FlowField, pad: usize) -> Self {
        let (h, w, c) = (i2.height(), i2.width(), i2.channels());
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut values = vec![0.0; ph * pw * c];
        for qy in 0..ph {
            for qx in 0..pw {
                let (x, y, u, v) = padded_probe(flow, qx, qy, pad);
                let i = (qy * pw + qx) * c;
                sample_into(i2, x + u, y + v, &mut values[i..i + c]);
            }
        }
        Self { pad, width: pw, channels: c, values }
    }

    fn at(&self, x: i64, y: i64) -> &[f64] {
        let qx = (x + self.pad as i64) as usize;
        let qy = (y + self.pad as i64) as usize;
        let i = (qy * self.width + qx) * self.channels;
        &self.values[i..i + self.channels]
    }
}

/// Position of padded cell `(qx, qy)` in image coordinates and the flow of
/// the nearest in-image pixel.
fn padded_probe(flow: &FlowField, qx: usize, qy: usize, pad: usize) -> (f64, f64, f64, f64) {
    let x = qx as i64 - pad as i64;
    let y = qy as i64 - pad as i64;
    let px = x.clamp(0, flow.width() as i64 - 1) as usize;
    let py = y.clamp(0, flow.height() as i64 - 1) as usize;
    let (u, v) = flow.get(px, py);
    (x as f64, y as f64, u, v)
}

/// Builds the cost volume for `mode`.
pub fn cost_volume(mode: CvMode, i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange) -> Result<CostVolume> {
    check_inputs(i1, i2, flow)?;
    let (h, w, c) = (i1.height(), i1.width(), i1.channels());
    let n = h * w;
    let sad = mode.is_sad();
    let mut data = vec![0.0; r.len() * n];
    if mode.is_warp() {
        let warped = PaddedWarp::new(i2, flow, r.delta);
        data.par_chunks_mut(n).enumerate().for_each(|(k, plane)| {
            let (du, dv) = r.offset(k);
            for y in 0..h {
                for x in 0..w {
                    let b = warped.at(x as i64 + du, y as i64 + dv);
                    plane[y * w + x] = score(sad, i1.pixel(x, y), b);
                }
            }
        });
    } else {
        data.par_chunks_mut(n).enumerate().for_each(|(k, plane)| {
            let (du, dv) = r.offset(k);
            let mut b = vec![0.0; c];
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = flow.get(x, y);
                    sample_into(i2, x as f64 + du as f64 + u, y as f64 + dv as f64 + v, &mut b);
                    plane[y * w + x] = score(sad, i1.pixel(x, y), &b);
                }
            }
        });
    }
    Ok(CostVolume { height: h, width: w, range: r, mode, data })
}

/// Correlation against `I2` warped by the coarse flow (two-stage).
pub fn cv_warp_corr(i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange) -> Result<CostVolume> {
    cost_volume(CvMode::WarpCorr, i1, i2, flow, r)
}

/// Correlation against `I2` probed at `x + delta + F(x)`.
pub fn cv_sample_corr(i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange) -> Result<CostVolume> {
    cost_volume(CvMode::SampleCorr, i1, i2, flow, r)
}

/// SAD against `I2` probed at `x + delta + F(x)`.
pub fn cv_sample_sad(i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange) -> Result<CostVolume> {
    cost_volume(CvMode::SampleSad, i1, i2, flow, r)
}

/// Whether each probe of a sampling-mode volume lands inside the image,
/// laid out like [`CostVolume::data`].
pub fn probe_in_bounds(flow: &FlowField, r: SearchRange) -> Vec<bool> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(r.len() * h * w);
    for k in 0..r.len() {
        let (du, dv) = r.offset(k);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = flow.get(x, y);
                let px = x as f64 + du as f64 + u;
                let py = y as f64 + dv as f64 + v;
                out.push(px >= 0.0 && px <= (w - 1) as f64 && py >= 0.0 && py <= (h - 1) as f64);
            }
        }
    }
    out
}

/// Derivative of one score with respect to the probed `I2` value, per channel.
#[inline]
fn d_score(sad: bool, a: &[f64], b: &[f64], out: &mut [f64]) {
    let c = a.len() as f64;
    for k in 0..a.len() {
        out[k] = if sad {
            let d = b[k] - a[k];
            if d > 0.0 {
                1.0 / c
            } else if d < 0.0 {
                -1.0 / c
            } else {
                0.0
            }
        } else {
            a[k] / c
        };
    }
}

/// Gradient of `sum_{x, delta} upstream(x, delta) * V(x, delta)` with respect
/// to the coarse flow. With `stop_gradient` the result is identically zero.
///
/// SAD uses `sign(0) = 0` at exact matches.
pub fn cv_grad_wrt_flow(
    mode: CvMode,
    i1: &Image,
    i2: &Image,
    flow: &FlowField,
    r: SearchRange,
    upstream: &[f64],
    stop_gradient: bool,
) -> Result<FlowGradField> {
    check_inputs(i1, i2, flow)?;
    let (h, w, c) = (i1.height(), i1.width(), i1.channels());
    let n = h * w;
    if upstream.len() != r.len() * n {
        return Err(Error::Shape(format!(
            "upstream has {} entries, cost volume has {}",
            upstream.len(),
            r.len() * n
        )));
    }
    if stop_gradient {
        return Ok(FlowField::zeros(h, w));
    }
    if upstream.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("upstream gradient".into()));
    }
    let sad = mode.is_sad();
    let mut grad = vec![0.0; 2 * n];
    if mode.is_warp() {
        warp_grad(i1, i2, flow, r, upstream, sad, &mut grad);
    } else {
        grad.par_chunks_mut(2 * w).enumerate().for_each(|(y, row)| {
            let (mut val, mut du_c, mut dv_c, mut ds) = (vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]);
            for x in 0..w {
                let (u, v) = flow.get(x, y);
                let a = i1.pixel(x, y);
                let (mut gu, mut gv) = (0.0, 0.0);
                for k in 0..r.len() {
                    let up = upstream[k * n + y * w + x];
                    if up == 0.0 {
                        continue;
                    }
                    let (du, dv) = r.offset(k);
                    let px = x as f64 + du as f64 + u;
                    let py = y as f64 + dv as f64 + v;
                    sample_grad_into(i2, px, py, &mut val, &mut du_c, &mut dv_c);
                    d_score(sad, a, &val, &mut ds);
                    for ch in 0..c {
                        gu += up * ds[ch] * du_c[ch];
                        gv += up * ds[ch] * dv_c[ch];
                    }
                }
                row[2 * x] = gu;
                row[2 * x + 1] = gv;
            }
        });
    }
    FlowField::new(h, w, grad)
}

/// Warp mode: every padded cell `q` depends on the flow at `clamp(q)`, so the
/// gradient is scattered there. Accumulation order is fixed.
fn warp_grad(i1: &Image, i2: &Image, flow: &FlowField, r: SearchRange, upstream: &[f64], sad: bool, grad: &mut [f64]) {
    let (h, w, c) = (i1.height(), i1.width(), i1.channels());
    let n = h * w;
    let pad = r.delta;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut vals = vec![0.0; ph * pw * c];
    let mut dus = vec![0.0; ph * pw * c];
    let mut dvs = vec![0.0; ph * pw * c];
    for qy in 0..ph {
        for qx in 0..pw {
            let (x, y, u, v) = padded_probe(flow, qx, qy, pad);
            let i = (qy * pw + qx) * c;
            sample_grad_into(i2, x + u, y + v, &mut vals[i..i + c], &mut dus[i..i + c], &mut dvs[i..i + c]);
        }
    }
    let mut ds = vec![0.0; c];
    for k in 0..r.len() {
        let (du, dv) = r.offset(k);
        for y in 0..h {
            for x in 0..w {
                let up = upstream[k * n + y * w + x];
                if up == 0.0 {
                    continue;
                }
                let qx = (x as i64 + du + pad as i64) as usize;
                let qy = (y as i64 + dv + pad as i64) as usize;
                let i = (qy * pw + qx) * c;
                d_score(sad, i1.pixel(x, y), &vals[i..i + c], &mut ds);
                let px = (qx as i64 - pad as i64).clamp(0, w as i64 - 1) as usize;
                let py = (qy as i64 - pad as i64).clamp(0, h as i64 - 1) as usize;
                let t = 2 * (py * w + px);
                for ch in 0..c {
                    grad[t] += up * ds[ch] * dus[i + ch];
                    grad[t + 1] += up * ds[ch] * dvs[i + ch];
                }
            }
        }
    }
}
