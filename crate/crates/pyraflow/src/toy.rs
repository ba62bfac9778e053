//! Synthetic layered scenes with integer motion, a winner-take-all
//! coarse-to-fine estimator, and a two-level flow descent that records the
//! cross-level partial gradients.
//!
//! In the descent, `coarse_flow` lives on the 2x downsampled grid and
//! `fine_residual` on the full grid. The fine loss sees
//! `upsample(coarse_flow) + fine_residual`, so it reaches the coarse flow
//! through the upsampler; that path is the one gradient stopping cuts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_volume::{cost_volume, CvMode, SearchRange};
use crate::diagnostics::{beta_eff, ncc};
use crate::error::{Error, Result};
use crate::grid::{build_pyramid, downsample, sample_grad_into, upsample_flow, upsample_flow_adjoint, FlowField, Image};

/// Where a layer sits in frame 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Full,
    Rect { x: i64, y: i64, w: i64, h: i64 },
}

impl Region {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match *self {
            Region::Full => true,
            Region::Rect { x: rx, y: ry, w, h } => x >= rx && x < rx + w && y >= ry && y < ry + h,
        }
    }
}

/// Layer appearance, defined in frame-1 coordinates (including off-image
/// positions that move into view).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Texture {
    Constant { value: f64 },
    /// Blurred uniform noise stretched to `[0, 1]`, then `0.5 + amp * (t - 0.5)`.
    Smooth { sigma: f64, amp: f64 },
    /// `Smooth` plus a column-alternating pattern of the given contrast. 2x2
    /// pooling mostly cancels the pattern, so coarse levels see only the
    /// smooth part.
    TwoScale { sigma: f64, amp: f64, contrast: f64 },
    /// Channel 0 ramps along x, channel 1 along y, plus smooth noise.
    Ramp { noise: f64 },
    /// An earlier layer's texture plus `contrast * (-1)^x`. On a region
    /// starting at an even column, 2x2 pooling cancels the stripes exactly.
    Striped { base: usize, contrast: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub region: Region,
    pub motion: (i64, i64),
    pub texture: Texture,
    /// Marks the layer as a small object for `object_mask`.
    #[serde(default)]
    pub object: bool,
}

/// Layers are listed bottom to top; the first layer should cover the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub i1: Image,
    pub i2: Image,
    pub gt_flow: FlowField,
    pub object_mask: Vec<bool>,
    /// Top layer per pixel in frame 1 and frame 2.
    pub layer1: Vec<usize>,
    pub layer2: Vec<usize>,
}

impl SyntheticScene {
    /// Pixels whose layer is still on top at `x + gt(x)` inside frame 2.
    pub fn visible_in_both(&self) -> Vec<bool> {
        let (h, w) = (self.spec.height as i64, self.spec.width as i64);
        let mut out = Vec::with_capacity(self.layer1.len());
        for y in 0..h {
            for x in 0..w {
                let l = self.layer1[(y * w + x) as usize];
                let (dx, dy) = self.spec.layers[l].motion;
                let (tx, ty) = (x + dx, y + dy);
                let inside = tx >= 0 && ty >= 0 && tx < w && ty < h;
                out.push(inside && self.layer2[(ty * w + tx) as usize] == l);
            }
        }
        out
    }
}

/// Texture sampled on a padded grid around the frame.
struct TextureGrid {
    pad: i64,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TextureGrid {
    fn at(&self, x: i64, y: i64) -> &[f64] {
        let i = (((y + self.pad) as usize) * self.width + (x + self.pad) as usize) * self.channels;
        &self.data[i..i + self.channels]
    }
}

fn gaussian_blur(data: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r)
                .map(|k| kernel[(k + r) as usize] * data[y * w + (x as i64 + k).clamp(0, w as i64 - 1) as usize])
                .sum::<f64>()
                / norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = (-r..=r)
                .map(|k| kernel[(k + r) as usize] * tmp[(y as i64 + k).clamp(0, h as i64 - 1) as usize * w + x])
                .sum::<f64>()
                / norm;
        }
    }
}

/// Blurred noise on an `h x w` grid, stretched to `[0, 1]`.
fn noise_field(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let mut d: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
    gaussian_blur(&mut d, h, w, sigma);
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    d.iter_mut().for_each(|v| *v = (*v - lo) / span);
    d
}

fn make_texture(
    tex: Texture,
    made: &[TextureGrid],
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    pad: i64,
) -> Result<TextureGrid> {
    let (ph, pw) = (spec.height + 2 * pad as usize, spec.width + 2 * pad as usize);
    let c = spec.channels;
    let mut data = vec![0.0; ph * pw * c];
    let mut fill_channels = |f: &mut dyn FnMut(usize, &mut ChaCha8Rng) -> Vec<f64>, data: &mut [f64]| {
        for ch in 0..c {
            let plane = f(ch, rng);
            for (i, v) in plane.into_iter().enumerate() {
                data[i * c + ch] = v;
            }
        }
    };
    match tex {
        Texture::Constant { value } => data.iter_mut().for_each(|v| *v = value),
        Texture::Smooth { sigma, amp } => fill_channels(
            &mut |_, rng| noise_field(rng, ph, pw, sigma).into_iter().map(|t| 0.5 + amp * (t - 0.5)).collect(),
            &mut data,
        ),
        Texture::TwoScale { sigma, amp, contrast } => fill_channels(
            &mut |_, rng| {
                let base = noise_field(rng, ph, pw, sigma);
                let fine = noise_field(rng, ph, pw, 2.0);
                (0..ph * pw)
                    .map(|i| {
                        let x = (i % pw) as i64 - pad;
                        let sign = if x.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                        0.5 + amp * (base[i] - 0.5) + contrast * sign * (0.5 + 0.5 * fine[i])
                    })
                    .collect()
            },
            &mut data,
        ),
        Texture::Ramp { noise } => fill_channels(
            &mut |ch, rng| {
                let n = noise_field(rng, ph, pw, 5.0);
                (0..ph * pw)
                    .map(|i| {
                        let x = (i % pw) as f64 - pad as f64;
                        let y = (i / pw) as f64 - pad as f64;
                        let ramp = match ch % 2 {
                            0 => 0.2 + 0.6 * x / spec.width as f64,
                            _ => 0.2 + 0.6 * y / spec.height as f64,
                        };
                        ramp + noise * (n[i] - 0.5)
                    })
                    .collect()
            },
            &mut data,
        ),
        Texture::Striped { base, contrast } => {
            let src = made
                .get(base)
                .ok_or_else(|| Error::Config(format!("striped texture refers to layer {base}, which comes later")))?;
            for (i, (d, s)) in data.iter_mut().zip(&src.data).enumerate() {
                let x = ((i / c) % pw) as i64 - pad;
                *d = s + if x.rem_euclid(2) == 0 { contrast } else { -contrast };
            }
        }
    }
    Ok(TextureGrid { pad, width: pw, channels: c, data })
}

/// Renders both frames. Frame 1 shows the top layer covering each pixel;
/// frame 2 shows, at `y`, the top layer `L` with `y - v_L` inside its region,
/// with value `T_L(y - v_L)`. Ground truth is the top layer's motion.
pub fn gen_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.height == 0 || spec.width == 0 || spec.channels == 0 {
        return Err(Error::Config("scene dimensions must be positive".into()));
    }
    if spec.layers.first().map(|l| l.region) != Some(Region::Full) {
        return Err(Error::Config("the first layer must cover the full frame".into()));
    }
    let pad = spec.layers.iter().map(|l| l.motion.0.abs().max(l.motion.1.abs())).max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut textures: Vec<TextureGrid> = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        let t = make_texture(layer.texture, &textures, &mut rng, spec, pad)?;
        textures.push(t);
    }
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let mut i1 = Image::zeros(h, w, c);
    let mut i2 = Image::zeros(h, w, c);
    let mut gt = FlowField::zeros(h, w);
    let mut object_mask = vec![false; h * w];
    let mut layer1 = vec![0; h * w];
    let mut layer2 = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            let l1 = (0..spec.layers.len()).rev().find(|&l| spec.layers[l].region.contains(xi, yi)).unwrap_or(0);
            i1.pixel_mut(x, y).copy_from_slice(textures[l1].at(xi, yi));
            let (mu, mv) = spec.layers[l1].motion;
            gt.set(x, y, (mu as f64, mv as f64));
            object_mask[y * w + x] = spec.layers[l1].object;
            layer1[y * w + x] = l1;
            let l2 = (0..spec.layers.len())
                .rev()
                .find(|&l| {
                    let (mu, mv) = spec.layers[l].motion;
                    spec.layers[l].region.contains(xi - mu, yi - mv)
                })
                .unwrap_or(0);
            let (mu, mv) = spec.layers[l2].motion;
            i2.pixel_mut(x, y).copy_from_slice(textures[l2].at(xi - mu, yi - mv));
            layer2[y * w + x] = l2;
        }
    }
    Ok(SyntheticScene { spec: spec.clone(), i1, i2, gt_flow: gt, object_mask, layer1, layer2 })
}

/// Small-object scene: a static background, a box moving `(+4, 0)` and a
/// 2-px-wide strip moving `(-3, 0)` inside it. The strip carries the box
/// texture plus alternating stripes that cancel under pooling, so coarser
/// levels see only the box while the finest level sees the strip.
pub fn small_object_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f162);
    let bx = 4 * rng.random_range(1..=3i64);
    let by = 4 * rng.random_range(1..=2i64);
    // box corners on multiples of 4 keep every coarse block pure; strip rows
    // stay 3 px inside the box so each upsampling stencil they read does too
    let oy = by + 3 + rng.random_range(0..=4i64);
    SceneSpec {
        height: 32,
        width: 32,
        channels: 1,
        seed,
        layers: vec![
            LayerSpec { region: Region::Full, motion: (0, 0), texture: Texture::Smooth { sigma: 1.0, amp: 1.0 }, object: false },
            LayerSpec {
                region: Region::Rect { x: bx, y: by, w: 16, h: 16 },
                motion: (4, 0),
                texture: Texture::Smooth { sigma: 1.0, amp: 1.0 },
                object: false,
            },
            LayerSpec {
                region: Region::Rect { x: bx + 4, y: oy, w: 2, h: 6 },
                motion: (-3, 0),
                texture: Texture::Striped { base: 1, contrast: 0.15 },
                object: true,
            },
        ],
    }
}

/// Conflicting-motion scene for the descent: static background, a box moving
/// `(+4, 0)` whose texture has a fine alternating component, and a thin strip
/// moving `(-3, 0)`.
pub fn conflict_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        height: 32,
        width: 32,
        channels: 1,
        seed,
        layers: vec![
            LayerSpec { region: Region::Full, motion: (0, 0), texture: Texture::Smooth { sigma: 5.0, amp: 0.6 }, object: false },
            LayerSpec {
                region: Region::Rect { x: 6, y: 6, w: 20, h: 20 },
                motion: (4, 0),
                texture: Texture::TwoScale { sigma: 5.0, amp: 0.6, contrast: 0.3 },
                object: false,
            },
            LayerSpec {
                region: Region::Rect { x: 14, y: 8, w: 2, h: 16 },
                motion: (-3, 0),
                texture: Texture::Smooth { sigma: 5.0, amp: 0.6 },
                object: true,
            },
        ],
    }
}

/// Single full-frame layer on two ramp channels, moving by a seed-chosen
/// non-zero integer vector with components in `[-3, 3]`.
pub fn uniform_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b1f_0a11);
    let motion = loop {
        let m = (rng.random_range(-3..=3i64), rng.random_range(-3..=3i64));
        if m != (0, 0) {
            break m;
        }
    };
    SceneSpec {
        height: 32,
        width: 32,
        channels: 2,
        seed,
        layers: vec![LayerSpec { region: Region::Full, motion, texture: Texture::Ramp { noise: 0.1 }, object: false }],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Warp,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Corr,
    Sad,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub n_levels: usize,
    /// Search radius per level, finest first.
    pub deltas: Vec<usize>,
    pub mode: Sampling,
    pub distance: Distance,
    pub stop_gradient: bool,
    pub step: f64,
    pub iterations: usize,
    /// Charbonnier smoothing of the descent's absolute differences,
    /// `sqrt(d^2 + eps^2) - eps`; 0 gives plain SAD.
    pub smooth_eps: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n_levels: 2,
            deltas: vec![4, 4],
            mode: Sampling::Sample,
            distance: Distance::Sad,
            stop_gradient: false,
            step: 0.05,
            iterations: 200,
            smooth_eps: 0.05,
        }
    }
}

impl SolveConfig {
    /// Preset for the small-object scene: three levels, wide search at the finest.
    pub fn small_object(mode: Sampling) -> Self {
        Self { n_levels: 3, deltas: vec![8, 4, 4], mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 || self.deltas.len() != self.n_levels {
            return Err(Error::Config(format!(
                "need one search radius per level, got {} for {} levels",
                self.deltas.len(),
                self.n_levels
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) || self.smooth_eps.is_nan() || self.smooth_eps < 0.0 {
            return Err(Error::Config("step must be positive and smooth_eps non-negative".into()));
        }
        Ok(())
    }
}

/// Coarse-to-fine estimation with a per-pixel winner-take-all decoder in
/// place of a learned one. Each level adds the best integer offset of its
/// cost volume to the upsampled coarser flow.
pub fn coarse_to_fine_wta(i1: &Image, i2: &Image, cfg: &SolveConfig) -> Result<FlowField> {
    cfg.validate()?;
    let p1 = build_pyramid(i1, cfg.n_levels)?;
    let p2 = build_pyramid(i2, cfg.n_levels)?;
    let mode = CvMode::from_parts(cfg.mode == Sampling::Warp, cfg.distance == Distance::Sad);
    let mut flow: Option<FlowField> = None;
    for l in (0..cfg.n_levels).rev() {
        let (a, b) = (&p1.levels[l], &p2.levels[l]);
        let init = match &flow {
            None => FlowField::zeros(a.height(), a.width()),
            Some(f) => upsample_flow(f, Some((a.height(), a.width()))),
        };
        let cv = cost_volume(mode, a, b, &init, SearchRange::new(cfg.deltas[l]))?;
        let best = cv.winner_take_all();
        let mut next = init;
        for (i, (du, dv)) in best.into_iter().enumerate() {
            next.data_mut()[2 * i] += du as f64;
            next.data_mut()[2 * i + 1] += dv as f64;
        }
        flow = Some(next);
    }
    Ok(flow.expect("at least one level"))
}

/// Photometric data term `sum_x mean_c rho(I1(x) - I2(x + F(x)))` and its
/// gradient with respect to `F`.
pub fn data_term(i1: &Image, i2: &Image, flow: &FlowField, eps: f64) -> (f64, FlowField) {
    let c = i1.channels();
    let (mut val, mut du, mut dv) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    let mut loss = 0.0;
    let mut grad = FlowField::zeros(flow.height(), flow.width());
    for y in 0..i1.height() {
        for x in 0..i1.width() {
            let (u, v) = flow.get(x, y);
            sample_grad_into(i2, x as f64 + u, y as f64 + v, &mut val, &mut du, &mut dv);
            let (mut gu, mut gv) = (0.0, 0.0);
            for k in 0..c {
                let d = i1.pixel(x, y)[k] - val[k];
                let (rho, drho) = if eps > 0.0 {
                    let r = (d * d + eps * eps).sqrt();
                    (r - eps, d / r)
                } else {
                    (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
                };
                loss += rho / c as f64;
                gu -= drho * du[k] / c as f64;
                gv -= drho * dv[k] / c as f64;
            }
            grad.set(x, y, (gu, gv));
        }
    }
    (loss, grad)
}

/// Per-iteration scalars of a descent run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentStep {
    pub iter: usize,
    /// NCC between the coarse loss partial and the partial via the fine level.
    pub ncc: f64,
    pub loss_coarse: f64,
    pub loss_fine: f64,
    /// Gradient change over parameter change relative to the previous iterate.
    pub beta_eff: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct GradTrace {
    pub steps: Vec<DescentStep>,
    /// `(coarse partial, via-flow partial)` per iteration, when recorded.
    pub partials: Vec<(FlowField, FlowField)>,
    /// Applied update direction (coarse then fine parameters) per iteration.
    pub updates: Vec<Vec<f64>>,
    /// Coarse flow before each update, when recorded.
    pub coarse_trajectory: Vec<FlowField>,
}

impl GradTrace {
    pub fn mean_ncc(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.ncc).sum::<f64>() / self.steps.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub trace: GradTrace,
    pub coarse_flow: FlowField,
    pub fine_residual: FlowField,
    pub final_loss_coarse: f64,
    pub final_loss_fine: f64,
}

impl DescentResult {
    pub fn final_loss(&self) -> f64 {
        self.final_loss_coarse + self.final_loss_fine
    }

    /// `upsample(coarse_flow) + fine_residual`.
    pub fn fine_flow(&self) -> FlowField {
        add(&upsample_flow(&self.coarse_flow, Some((self.fine_residual.height(), self.fine_residual.width()))), &self.fine_residual)
    }
}

fn add(a: &FlowField, b: &FlowField) -> FlowField {
    let mut out = a.clone();
    out.data_mut().iter_mut().zip(b.data()).for_each(|(p, q)| *p += q);
    out
}

fn axpy(x: &mut FlowField, alpha: f64, d: &[f64]) {
    x.data_mut().iter_mut().zip(d).for_each(|(p, q)| *p += alpha * q);
}

/// Gradient descent on `L = L_coarse(F) + L_fine(upsample(F) + R)` over the
/// coarse flow `F` and the fine residual `R`, both starting at zero. With
/// `stop_gradient` the coarse flow follows only its own loss.
pub fn two_level_descent(i1: &Image, i2: &Image, cfg: &SolveConfig, record: bool) -> Result<DescentResult> {
    cfg.validate()?;
    let (c1, c2) = (downsample(i1), downsample(i2));
    let (hc, wc) = (c1.height(), c1.width());
    let (h, w) = (i1.height(), i1.width());
    let mut coarse = FlowField::zeros(hc, wc);
    let mut residual = FlowField::zeros(h, w);
    let mut trace = GradTrace::default();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for iter in 0..cfg.iterations {
        let (l0, a) = data_term(&c1, &c2, &coarse, cfg.smooth_eps);
        let fine = add(&upsample_flow(&coarse, Some((h, w))), &residual);
        let (l1, g) = data_term(i1, i2, &fine, cfg.smooth_eps);
        if !l0.is_finite() || !l1.is_finite() {
            return Err(Error::Diverged { iter });
        }
        let b = upsample_flow_adjoint(&g, hc, wc);
        let mut update: Vec<f64> = a.data().to_vec();
        if !cfg.stop_gradient {
            update.iter_mut().zip(b.data()).for_each(|(p, q)| *p += q);
        }
        update.extend_from_slice(g.data());
        let theta: Vec<f64> = coarse.data().iter().chain(residual.data()).copied().collect();
        let beta = match &prev {
            Some((t, u)) if t != &theta => Some(beta_eff(&update, u, &theta, t)?),
            _ => None,
        };
        trace.steps.push(DescentStep { iter, ncc: ncc(a.data(), b.data())?, loss_coarse: l0, loss_fine: l1, beta_eff: beta });
        if record {
            trace.coarse_trajectory.push(coarse.clone());
            trace.partials.push((a.clone(), b));
            trace.updates.push(update.clone());
        }
        let n = hc * wc * 2;
        axpy(&mut coarse, -cfg.step, &update[..n]);
        axpy(&mut residual, -cfg.step, &update[n..]);
        prev = Some((theta, update));
    }
    let (l0, _) = data_term(&c1, &c2, &coarse, cfg.smooth_eps);
    let fine = add(&upsample_flow(&coarse, Some((h, w))), &residual);
    let (l1, _) = data_term(i1, i2, &fine, cfg.smooth_eps);
    if !l0.is_finite() || !l1.is_finite() {
        return Err(Error::Diverged { iter: cfg.iterations });
    }
    Ok(DescentResult { trace, coarse_flow: coarse, fine_residual: residual, final_loss_coarse: l0, final_loss_fine: l1 })
}

/// Gradient descent on the coarse loss alone; returns the flow before each
/// update.
pub fn coarse_only_descent(i1: &Image, i2: &Image, cfg: &SolveConfig) -> Result<Vec<FlowField>> {
    cfg.validate()?;
    let (c1, c2) = (downsample(i1), downsample(i2));
    let mut coarse = FlowField::zeros(c1.height(), c1.width());
    let mut out = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (l0, a) = data_term(&c1, &c2, &coarse, cfg.smooth_eps);
        if !l0.is_finite() {
            return Err(Error::Diverged { iter });
        }
        out.push(coarse.clone());
        axpy(&mut coarse, -cfg.step, a.data());
    }
    Ok(out)
}

/// Scene families used by the batch runner and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneFamily {
    SmallObject,
    Conflict,
    Uniform,
}

impl SceneFamily {
    pub fn spec(self, seed: u64) -> SceneSpec {
        match self {
            SceneFamily::SmallObject => small_object_scene(seed),
            SceneFamily::Conflict => conflict_scene(seed),
            SceneFamily::Uniform => uniform_scene(seed),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "small-object" | "small_object" => Some(SceneFamily::SmallObject),
            "conflict" => Some(SceneFamily::Conflict),
            "uniform" => Some(SceneFamily::Uniform),
            _ => None,
        }
    }
}

/// Runs the descent on seeds `0..n_seeds` of a family, in parallel.
pub fn descent_batch(family: SceneFamily, n_seeds: u64, cfg: &SolveConfig, record: bool) -> Result<Vec<DescentResult>> {
    (0..n_seeds)
        .into_par_iter()
        .map(|seed| {
            let scene = gen_scene(&family.spec(seed))?;
            two_level_descent(&scene.i1, &scene.i2, cfg, record)
        })
        .collect()
}
