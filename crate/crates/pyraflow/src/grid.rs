//! Dense image and flow grids, bilinear sampling with analytic derivatives,
//! backward warping, average-pool pyramids and flow upsampling.
//!
//! Coordinates are `(x, y)` with `x` along the width. Samples outside the
//! image use border replication, and the derivative of a sample is taken on
//! the cell `[floor(x), floor(x) + 1)`, so it is zero wherever the clamped
//! function is locally constant.

use crate::error::{Error, Result};

/// Dense `height x width x channels` grid, row-major with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "image dimensions must be positive");
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Builds an image from `f(x, y, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.data[(y * width + x) * channels + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Dense per-pixel displacement `(u, v)` with an optional validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("flow dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * 2 {
            return Err(Error::Shape(format!(
                "flow data has {} values, expected {}",
                data.len(),
                height * width * 2
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow data".into()));
        }
        Ok(Self { height, width, data, valid: None })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        assert!(height > 0 && width > 0, "flow dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 2);
        for _ in 0..height * width {
            data.push(u);
            data.push(v);
        }
        Self { height, width, data, valid: None }
    }

    /// Builds a flow from `f(x, y) -> (u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut flow = Self::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                flow.set(x, y, f(x, y));
            }
        }
        flow
    }

    /// Attaches a validity mask (one entry per pixel, row-major).
    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.height * self.width {
            return Err(Error::Shape(format!(
                "validity mask has {} entries, expected {}",
                valid.len(),
                self.height * self.width
            )));
        }
        self.valid = Some(valid);
        Ok(self)
    }

    pub fn without_valid(mut self) -> Self {
        self.valid = None;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn valid(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    pub fn set(&mut self, x: usize, y: usize, (u, v): (f64, f64)) {
        let i = 2 * (y * self.width + x);
        self.data[i] = u;
        self.data[i + 1] = v;
    }

    /// True when the pixel carries a valid vector (always true without a mask).
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[y * self.width + x])
    }

    /// Row-major validity, all `true` when no mask is attached.
    pub fn valid_or_all(&self) -> Vec<bool> {
        self.valid.clone().unwrap_or_else(|| vec![true; self.len()])
    }

    pub fn same_size(&self, h: usize, w: usize) -> bool {
        self.height == h && self.width == w
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flow data".into()));
        }
        Ok(())
    }
}

/// Derivatives of a sampled value with respect to the sample coordinates,
/// one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPair {
    pub d_value_d_u: Vec<f64>,
    pub d_value_d_v: Vec<f64>,
}

/// Bilinear stencil along one axis after border clamping.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
}

impl Stencil {
    /// Clamping the coordinate to `[-1, n]` and then the indices to
    /// `[0, n - 1]` reproduces the border-replicated function and makes the
    /// cell derivative vanish outside `[0, n - 1)`.
    #[inline]
    pub fn new(coord: f64, n: usize) -> Self {
        let c = coord.clamp(-1.0, n as f64);
        let f = c.floor();
        let frac = c - f;
        let last = n as isize - 1;
        let k = f as isize;
        Self { i0: k.clamp(0, last) as usize, i1: (k + 1).clamp(0, last) as usize, frac }
    }
}

#[inline]
pub(crate) fn sample_into(img: &Image, x: f64, y: f64, out: &mut [f64]) {
    let sx = Stencil::new(x, img.width);
    let sy = Stencil::new(y, img.height);
    let (a, b) = (img.pixel(sx.i0, sy.i0), img.pixel(sx.i1, sy.i0));
    let (c, d) = (img.pixel(sx.i0, sy.i1), img.pixel(sx.i1, sy.i1));
    let (fx, fy) = (sx.frac, sy.frac);
    for k in 0..img.channels {
        let top = (1.0 - fx) * a[k] + fx * b[k];
        let bottom = (1.0 - fx) * c[k] + fx * d[k];
        out[k] = (1.0 - fy) * top + fy * bottom;
    }
}

#[inline]
pub(crate) fn sample_grad_into(
    img: &Image,
    x: f64,
    y: f64,
    value: &mut [f64],
    du: &mut [f64],
    dv: &mut [f64],
) {
    let sx = Stencil::new(x, img.width);
    let sy = Stencil::new(y, img.height);
    let (a, b) = (img.pixel(sx.i0, sy.i0), img.pixel(sx.i1, sy.i0));
    let (c, d) = (img.pixel(sx.i0, sy.i1), img.pixel(sx.i1, sy.i1));
    let (fx, fy) = (sx.frac, sy.frac);
    for k in 0..img.channels {
        let top = (1.0 - fx) * a[k] + fx * b[k];
        let bottom = (1.0 - fx) * c[k] + fx * d[k];
        value[k] = (1.0 - fy) * top + fy * bottom;
        du[k] = (1.0 - fy) * (b[k] - a[k]) + fy * (d[k] - c[k]);
        dv[k] = bottom - top;
    }
}

fn check_coord(x: f64, y: f64) -> Result<()> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite(format!("sample coordinate ({x}, {y})")));
    }
    Ok(())
}

/// Bilinear interpolation of every channel at `(x, y)`.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> Result<Vec<f64>> {
    check_coord(x, y)?;
    let mut out = vec![0.0; img.channels];
    sample_into(img, x, y, &mut out);
    Ok(out)
}

/// Analytic derivative of [`bilinear_sample`] with respect to `x` and `y`.
pub fn bilinear_sample_grad(img: &Image, x: f64, y: f64) -> Result<GradientPair> {
    check_coord(x, y)?;
    let n = img.channels;
    let (mut val, mut du, mut dv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    sample_grad_into(img, x, y, &mut val, &mut du, &mut dv);
    Ok(GradientPair { d_value_d_u: du, d_value_d_v: dv })
}

/// Backward warp: `out(x) = src(x + flow(x))`.
pub fn warp_image(src: &Image, flow: &FlowField) -> Result<Image> {
    if !flow.same_size(src.height, src.width) {
        return Err(Error::Shape(format!(
            "flow is {}x{}, image is {}x{}",
            flow.height, flow.width, src.height, src.width
        )));
    }
    flow.check_finite()?;
    let mut out = Image::zeros(src.height, src.width, src.channels);
    for y in 0..src.height {
        for x in 0..src.width {
            let (u, v) = flow.get(x, y);
            sample_into(src, x as f64 + u, y as f64 + v, out.pixel_mut(x, y));
        }
    }
    Ok(out)
}

/// Image pyramid, level 0 is the finest; each level halves the size (ceil).
#[derive(Clone, Debug)]
pub struct Pyramid {
    pub levels: Vec<Image>,
}

impl Pyramid {
    pub const FACTOR: usize = 2;

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// 2x2 mean pooling; blocks clipped at the right and bottom borders.
pub fn downsample(img: &Image) -> Image {
    let h = img.height.div_ceil(2);
    let w = img.width.div_ceil(2);
    let mut out = Image::zeros(h, w, img.channels);
    for y in 0..h {
        for x in 0..w {
            let ys = 2 * y..(2 * y + 2).min(img.height);
            let xs = 2 * x..(2 * x + 2).min(img.width);
            let count = (ys.len() * xs.len()) as f64;
            let px = out.pixel_mut(x, y);
            for yy in ys {
                for xx in xs.clone() {
                    for (o, s) in px.iter_mut().zip(img.pixel(xx, yy)) {
                        *o += s;
                    }
                }
            }
            for o in px.iter_mut() {
                *o /= count;
            }
        }
    }
    out
}

pub fn build_pyramid(img: &Image, n_levels: usize) -> Result<Pyramid> {
    if n_levels == 0 {
        return Err(Error::Config("a pyramid needs at least one level".into()));
    }
    let mut levels = vec![img.clone()];
    for _ in 1..n_levels {
        let next = downsample(levels.last().expect("non-empty"));
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

/// One output coordinate of the 2x upsampler: source stencil along an axis.
/// Pixel centers are aligned, so fine index `i` reads coarse `(i + 0.5) / 2 - 0.5`.
fn upsample_stencil(i: usize, n_coarse: usize) -> Stencil {
    let s = ((i as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (n_coarse - 1) as f64);
    let f = s.floor();
    let i0 = f as usize;
    Stencil { i0, i1: (i0 + 1).min(n_coarse - 1), frac: s - f }
}

/// Bilinear 2x upsampling of a flow, vectors scaled by 2 to stay in
/// finer-level pixel units. `target` overrides the output size (defaults to
/// twice the input). The validity mask is not propagated.
pub fn upsample_flow(flow: &FlowField, target: Option<(usize, usize)>) -> FlowField {
    let (h, w) = target.unwrap_or((flow.height * 2, flow.width * 2));
    let xs: Vec<Stencil> = (0..w).map(|x| upsample_stencil(x, flow.width)).collect();
    let mut out = FlowField::zeros(h, w);
    for y in 0..h {
        let sy = upsample_stencil(y, flow.height);
        for (x, sx) in xs.iter().enumerate() {
            let (a, b) = (flow.get(sx.i0, sy.i0), flow.get(sx.i1, sy.i0));
            let (c, d) = (flow.get(sx.i0, sy.i1), flow.get(sx.i1, sy.i1));
            let lerp = |p: f64, q: f64, r: f64, s: f64| {
                let top = (1.0 - sx.frac) * p + sx.frac * q;
                let bottom = (1.0 - sx.frac) * r + sx.frac * s;
                2.0 * ((1.0 - sy.frac) * top + sy.frac * bottom)
            };
            out.set(x, y, (lerp(a.0, b.0, c.0, d.0), lerp(a.1, b.1, c.1, d.1)));
        }
    }
    out
}

/// Transpose of [`upsample_flow`]: maps a gradient on the fine grid back to
/// the `coarse_h x coarse_w` grid.
pub fn upsample_flow_adjoint(grad: &FlowField, coarse_h: usize, coarse_w: usize) -> FlowField {
    let xs: Vec<Stencil> = (0..grad.width).map(|x| upsample_stencil(x, coarse_w)).collect();
    let mut out = vec![0.0; coarse_h * coarse_w * 2];
    for y in 0..grad.height {
        let sy = upsample_stencil(y, coarse_h);
        for (x, sx) in xs.iter().enumerate() {
            let (gu, gv) = grad.get(x, y);
            let taps = [
                (sx.i0, sy.i0, (1.0 - sx.frac) * (1.0 - sy.frac)),
                (sx.i1, sy.i0, sx.frac * (1.0 - sy.frac)),
                (sx.i0, sy.i1, (1.0 - sx.frac) * sy.frac),
                (sx.i1, sy.i1, sx.frac * sy.frac),
            ];
            for (cx, cy, wgt) in taps {
                let i = 2 * (cy * coarse_w + cx);
                out[i] += 2.0 * wgt * gu;
                out[i + 1] += 2.0 * wgt * gv;
            }
        }
    }
    FlowField { height: coarse_h, width: coarse_w, data: out, valid: None }
}
