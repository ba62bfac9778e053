//! Hand-crafted flow cues: forward-backward warped flow, reverse (splatted)
//! flow, map-uniqueness density and out-of-image flags.

use crate::error::{Error, Result};
use crate::grid::{sample_into, FlowField, Image};

/// The four cues for one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct CueStack {
    pub fb_flow: FlowField,
    pub rev_flow: FlowField,
    pub density: Vec<f64>,
    pub oob: Vec<bool>,
}

impl CueStack {
    /// Six feature channels: fb (u, v), rev (u, v), density, oob.
    pub fn to_features(&self) -> Image {
        let (h, w) = (self.fb_flow.height(), self.fb_flow.width());
        Image::from_fn(h, w, 6, |x, y, c| {
            let i = y * w + x;
            match c {
                0 => self.fb_flow.get(x, y).0,
                1 => self.fb_flow.get(x, y).1,
                2 => self.rev_flow.get(x, y).0,
                3 => self.rev_flow.get(x, y).1,
                4 => self.density[i],
                _ => f64::from(u8::from(self.oob[i])),
            }
        })
    }
}

fn check_pair(a: &FlowField, b: &FlowField) -> Result<()> {
    if !a.same_size(b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "flows are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    a.check_finite()?;
    b.check_finite()
}

pub(crate) fn flow_as_image(f: &FlowField) -> Image {
    Image::new(f.height(), f.width(), 2, f.data().to_vec()).expect("flow data is a valid 2-channel image")
}

/// `F_fb(x) = -F21(x + F12(x))`, bilinear with border clamp.
pub fn fwd_bwd_warp(f12: &FlowField, f21: &FlowField) -> Result<FlowField> {
    check_pair(f12, f21)?;
    let img = flow_as_image(f21);
    let mut s = [0.0; 2];
    let out = FlowField::from_fn(f12.height(), f12.width(), |x, y| {
        let (u, v) = f12.get(x, y);
        sample_into(&img, x as f64 + u, y as f64 + v, &mut s);
        (-s[0], -s[1])
    });
    Ok(out)
}

/// Forward splatting of `-F21` with the bilinear hat kernel, normalized by
/// the accumulated weight. Returns the reverse flow and the weight (density).
///
/// Sources flagged invalid are skipped, targets outside the image are
/// dropped, and pixels that receive no weight get flow 0. Accumulation runs
/// in row-major source order.
pub fn reverse_flow(f21: &FlowField) -> Result<(FlowField, Vec<f64>)> {
    f21.check_finite()?;
    let (h, w) = (f21.height(), f21.width());
    let mut num = vec![0.0; 2 * h * w];
    let mut den = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            if !f21.is_valid(x, y) {
                continue;
            }
            let (u, v) = f21.get(x, y);
            let (tx, ty) = (x as f64 + u, y as f64 + v);
            let (x0, y0) = (tx.floor(), ty.floor());
            let (fx, fy) = (tx - x0, ty - y0);
            for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    let wgt = wx * wy;
                    let (nx, ny) = (x0 + ox, y0 + oy);
                    if wgt <= 0.0 || nx < 0.0 || ny < 0.0 || nx >= w as f64 || ny >= h as f64 {
                        continue;
                    }
                    let i = ny as usize * w + nx as usize;
                    den[i] += wgt;
                    num[2 * i] -= wgt * u;
                    num[2 * i + 1] -= wgt * v;
                }
            }
        }
    }
    for (i, &d) in den.iter().enumerate() {
        if d > 0.0 {
            num[2 * i] /= d;
            num[2 * i + 1] /= d;
        } else {
            num[2 * i] = 0.0;
            num[2 * i + 1] = 0.0;
        }
    }
    Ok((FlowField::new(h, w, num)?, den))
}

/// Soft count of `I2` pixels landing on each `I1` pixel.
pub fn uniqueness_density(f21: &FlowField) -> Result<Vec<f64>> {
    Ok(reverse_flow(f21)?.1)
}

/// True where `x + F12(x)` leaves `[0, W-1] x [0, H-1]`.
pub fn out_of_image(f12: &FlowField) -> Vec<bool> {
    let (h, w) = (f12.height(), f12.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = f12.get(x, y);
            let (px, py) = (x as f64 + u, y as f64 + v);
            out.push(!(px >= 0.0 && px <= (w - 1) as f64 && py >= 0.0 && py <= (h - 1) as f64));
        }
    }
    out
}

fn one_direction(f12: &FlowField, f21: &FlowField) -> Result<CueStack> {
    let fb_flow = fwd_bwd_warp(f12, f21)?;
    let (rev_flow, density) = reverse_flow(f21)?;
    Ok(CueStack { fb_flow, rev_flow, density, oob: out_of_image(f12) })
}

/// Cue stacks for direction 1->2 and, with the arguments swapped, 2->1.
pub fn build_cue_stack(f12: &FlowField, f21: &FlowField) -> Result<(CueStack, CueStack)> {
    check_pair(f12, f21)?;
    Ok((one_direction(f12, f21)?, one_direction(f21, f12)?))
}
