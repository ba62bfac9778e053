//! Flow file formats (Middlebury `.flo`, KITTI 16-bit PNG), validity masks,
//! image loading, color-wheel visualization and scene specs.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{FlowField, Image};
use crate::toy::{SceneFamily, SceneSpec};

/// `.flo` sentinel, stored as an f32.
pub const FLO_MAGIC: f32 = 202021.25;

/// KITTI encodes `u * 64 + 2^15` in 16 bits.
pub const KITTI_SCALE: f64 = 64.0;
const KITTI_OFFSET: f64 = 32768.0;

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

fn eof_to_format(e: std::io::Error, offset: u64, what: &str) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        format_err(offset, format!("truncated {what}"))
    } else {
        Error::Io(e)
    }
}

/// Reads a `.flo` stream. Values are widened to f64 exactly.
pub fn read_flo_from<R: Read>(mut r: R) -> Result<FlowField> {
    let magic = r.read_f32::<LittleEndian>().map_err(|e| eof_to_format(e, 0, "header"))?;
    if magic != FLO_MAGIC {
        return Err(format_err(0, format!("bad magic {magic}")));
    }
    let w = r.read_i32::<LittleEndian>().map_err(|e| eof_to_format(e, 4, "header"))?;
    let h = r.read_i32::<LittleEndian>().map_err(|e| eof_to_format(e, 8, "header"))?;
    if w <= 0 || h <= 0 {
        return Err(format_err(4, format!("non-positive size {w}x{h}")));
    }
    let n = (w as usize)
        .checked_mul(h as usize)
        .and_then(|p| p.checked_mul(2))
        .ok_or_else(|| format_err(4, "size overflows"))?;
    // grow as data arrives so a bogus header cannot force a huge allocation
    let mut data = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let off = 12 + 4 * i as u64;
        let v = r.read_f32::<LittleEndian>().map_err(|e| eof_to_format(e, off, "payload"))?;
        data.push(f64::from(v));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(format_err(12 + 4 * n as u64, "trailing bytes after payload"));
    }
    FlowField::new(h as usize, w as usize, data)
}

/// Writes a `.flo` stream; values are narrowed to f32.
pub fn write_flo_to<W: Write>(flow: &FlowField, mut w: W) -> Result<()> {
    let (width, height) = (i32::try_from(flow.width()), i32::try_from(flow.height()));
    let (Ok(width), Ok(height)) = (width, height) else {
        return Err(Error::OutOfRange("flow too large for .flo".into()));
    };
    w.write_f32::<LittleEndian>(FLO_MAGIC)?;
    w.write_i32::<LittleEndian>(width)?;
    w.write_i32::<LittleEndian>(height)?;
    for &v in flow.data() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    read_flo_from(BufReader::new(File::open(path)?))
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    write_flo_to(flow, BufWriter::new(File::create(path)?))
}

fn kitti_encode(v: f64) -> Result<u16> {
    let q = (v * KITTI_SCALE + KITTI_OFFSET).round();
    if !(0.0..=65535.0).contains(&q) {
        return Err(Error::OutOfRange(format!("flow component {v} outside the 16-bit KITTI range")));
    }
    Ok(q as u16)
}

/// Encodes flow as KITTI RGB16 pixels; the third channel is the validity bit.
pub fn kitti_encode_flow(flow: &FlowField) -> Result<ImageBuffer<Rgb<u16>, Vec<u16>>> {
    let mut img = ImageBuffer::new(flow.width() as u32, flow.height() as u32);
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (u, v) = flow.get(x, y);
            let valid = flow.is_valid(x, y);
            let (eu, ev) = if valid || (u.is_finite() && v.is_finite()) {
                (kitti_encode(u)?, kitti_encode(v)?)
            } else {
                (kitti_encode(0.0)?, kitti_encode(0.0)?)
            };
            img.put_pixel(x as u32, y as u32, Rgb([eu, ev, u16::from(valid)]));
        }
    }
    Ok(img)
}

pub fn kitti_decode_flow(img: &ImageBuffer<Rgb<u16>, Vec<u16>>) -> FlowField {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut valid = Vec::with_capacity(w * h);
    let flow = FlowField::from_fn(h, w, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        valid.push(p[2] > 0);
        ((f64::from(p[0]) - KITTI_OFFSET) / KITTI_SCALE, (f64::from(p[1]) - KITTI_OFFSET) / KITTI_SCALE)
    });
    flow.with_valid(valid).expect("one flag per pixel")
}

pub fn write_kitti_png(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    kitti_encode_flow(flow)?.save(path)?;
    Ok(())
}

/// Reads a KITTI flow PNG; anything other than 16-bit RGB is rejected.
pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<FlowField> {
    match image::open(path)? {
        DynamicImage::ImageRgb16(img) => Ok(kitti_decode_flow(&img)),
        other => Err(format_err(0, format!("expected a 16-bit RGB PNG, found {:?}", other.color()))),
    }
}

/// Reads either flow format, chosen by extension (`.png` is KITTI).
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_kitti_png(path),
        _ => read_flo(path),
    }
}

/// 8-bit grayscale mask: 255 valid, 0 invalid.
pub fn write_valid_png(path: impl AsRef<Path>, valid: &[bool], height: usize, width: usize) -> Result<()> {
    if valid.len() != height * width {
        return Err(Error::Shape(format!("mask has {} entries, expected {}", valid.len(), height * width)));
    }
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| {
        Luma([if valid[y as usize * width + x as usize] { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

/// Any non-zero pixel counts as valid.
pub fn read_valid_png(path: impl AsRef<Path>) -> Result<(Vec<bool>, usize, usize)> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| p.0[0] > 0).collect(), h, w))
}

/// Loads a PNG as an image with values in `[0, 1]`; grayscale inputs keep
/// one channel, everything else becomes RGB.
pub fn read_image_png(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::open(path)?;
    let gray = matches!(img.color().channel_count(), 1 | 2);
    if gray {
        let g = img.into_luma16();
        let (w, h) = (g.width() as usize, g.height() as usize);
        Image::new(h, w, 1, g.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect())
    } else {
        let g = img.into_rgb16();
        let (w, h) = (g.width() as usize, g.height() as usize);
        Image::new(h, w, 3, g.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect())
    }
}

/// Middlebury color wheel segment lengths: red-yellow, yellow-green,
/// green-cyan, cyan-blue, blue-magenta, magenta-red.
const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55-entry color wheel as 0..=255 RGB.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(WHEEL_SEGMENTS.iter().sum());
    for (seg, &n) in WHEEL_SEGMENTS.iter().enumerate() {
        for i in 0..n {
            let up = (255.0 * i as f64 / n as f64).floor();
            let down = 255.0 - up;
            wheel.push(match seg {
                0 => [255.0, up, 0.0],
                1 => [down, 255.0, 0.0],
                2 => [0.0, 255.0, up],
                3 => [0.0, down, 255.0],
                4 => [up, 0.0, 255.0],
                _ => [255.0, 0.0, down],
            });
        }
    }
    wheel
}

/// Middlebury-style coloring. Hue follows the flow angle, saturation the
/// magnitude relative to `max_mag`; longer vectors saturate at full color.
pub fn colorize_flow(flow: &FlowField, max_mag: f64) -> Result<RgbImage> {
    if !(max_mag.is_finite() && max_mag > 0.0) {
        return Err(Error::Config(format!("max_mag must be positive, got {max_mag}")));
    }
    let wheel = color_wheel();
    let ncols = wheel.len();
    let mut out = RgbImage::new(flow.width() as u32, flow.height() as u32);
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (mut u, mut v) = flow.get(x, y);
            if !u.is_finite() || !v.is_finite() {
                (u, v) = (0.0, 0.0);
            }
            let (u, v) = (u / max_mag, v / max_mag);
            let rad = u.hypot(v).min(1.0);
            let mut a = (-v).atan2(-u) / std::f64::consts::PI;
            // angle pi and -pi both mean +u; pin it to the first wheel entry
            // so the sign of a zero v cannot change the color
            if a >= 1.0 {
                a = -1.0;
            }
            let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
            let k0 = fk.floor() as usize;
            let k1 = if k0 + 1 == ncols { 0 } else { k0 + 1 };
            let f = fk - k0 as f64;
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let col = (1.0 - f) * wheel[k0][c] / 255.0 + f * wheel[k1][c] / 255.0;
                *p = (255.0 * (1.0 - rad * (1.0 - col))).floor() as u8;
            }
            out.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(out)
}

/// Resolves a scene argument: `family:seed` for a preset (`small-object`,
/// `conflict`, `uniform`), or a path to a JSON scene spec.
pub fn load_scene_spec(arg: &str) -> Result<SceneSpec> {
    if let Some((name, seed)) = arg.split_once(':') {
        if let Some(family) = SceneFamily::parse(name) {
            let seed = seed.parse::<u64>().map_err(|_| Error::Config(format!("bad seed in scene '{arg}'")))?;
            return Ok(family.spec(seed));
        }
    }
    if let Some(family) = SceneFamily::parse(arg) {
        return Ok(family.spec(0));
    }
    Ok(serde_json::from_reader(BufReader::new(File::open(arg)?))?)
}

pub fn write_scene_spec(path: impl AsRef<Path>, spec: &SceneSpec) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, spec)?;
    w.flush()?;
    Ok(())
}
