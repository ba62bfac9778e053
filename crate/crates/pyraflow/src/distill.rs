//! Pseudo ground truth from teacher predictions: occlusion consistency,
//! photometric error, confidence and sparse-GT distance filters, followed by
//! erosion of the surviving mask.

use crate::cues::flow_as_image;
use crate::error::{Error, Result};
use crate::grid::{sample_into, FlowField, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub occl_abs: f64,
    pub occl_rel: f64,
    pub conf_min: f64,
    pub gt_dist_max: f64,
    pub photo_thresh: f64,
    pub erosion_radius: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { occl_abs: 0.05, occl_rel: 0.01, conf_min: 0.95, gt_dist_max: 3.0, photo_thresh: 0.25, erosion_radius: 2 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.occl_abs, self.occl_rel, self.conf_min, self.gt_dist_max, self.photo_thresh];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("distillation thresholds must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Teacher flow plus the pixels that survived every filter.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoGroundTruth {
    pub flow: FlowField,
    pub valid: Vec<bool>,
}

impl PseudoGroundTruth {
    /// The flow with `valid` attached as its mask.
    pub fn to_flow(&self) -> FlowField {
        self.flow.clone().with_valid(self.valid.clone()).expect("mask matches flow size")
    }
}

fn same_size(a: &FlowField, h: usize, w: usize) -> Result<()> {
    if !a.same_size(h, w) {
        return Err(Error::Shape(format!("flow is {}x{}, expected {h}x{w}", a.height(), a.width())));
    }
    Ok(())
}

/// Not-occluded test
/// `|F12 + F21(x + F12)|^2 - occl_abs < occl_rel * (|F12|^2 + |F21(x + F12)|^2)`.
pub fn occlusion_consistency(f12: &FlowField, f21: &FlowField, cfg: &DistillConfig) -> Result<Vec<bool>> {
    same_size(f21, f12.height(), f12.width())?;
    f12.check_finite()?;
    f21.check_finite()?;
    let back = flow_as_image(f21);
    let mut s = [0.0; 2];
    let mut out = Vec::with_capacity(f12.len());
    for y in 0..f12.height() {
        for x in 0..f12.width() {
            let (u, v) = f12.get(x, y);
            sample_into(&back, x as f64 + u, y as f64 + v, &mut s);
            let lhs = (u + s[0]).powi(2) + (v + s[1]).powi(2) - cfg.occl_abs;
            let rhs = cfg.occl_rel * (u * u + v * v + s[0] * s[0] + s[1] * s[1]);
            out.push(lhs < rhs);
        }
    }
    Ok(out)
}

/// Channel-mean SAD between `I1(x)` and `I2(x + F12(x))` at most `photo_thresh`.
pub fn photometric_filter(i1: &Image, i2: &Image, f12: &FlowField, cfg: &DistillConfig) -> Result<Vec<bool>> {
    if !i1.same_shape(i2) {
        return Err(Error::Shape("I1 and I2 differ in shape".into()));
    }
    same_size(f12, i1.height(), i1.width())?;
    f12.check_finite()?;
    let c = i1.channels();
    let mut s = vec![0.0; c];
    let mut out = Vec::with_capacity(f12.len());
    for y in 0..i1.height() {
        for x in 0..i1.width() {
            let (u, v) = f12.get(x, y);
            sample_into(i2, x as f64 + u, y as f64 + v, &mut s);
            let sad = i1.pixel(x, y).iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>() / c as f64;
            out.push(sad <= cfg.photo_thresh);
        }
    }
    Ok(out)
}

/// Inclusive confidence threshold.
pub fn confidence_filter(conf: &[f64], cfg: &DistillConfig) -> Vec<bool> {
    conf.iter().map(|&c| c >= cfg.conf_min).collect()
}

/// Prunes pixels farther than `gt_dist_max` from valid sparse GT; pixels
/// without GT pass.
pub fn gt_distance_filter(teacher: &FlowField, gt: &FlowField, cfg: &DistillConfig) -> Result<Vec<bool>> {
    same_size(gt, teacher.height(), teacher.width())?;
    let mut out = Vec::with_capacity(teacher.len());
    for y in 0..teacher.height() {
        for x in 0..teacher.width() {
            if !gt.is_valid(x, y) {
                out.push(true);
                continue;
            }
            let (a, b) = (teacher.get(x, y), gt.get(x, y));
            out.push((a.0 - b.0).hypot(a.1 - b.1) <= cfg.gt_dist_max);
        }
    }
    Ok(out)
}

/// Binary erosion with a `(2r + 1)^2` square; outside the image counts as false.
pub fn erosion_prune(mask: &[bool], height: usize, width: usize, radius: usize) -> Result<Vec<bool>> {
    if mask.len() != height * width {
        return Err(Error::Shape(format!("mask has {} entries, expected {}", mask.len(), height * width)));
    }
    let r = radius as i64;
    let (h, w) = (height as i64, width as i64);
    // separable: rows first, then columns
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; src.len()];
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) as usize] = (-r..=r).all(|d| {
                    let (nx, ny) = if horizontal { (x + d, y) } else { (x, y + d) };
                    nx >= 0 && ny >= 0 && nx < w && ny < h && src[(ny * w + nx) as usize]
                });
            }
        }
        out
    };
    Ok(pass(&pass(mask, true), false))
}

/// Individual filter results, all in the image-1 frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterMasks {
    pub occlusion: Vec<bool>,
    pub photometric: Vec<bool>,
    pub confidence: Vec<bool>,
    pub gt_distance: Vec<bool>,
}

impl FilterMasks {
    pub fn intersection(&self) -> Vec<bool> {
        (0..self.occlusion.len())
            .map(|i| self.occlusion[i] && self.photometric[i] && self.confidence[i] && self.gt_distance[i])
            .collect()
    }
}

pub fn filter_masks(
    teacher: &FlowField,
    f21: &FlowField,
    i1: &Image,
    i2: &Image,
    conf: &[f64],
    gt_sparse: Option<&FlowField>,
    cfg: &DistillConfig,
) -> Result<FilterMasks> {
    cfg.validate()?;
    if conf.len() != teacher.len() {
        return Err(Error::Shape(format!("confidence has {} entries, expected {}", conf.len(), teacher.len())));
    }
    Ok(FilterMasks {
        occlusion: occlusion_consistency(teacher, f21, cfg)?,
        photometric: photometric_filter(i1, i2, teacher, cfg)?,
        confidence: confidence_filter(conf, cfg),
        gt_distance: match gt_sparse {
            Some(gt) => gt_distance_filter(teacher, gt, cfg)?,
            None => vec![true; teacher.len()],
        },
    })
}

/// Eroded intersection of all filters, carrying the teacher flow.
pub fn make_pseudo_gt(
    teacher: &FlowField,
    f21: &FlowField,
    i1: &Image,
    i2: &Image,
    conf: &[f64],
    gt_sparse: Option<&FlowField>,
    cfg: &DistillConfig,
) -> Result<PseudoGroundTruth> {
    let masks = filter_masks(teacher, f21, i1, i2, conf, gt_sparse, cfg)?;
    let valid = erosion_prune(&masks.intersection(), teacher.height(), teacher.width(), cfg.erosion_radius)?;
    Ok(PseudoGroundTruth { flow: teacher.clone().without_valid(), valid })
}
