//! Per-pixel supervised losses, loss max-pooling (LMP), search-range masking,
//! sparse ground-truth rescaling and the supervised + distillation mix.

use crate::cost_volume::SearchRange;
use crate::error::{Error, Result};
use crate::grid::FlowField;

/// Non-negative per-pixel losses with validity; invalid entries hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelLossMap {
    pub height: usize,
    pub width: usize,
    loss: Vec<f64>,
    valid: Vec<bool>,
}

impl PixelLossMap {
    pub fn new(height: usize, width: usize, mut loss: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if loss.len() != n || valid.len() != n {
            return Err(Error::Shape(format!(
                "loss map needs {n} entries, got {} losses and {} flags",
                loss.len(),
                valid.len()
            )));
        }
        if loss.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::NonFinite("losses must be finite and non-negative".into()));
        }
        for (l, &v) in loss.iter_mut().zip(&valid) {
            if !v {
                *l = 0.0;
            }
        }
        Ok(Self { height, width, loss, valid })
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn n_total(&self) -> usize {
        self.loss.len()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Sum over all pixels divided by the total pixel count.
    pub fn mean(&self) -> f64 {
        self.loss.iter().sum::<f64>() / self.n_total() as f64
    }

    /// Invalidates pixels where `keep` is false.
    pub fn masked(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n_total() {
            return Err(Error::Shape(format!("mask has {} entries, expected {}", keep.len(), self.n_total())));
        }
        let valid = self.valid.iter().zip(keep).map(|(&a, &b)| a && b).collect();
        Self::new(self.height, self.width, self.loss.clone(), valid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmpConfig {
    /// Fraction of highest-loss pixels that receive full weight, in `(0, 1]`.
    pub keep_fraction: f64,
}

impl Default for LmpConfig {
    fn default() -> Self {
        Self { keep_fraction: 0.75 }
    }
}

impl LmpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!("keep_fraction must lie in (0, 1], got {}", self.keep_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCombineConfig {
    pub distill_alpha: f64,
}

impl Default for LossCombineConfig {
    fn default() -> Self {
        Self { distill_alpha: 0.9 }
    }
}

/// L2 end-point error at pixels where `gt` is valid, 0 elsewhere.
pub fn per_pixel_epe_loss(pred: &FlowField, gt: &FlowField) -> Result<PixelLossMap> {
    if !pred.same_size(gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let valid = gt.valid_or_all();
    let loss = pred
        .data()
        .chunks_exact(2)
        .zip(gt.data().chunks_exact(2))
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .collect();
    PixelLossMap::new(gt.height(), gt.width(), loss, valid)
}

/// Optimal weights of `max sum w_x l_x` s.t. `|w|_1 <= 1`, `|w|_inf <= 1/(a N)`
/// over the `N` valid pixels. The top `floor(a N)` losses get the cap, the
/// next one gets whatever budget remains. Ties are broken by pixel index.
pub fn lmp_weights(losses: &PixelLossMap, cfg: &LmpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut idx: Vec<usize> = (0..losses.n_total()).filter(|&i| losses.valid[i]).collect();
    if idx.is_empty() {
        return Err(Error::NoValidPixels);
    }
    let n = idx.len() as f64;
    let cap = 1.0 / (cfg.keep_fraction * n);
    let m = ((cfg.keep_fraction * n).floor() as usize).min(idx.len());
    idx.sort_by(|&a, &b| losses.loss[b].total_cmp(&losses.loss[a]).then(a.cmp(&b)));
    let mut w = vec![0.0; losses.n_total()];
    for &i in &idx[..m] {
        w[i] = cap;
    }
    let residual = 1.0 - m as f64 * cap;
    if m < idx.len() && residual > 0.0 {
        w[idx[m]] = residual.min(cap);
    }
    Ok(w)
}

/// Pooled loss `sum w_x l_x` with the weights of [`lmp_weights`].
pub fn lmp_loss(losses: &PixelLossMap, cfg: &LmpConfig) -> Result<f64> {
    let w = lmp_weights(losses, cfg)?;
    Ok(w.iter().zip(&losses.loss).map(|(a, b)| a * b).sum())
}

/// Pixels whose ground-truth residual fits the search window.
pub fn out_of_range_mask(gt_residual: &FlowField, r: SearchRange) -> Vec<bool> {
    let d = r.delta as f64;
    gt_residual.data().chunks_exact(2).map(|p| p[0].abs() <= d && p[1].abs() <= d).collect()
}

/// Scales valid losses by `N_total / N_valid`.
pub fn sparse_rescale(losses: &PixelLossMap) -> Result<PixelLossMap> {
    let nv = losses.n_valid();
    if nv == 0 {
        return Err(Error::NoValidPixels);
    }
    let s = losses.n_total() as f64 / nv as f64;
    let loss = losses.loss.iter().map(|l| l * s).collect();
    PixelLossMap::new(losses.height, losses.width, loss, losses.valid.clone())
}

/// `alpha * L_S + (1 - alpha) * L_D`.
pub fn combine_losses(l_s: f64, l_d: f64, cfg: &LossCombineConfig) -> Result<f64> {
    let a = cfg.distill_alpha;
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::Config(format!("distill_alpha must lie in [0, 1], got {a}")));
    }
    Ok(a * l_s + (1.0 - a) * l_d)
}

/// Supervised term: LMP when configured, otherwise the sparse-rescaled mean.
pub fn supervised_term(pred: &FlowField, gt: &FlowField, lmp: Option<&LmpConfig>) -> Result<f64> {
    let map = per_pixel_epe_loss(pred, gt)?;
    match lmp {
        Some(cfg) => lmp_loss(&map, cfg),
        None => Ok(sparse_rescale(&map)?.mean()),
    }
}

/// Distillation term against pseudo ground truth. Deliberately has no LMP
/// parameter: pooling only ever applies to the supervised term.
pub fn distillation_term(pred: &FlowField, pseudo_gt: &FlowField) -> Result<f64> {
    let map = per_pixel_epe_loss(pred, pseudo_gt)?;
    Ok(sparse_rescale(&map)?.mean())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainingObjective {
    pub lmp: Option<LmpConfig>,
    pub combine: LossCombineConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub distillation: f64,
    pub total: f64,
}

impl TrainingObjective {
    pub fn evaluate(&self, pred: &FlowField, gt: &FlowField, pseudo_gt: &FlowField) -> Result<LossBreakdown> {
        let supervised = supervised_term(pred, gt, self.lmp.as_ref())?;
        let distillation = distillation_term(pred, pseudo_gt)?;
        let total = combine_losses(supervised, distillation, &self.combine)?;
        Ok(LossBreakdown { supervised, distillation, total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(losses: &[f64]) -> PixelLossMap {
        PixelLossMap::new(1, losses.len(), losses.to_vec(), vec![true; losses.len()]).unwrap()
    }

    #[test]
    fn lmp_examples() {
        let w = lmp_weights(&map(&[4.0, 3.0, 2.0, 1.0]), &LmpConfig { keep_fraction: 0.5 }).unwrap();
        assert_eq!(w, vec![0.5, 0.5, 0.0, 0.0]);
        let w = lmp_weights(&map(&[5.0, 5.0, 1.0]), &LmpConfig { keep_fraction: 0.5 }).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w[2], 0.0);
        let w = lmp_weights(&map(&[1.0, 9.0, 3.0]), &LmpConfig { keep_fraction: 1.0 }).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn lmp_ignores_invalid_pixels() {
        let m = PixelLossMap::new(1, 4, vec![9.0, 1.0, 2.0, 3.0], vec![false, true, true, true]).unwrap();
        let w = lmp_weights(&m, &LmpConfig { keep_fraction: 1.0 }).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1..].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let none = PixelLossMap::new(1, 2, vec![1.0, 1.0], vec![false, false]).unwrap();
        assert!(matches!(lmp_weights(&none, &LmpConfig::default()), Err(Error::NoValidPixels)));
        assert!(lmp_weights(&m, &LmpConfig { keep_fraction: 0.0 }).is_err());
    }

    #[test]
    fn epe_loss_three_four_five() {
        let pred = FlowField::from_fn(1, 2, |x, _| if x == 0 { (3.0, 4.0) } else { (1.0, 1.0) });
        let gt = FlowField::from_fn(1, 2, |x, _| if x == 0 { (0.0, 0.0) } else { (1.0, 1.0) });
        let m = per_pixel_epe_loss(&pred, &gt).unwrap();
        assert_eq!(m.loss(), &[5.0, 0.0]);
    }

    #[test]
    fn range_mask() {
        let f = FlowField::from_fn(1, 3, |x, _| [(0.0, 0.0), (5.0, 0.0), (-4.0, 4.0)][x]);
        assert_eq!(out_of_range_mask(&f, SearchRange::new(4)), vec![true, false, true]);
    }

    #[test]
    fn rescale_and_combine() {
        let m = PixelLossMap::new(1, 4, vec![1.0, 2.0, 3.0, 4.0], vec![true, false, true, false]).unwrap();
        let r = sparse_rescale(&m).unwrap();
        assert_eq!(r.loss(), &[2.0, 0.0, 6.0, 0.0]);
        let full = map(&[1.0, 2.0]);
        assert_eq!(sparse_rescale(&full).unwrap(), full);
        let cfg = LossCombineConfig::default();
        assert!((combine_losses(1.0, 0.0, &cfg).unwrap() - 0.9).abs() < 1e-15);
        assert!((combine_losses(2.0, 10.0, &cfg).unwrap() - 2.8).abs() < 1e-12);
        assert!(combine_losses(1.0, 1.0, &LossCombineConfig { distill_alpha: 1.5 }).is_err());
    }
}
