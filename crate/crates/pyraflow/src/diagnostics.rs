//! Flow metrics (EPE, Fl-all, magnitude-binned error histograms) and
//! training-dynamics statistics (Welford variance, NCC, effective
//! beta-smoothness), plus their CSV emission.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::FlowField;

/// Default histogram edges in pixels of ground-truth magnitude.
pub const DEFAULT_BIN_EDGES: [f64; 7] = [0.0, 5.0, 10.0, 20.0, 40.0, 80.0, f64::INFINITY];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub epe: f64,
    pub fl_all: f64,
    pub n_valid: usize,
}

fn check_eval(pred: &FlowField, gt: &FlowField, valid: &[bool]) -> Result<()> {
    if !pred.same_size(gt.height(), gt.width()) || valid.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction {}x{}, ground truth {}x{}, mask of {}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width(),
            valid.len()
        )));
    }
    Ok(())
}

fn errors<'a>(pred: &'a FlowField, gt: &'a FlowField, valid: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    let p = pred.data();
    gt.data().chunks_exact(2).enumerate().filter(move |(i, _)| valid[*i]).map(move |(i, g)| {
        let err = (p[2 * i] - g[0]).hypot(p[2 * i + 1] - g[1]);
        (err, g[0].hypot(g[1]))
    })
}

/// Mean end-point error over valid pixels.
pub fn epe(pred: &FlowField, gt: &FlowField, valid: &[bool]) -> Result<f64> {
    check_eval(pred, gt, valid)?;
    let (sum, n) = errors(pred, gt, valid).fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}

/// Outlier fraction: error above 3 px and above 5% of the GT magnitude.
pub fn fl_all(pred: &FlowField, gt: &FlowField, valid: &[bool]) -> Result<f64> {
    check_eval(pred, gt, valid)?;
    let (bad, n) = errors(pred, gt, valid)
        .fold((0usize, 0usize), |(b, n), (e, m)| (b + usize::from(e > 3.0 && e > 0.05 * m), n + 1));
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(bad as f64 / n as f64)
}

/// EPE and Fl-all over the GT validity mask.
pub fn evaluate(pred: &FlowField, gt: &FlowField) -> Result<MetricReport> {
    let valid = gt.valid_or_all();
    Ok(MetricReport {
        epe: epe(pred, gt, &valid)?,
        fl_all: fl_all(pred, gt, &valid)?,
        n_valid: valid.iter().filter(|&&v| v).count(),
    })
}

/// One bin `[lo, hi)` of GT magnitude; `mean_epe` is `None` when empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_epe: Option<f64>,
}

pub fn error_histogram(pred: &FlowField, gt: &FlowField, valid: &[bool], edges: &[f64]) -> Result<Vec<HistogramBin>> {
    check_eval(pred, gt, valid)?;
    if edges.len() < 2 || edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
    }
    let mut sums = vec![0.0; edges.len() - 1];
    let mut counts = vec![0usize; edges.len() - 1];
    for (e, m) in errors(pred, gt, valid) {
        if let Some(b) = edges.windows(2).position(|w| m >= w[0] && m < w[1]) {
            sums[b] += e;
            counts[b] += 1;
        }
    }
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(b, w)| HistogramBin {
            lo: w[0],
            hi: w[1],
            count: counts[b],
            mean_epe: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}

/// Running per-element mean and sum of squared deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct WelfordState {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl WelfordState {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.mean.len() {
            return Err(Error::Shape(format!("sample has {} entries, state has {}", sample.len(), self.mean.len())));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        Ok(())
    }

    /// Combines two states as if all samples had been fed to one.
    pub fn merge(&self, other: &WelfordState) -> Result<WelfordState> {
        if self.mean.len() != other.mean.len() {
            return Err(Error::Shape("merging states of different dimension".into()));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = WelfordState::new(self.mean.len());
        out.count = self.count + other.count;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            out.mean[i] = self.mean[i] + d * nb / n;
            out.m2[i] = self.m2[i] + other.m2[i] + d * d * na * nb / n;
        }
        Ok(out)
    }

    /// Sample variance `M2 / (n - 1)`; zeros before two samples.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let d = (self.count - 1) as f64;
        self.m2.iter().map(|s| s / d).collect()
    }

    /// Mean of the per-element variances.
    pub fn mean_variance(&self) -> f64 {
        if self.mean.is_empty() {
            return 0.0;
        }
        self.variance().iter().sum::<f64>() / self.mean.len() as f64
    }
}

/// Zero-mean normalized cross-correlation; 0 when either input is constant.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("ncc inputs have lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x - ma, y - mb);
        ab += p * q;
        aa += p * p;
        bb += q * q;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `|grad1 - grad2| / |theta1 - theta2|`.
pub fn beta_eff(grad1: &[f64], grad2: &[f64], theta1: &[f64], theta2: &[f64]) -> Result<f64> {
    if grad1.len() != grad2.len() || theta1.len() != theta2.len() {
        return Err(Error::Shape("beta_eff inputs differ in length".into()));
    }
    let dt = dist(theta1, theta2);
    if dt == 0.0 {
        return Err(Error::IdenticalParameters);
    }
    Ok(dist(grad1, grad2) / dt)
}

/// Trailing moving average over the last `window` present values.
pub fn moving_average(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let present: Vec<f64> = values[lo..=i].iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

/// One row of a gradient trace CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub ncc: Option<f64>,
    pub beta_eff: Option<f64>,
    pub sigma2: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `iter,ncc,beta_eff,sigma2`; absent values are empty fields.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "ncc", "beta_eff", "sigma2"])?;
    for r in rows {
        w.write_record([r.iter.to_string(), opt(r.ncc), opt(r.beta_eff), opt(r.sigma2)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bin_lo,bin_hi,count,mean_epe`; empty bins leave `mean_epe` blank.
pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "count", "mean_epe"])?;
    for b in bins {
        w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), opt(b.mean_epe)])?;
    }
    w.flush()?;
    Ok(())
}
