use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::curve::SigmoidFit;
use crate::stats::corr::pearson;

pub const MIN_PLATEAU_FITS: usize = 20;
const BISECTION_ITERS: usize = 200;

/// 0.50, 0.55, ..., 0.95.
pub fn thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// log10 step at which the fitted curve has covered `threshold` of its drop
/// over `range`, or `None` if it never does (flat fits).
///
/// The reference levels are the fitted values at the range endpoints, so the
/// crossing is found by bisection on the monotone fitted curve.
pub fn naoa_at(fit: &SigmoidFit, threshold: f64, range: (f64, f64)) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Contract(format!("threshold {threshold} outside [0, 1]")));
    }
    let (lo, hi) = range;
    let (f_max, f_min) = (fit.eval(lo), fit.eval(hi));
    if !(f_max - f_min > 1e-12 * f_max.abs().max(1.0)) {
        return Ok(None);
    }
    let target = f_max - threshold * (f_max - f_min);
    if fit.eval(lo) <= target {
        return Ok(Some(lo));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if fit.eval(mid) <= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Some(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoAReport {
    pub word: String,
    /// `(threshold, log10 step)`; `None` means unacquired in range.
    pub naoa_at: Vec<(f64, Option<f64>)>,
    /// Mean over the ten thresholds with unacquired ones imputed at the range end.
    pub naoa_range_avg: f64,
    pub imputed: usize,
    pub fit: SigmoidFit,
}

impl AoAReport {
    pub fn at(&self, threshold: f64) -> Option<f64> {
        self.naoa_at.iter().find(|(t, _)| (t - threshold).abs() < 1e-9).and_then(|(_, x)| *x)
    }

    pub fn naoa50(&self) -> Option<f64> {
        self.at(0.5)
    }
}

pub fn naoa_range_avg(fit: &SigmoidFit, range: (f64, f64)) -> Result<f64> {
    let mut total = 0.0;
    for t in thresholds() {
        total += naoa_at(fit, t, range)?.unwrap_or(range.1);
    }
    Ok(total / 10.0)
}

pub fn aoa_report(word: &str, fit: &SigmoidFit, range: (f64, f64)) -> Result<AoAReport> {
    let mut pts = Vec::with_capacity(10);
    for t in thresholds() {
        pts.push((t, naoa_at(fit, t, range)?));
    }
    let imputed = pts.iter().filter(|p| p.1.is_none()).count();
    let naoa_range_avg = pts.iter().map(|p| p.1.unwrap_or(range.1)).sum::<f64>() / 10.0;
    Ok(AoAReport { word: word.to_string(), naoa_at: pts, naoa_range_avg, imputed, fit: *fit })
}

/// Words acquired (nAoA@0.5 at or before the step) at each grid step.
pub fn effective_vocab(reports: &[AoAReport], grid: &[u64]) -> Vec<(u64, usize)> {
    let mut ages: Vec<f64> = reports.iter().filter_map(AoAReport::naoa50).collect();
    ages.sort_by(f64::total_cmp);
    grid.iter()
        .map(|&s| {
            if s == 0 {
                return (s, 0);
            }
            let x = (s as f64).log10();
            (s, ages.partition_point(|&a| a <= x))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauRegression {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
    pub n: usize,
}

/// OLS of each fit's floor `b` on the word's unigram surprisal in bits.
pub fn plateau_vs_unigram(fits: &[(String, SigmoidFit)], counts: &BTreeMap<String, u64>) -> Result<PlateauRegression> {
    let total: u64 = counts.values().sum();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (w, f) in fits {
        if !f.converged {
            continue;
        }
        if let Some(&c) = counts.get(w).filter(|&&c| c > 0) {
            xs.push(-(c as f64 / total as f64).log2());
            ys.push(f.b);
        }
    }
    if xs.len() < MIN_PLATEAU_FITS {
        return Err(Error::Analysis(format!("plateau regression needs {MIN_PLATEAU_FITS} converged fits with counts, got {}", xs.len())));
    }
    let r = pearson(&xs, &ys).ok_or_else(|| Error::Analysis("unigram surprisal or plateau is constant".into()))?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(PlateauRegression { slope, intercept: my - slope * mx, r, n: xs.len() })
}
