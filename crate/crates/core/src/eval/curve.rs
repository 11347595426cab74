use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CURVE_POINTS: usize = 8;
const MAX_ITER: usize = 300;
/// Slopes are capped at this many units per x-range.
const MAX_SLOPE_PER_RANGE: f64 = 200.0;

/// Surprisal against log10 step, ordered by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub word: String,
    pub points: Vec<(f64, f64)>,
}

impl LearningCurve {
    /// Builds a curve from `(step, surprisal)` pairs, dropping step 0.
    pub fn from_steps(word: &str, steps: &[(u64, f64)]) -> Result<Self> {
        let mut pts: Vec<(f64, f64)> = steps.iter().filter(|(s, _)| *s > 0).map(|&(s, y)| ((s as f64).log10(), y)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = Self { word: word.to_string(), points: pts };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Contract(format!("curve for `{}` has non-increasing steps", self.word)));
        }
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Input(format!("curve for `{}` has non-finite points", self.word)));
        }
        Ok(())
    }

    pub fn x_range(&self) -> Option<(f64, f64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }
}

/// `f(x) = b + a1·σ(−k1(x−m1)) + a2·σ(−k2(x−m2))` with `a, k >= 0` and `m1 <= m2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub b: f64,
    pub a1: f64,
    pub a2: f64,
    pub k1: f64,
    pub k2: f64,
    pub m1: f64,
    pub m2: f64,
    /// Root-mean-square residual over the fitted points.
    pub residual: f64,
    pub converged: bool,
    /// Every double-sigmoid start failed and this is a single sigmoid (`a2 = 0`).
    pub fallback: bool,
}

fn sigma(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl SigmoidFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.b + self.a1 * sigma(-self.k1 * (x - self.m1)) + self.a2 * sigma(-self.k2 * (x - self.m2))
    }

    fn from_params(p: &[f64; 7]) -> Self {
        let mut f = Self { b: p[0], a1: p[1], a2: p[2], k1: p[3], k2: p[4], m1: p[5], m2: p[6], residual: 0.0, converged: false, fallback: false };
        if f.m1 > f.m2 {
            std::mem::swap(&mut f.a1, &mut f.a2);
            std::mem::swap(&mut f.k1, &mut f.k2);
            std::mem::swap(&mut f.m1, &mut f.m2);
        }
        f
    }

    /// Upper bound of the curve, `b + a1 + a2`.
    pub fn ceiling(&self) -> f64 {
        self.b + self.a1 + self.a2
    }
}

struct Bounds {
    lo: [f64; 7],
    hi: [f64; 7],
}

fn residuals(p: &[f64; 7], pts: &[(f64, f64)]) -> DVector<f64> {
    let f = SigmoidFit::from_params(p);
    DVector::from_iterator(pts.len(), pts.iter().map(|&(x, y)| f.eval(x) - y))
}

fn jacobian(p: &[f64; 7], pts: &[(f64, f64)], free: &[bool; 7]) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(pts.len(), 7);
    for (i, &(x, _)) in pts.iter().enumerate() {
        let s1 = sigma(-p[3] * (x - p[5]));
        let s2 = sigma(-p[4] * (x - p[6]));
        let d1 = s1 * (1.0 - s1);
        let d2 = s2 * (1.0 - s2);
        let row = [1.0, s1, s2, -p[1] * d1 * (x - p[5]), -p[2] * d2 * (x - p[6]), p[1] * d1 * p[3], p[2] * d2 * p[4]];
        for c in 0..7 {
            if free[c] {
                j[(i, c)] = row[c];
            }
        }
    }
    j
}

fn project(p: &mut [f64; 7], b: &Bounds) {
    for i in 0..7 {
        p[i] = p[i].clamp(b.lo[i], b.hi[i]);
    }
}

/// Projected Levenberg–Marquardt. Returns parameters, cost and whether a
/// convergence test (rather than the iteration cap) stopped it.
fn levenberg_marquardt(start: [f64; 7], pts: &[(f64, f64)], bounds: &Bounds, free: &[bool; 7]) -> ([f64; 7], f64, bool) {
    let mut p = start;
    project(&mut p, bounds);
    let mut r = residuals(&p, pts);
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..MAX_ITER {
        let j = jacobian(&p, pts, free);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        if g.amax() < 1e-12 {
            return (p, cost, true);
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..7 {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut trial = p;
            for i in 0..7 {
                if free[i] {
                    trial[i] += delta[i];
                }
            }
            project(&mut trial, bounds);
            let rt = residuals(&trial, pts);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct < cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let step: f64 = (0..7).map(|i| (trial[i] - p[i]).abs()).fold(0.0, f64::max);
                p = trial;
                r = rt;
                cost = ct;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-12 || step < 1e-12 {
                    return (p, cost, true);
                }
                break;
            }
            mu *= 2.0;
            if mu > 1e12 {
                break;
            }
        }
        if !improved {
            // no downhill step at any damping: a (constrained) stationary point
            return (p, cost, true);
        }
    }
    (p, cost, false)
}

fn finish(p: [f64; 7], cost: f64, converged: bool, n: usize, fallback: bool) -> SigmoidFit {
    let mut f = SigmoidFit::from_params(&p);
    f.residual = (cost / n as f64).sqrt();
    f.converged = converged && p.iter().all(|v| v.is_finite());
    f.fallback = fallback;
    f
}

/// Multi-start projected LM fit; the best converged start by residual wins.
///
/// Eight deterministic starts spread the midpoints over the x range and split
/// the observed drop between the two stages. If none converges, a single
/// sigmoid is fitted instead and flagged as a fallback.
pub fn fit_double_sigmoid(curve: &LearningCurve) -> Result<SigmoidFit> {
    curve.validate()?;
    let pts = &curve.points;
    if pts.len() < MIN_CURVE_POINTS {
        return Err(Error::Input(format!("`{}` has {} points, need at least {MIN_CURVE_POINTS}", curve.word, pts.len())));
    }
    let (x0, x1) = curve.x_range().expect("non-empty");
    let span = (x1 - x0).max(1e-6);
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let head = ys[..3].iter().sum::<f64>() / 3.0;
    let tail = ys[ys.len() - 3..].iter().sum::<f64>() / 3.0;
    let drop = (head - tail).max(0.0).max(0.1 * (y_max - y_min));
    let y_span = (y_max - y_min).max(1e-6);
    let bounds = Bounds {
        lo: [y_min - y_span, 0.0, 0.0, 0.0, 0.0, x0 - 0.5 * span, x0 - 0.5 * span],
        hi: [y_max + y_span, 4.0 * y_span, 4.0 * y_span, MAX_SLOPE_PER_RANGE / span, MAX_SLOPE_PER_RANGE / span, x1 + 0.5 * span, x1 + 0.5 * span],
    };
    let k0 = 8.0 / span;
    let mids = [(0.15, 0.5), (0.15, 0.85), (0.5, 0.85), (0.3, 0.7)];
    let splits = [(0.5, 0.5), (0.7, 0.3)];
    let all = [true; 7];
    let mut best: Option<SigmoidFit> = None;
    for &(q1, q2) in &mids {
        for &(s1, s2) in &splits {
            let start = [tail.min(head), s1 * drop, s2 * drop, k0, k0, x0 + q1 * span, x0 + q2 * span];
            let (p, cost, ok) = levenberg_marquardt(start, pts, &bounds, &all);
            let f = finish(p, cost, ok, pts.len(), false);
            if f.converged && best.map_or(true, |b| f.residual < b.residual) {
                best = Some(f);
            }
        }
    }
    if let Some(f) = best {
        return Ok(f);
    }
    let single = [true, true, false, true, false, true, false];
    let mut fb: Option<SigmoidFit> = None;
    for q in [0.25, 0.5, 0.75] {
        let start = [tail.min(head), drop, 0.0, k0, 0.0, x0 + q * span, x1 + 0.5 * span];
        let (p, cost, ok) = levenberg_marquardt(start, pts, &bounds, &single);
        let f = finish(p, cost, ok, pts.len(), true);
        if fb.map_or(true, |b| f.residual < b.residual) {
            fb = Some(f);
        }
    }
    Ok(fb.expect("three single-sigmoid starts"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xs(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 4.0 / (n - 1) as f64).collect()
    }

    #[test]
    fn recovers_a_clean_double_sigmoid() {
        let truth = SigmoidFit { b: 2.0, a1: 5.0, a2: 3.0, k1: 6.0, k2: 5.0, m1: 1.0, m2: 3.0, residual: 0.0, converged: true, fallback: false };
        let c = LearningCurve { word: "w".into(), points: xs(30).into_iter().map(|x| (x, truth.eval(x))).collect() };
        let f = fit_double_sigmoid(&c).unwrap();
        assert!(f.converged && !f.fallback);
        assert!(f.residual < 1e-4, "{f:?}");
        assert!((f.b - 2.0).abs() < 0.05 && (f.m1 - 1.0).abs() < 0.05 && (f.m2 - 3.0).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn constant_data_gives_flat_fit() {
        let c = LearningCurve { word: "w".into(), points: xs(12).into_iter().map(|x| (x, 4.0)).collect() };
        let f = fit_double_sigmoid(&c).unwrap();
        for x in xs(50) {
            assert!((f.eval(x) - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_curve_is_nonincreasing() {
        let c = LearningCurve { word: "w".into(), points: xs(20).into_iter().map(|x| (x, 9.0 - x + (x * 7.0).sin() * 0.3)).collect() };
        let f = fit_double_sigmoid(&c).unwrap();
        let grid: Vec<f64> = (0..1000).map(|i| -1.0 + i as f64 * 6.0 / 999.0).collect();
        assert!(grid.windows(2).all(|w| f.eval(w[1]) <= f.eval(w[0]) + 1e-12));
        assert!(grid.iter().all(|&x| f.eval(x) >= f.b - 1e-12 && f.eval(x) <= f.ceiling() + 1e-12));
    }

    #[test]
    fn too_few_points_is_input_error() {
        let c = LearningCurve { word: "w".into(), points: xs(5).into_iter().map(|x| (x, x)).collect() };
        assert!(matches!(fit_double_sigmoid(&c), Err(Error::Input(_))));
    }

    #[test]
    fn from_steps_drops_zero_and_sorts() {
        let c = LearningCurve::from_steps("w", &[(100, 1.0), (0, 9.0), (10, 2.0)]).unwrap();
        assert_eq!(c.points, vec![(1.0, 2.0), (2.0, 1.0)]);
    }
}
