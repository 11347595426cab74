use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::stats::corr::pearson;

pub const MIN_POINTS: usize = 10;

/// Standardized OLS fit of one response on named predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub predictors: Vec<String>,
    pub betas: Vec<f64>,
    pub pearson_r: Vec<f64>,
    pub vif: Vec<f64>,
    /// Nested-model F-test p-value for dropping each predictor.
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Z-scores with the sample standard deviation; `None` for a constant series.
pub fn zscore(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    // Relative threshold: a series whose spread is rounding noise is constant.
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if !(sd > 1e-12 * scale) {
        return None;
    }
    Some(x.iter().map(|v| (v - m) / sd).collect())
}

fn design(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Least-squares coefficients and residual sum of squares, or `None` if the
/// normal matrix is numerically singular.
fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let xtx = x.transpose() * x;
    let scale = xtx.diagonal().max().max(1.0);
    // Near-singular designs blow up coefficient error; treat as collinear.
    let svd = xtx.clone().svd(false, false);
    if svd.singular_values.min() <= 1e-10 * scale {
        return None;
    }
    let beta = xtx.cholesky()?.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    Some((beta, resid.norm_squared()))
}

fn most_correlated_pair(names: &[String], cols: &[Vec<f64>]) -> (String, String) {
    let mut best = (0, 1.min(cols.len() - 1), -1.0);
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let r = pearson(&cols[i], &cols[j]).map_or(1.0, f64::abs);
            if r > best.2 {
                best = (i, j, r);
            }
        }
    }
    (names[best.0].clone(), names[best.1].clone())
}

/// Regresses z-scored `y` on z-scored predictors.
///
/// Betas are the coefficients on standardized variables. Each p-value comes
/// from an F-test of the full model against the model without that predictor.
pub fn standardized_ols(y: &[f64], predictors: &[(String, Vec<f64>)]) -> Result<RegressionResult> {
    let n = y.len();
    if n < MIN_POINTS {
        return Err(Error::Analysis(format!("regression needs at least {MIN_POINTS} points, got {n}")));
    }
    if predictors.is_empty() {
        return Err(Error::Analysis("regression needs at least one predictor".into()));
    }
    if let Some((name, s)) = predictors.iter().find(|(_, s)| s.len() != n) {
        return Err(Error::Dimension(format!("predictor `{name}` has {} points, response has {n}", s.len())));
    }
    let names: Vec<String> = predictors.iter().map(|(n, _)| n.clone()).collect();
    let zy = zscore(y).ok_or_else(|| Error::Analysis("response series is constant".into()))?;
    let mut cols = Vec::with_capacity(predictors.len());
    for (name, s) in predictors {
        cols.push(zscore(s).ok_or_else(|| Error::Analysis(format!("predictor `{name}` is constant")))?);
    }
    let p = cols.len();
    // One extra degree of freedom for the intercept removed by centering.
    if n <= p + 1 {
        return Err(Error::Analysis(format!("{n} points cannot support {p} predictors")));
    }
    let yv = DVector::from_column_slice(&zy);
    let x = design(&cols);
    let Some((beta, rss_full)) = lstsq(&x, &yv) else {
        let (a, b) = most_correlated_pair(&names, &cols);
        return Err(Error::Collinearity(a, b));
    };
    let tss = yv.norm_squared();
    let df = (n - p - 1) as f64;
    let f_dist = FisherSnedecor::new(1.0, df).map_err(|e| Error::Analysis(e.to_string()))?;
    let mut p_values = Vec::with_capacity(p);
    for j in 0..p {
        let rss_reduced = if p == 1 {
            tss
        } else {
            let others: Vec<Vec<f64>> = cols.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.clone()).collect();
            lstsq(&design(&others), &yv).map_or(tss, |(_, r)| r)
        };
        let gain = (rss_reduced - rss_full).max(0.0);
        let pv = if rss_full <= 1e-14 * tss {
            if gain > 0.0 { 0.0 } else { 1.0 }
        } else {
            let f = gain / (rss_full / df);
            1.0 - f_dist.cdf(f)
        };
        p_values.push(pv.clamp(0.0, 1.0));
    }
    let pearson_r = cols.iter().map(|c| pearson(c, &zy).unwrap_or(0.0)).collect();
    let vif = if p == 1 { vec![1.0] } else { vif_of_standardized(&cols).into_iter().map(|v| v.value).collect() };
    Ok(RegressionResult {
        predictors: names,
        betas: beta.iter().copied().collect(),
        pearson_r,
        vif,
        p_values,
        r_squared: 1.0 - rss_full / tss,
        n_points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vif {
    pub value: f64,
    /// Set when the predictor is an exact linear combination of the others.
    pub perfectly_collinear: bool,
}

fn vif_of_standardized(cols: &[Vec<f64>]) -> Vec<Vif> {
    (0..cols.len())
        .map(|j| {
            let target = DVector::from_column_slice(&cols[j]);
            let others: Vec<Vec<f64>> = cols.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.clone()).collect();
            let tss = target.norm_squared();
            let r2 = lstsq(&design(&others), &target).map(|(_, rss)| 1.0 - rss / tss);
            match r2 {
                Some(r2) if r2 < 1.0 - 1e-10 => Vif { value: (1.0 / (1.0 - r2)).max(1.0), perfectly_collinear: false },
                _ => Vif { value: f64::INFINITY, perfectly_collinear: true },
            }
        })
        .collect()
}

/// `VIF_j = 1 / (1 - R²_j)`, regressing predictor `j` on the others.
pub fn vif(predictors: &[Vec<f64>]) -> Result<Vec<Vif>> {
    if predictors.len() < 2 {
        return Err(Error::Analysis("VIF needs at least two predictors".into()));
    }
    let n = predictors[0].len();
    if predictors.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension("predictor series differ in length".into()));
    }
    if n < 3 {
        return Err(Error::Analysis(format!("VIF needs at least 3 points, got {n}")));
    }
    let mut cols = Vec::with_capacity(predictors.len());
    for (i, p) in predictors.iter().enumerate() {
        cols.push(zscore(p).ok_or_else(|| Error::Analysis(format!("predictor {i} is constant")))?);
    }
    Ok(vif_of_standardized(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    #[test]
    fn exact_linear_fit_has_unit_beta() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = standardized_ols(&y, &[("x".into(), x)]).unwrap();
        assert!((r.betas[0] - 1.0).abs() < 1e-12);
        assert!((r.pearson_r[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.p_values[0], 0.0);
    }

    #[test]
    fn noise_gives_small_beta_and_large_p() {
        let x = series(200, 1);
        let y = series(200, 2);
        let r = standardized_ols(&y, &[("x".into(), x)]).unwrap();
        assert!(r.betas[0].abs() < 0.2);
        assert!(r.p_values[0] > 0.05);
    }

    #[test]
    fn duplicated_predictor_is_collinearity_error() {
        let x = series(20, 3);
        let y = series(20, 4);
        let err = standardized_ols(&y, &[("a".into(), x.clone()), ("b".into(), x)]).unwrap_err();
        assert!(matches!(err, Error::Collinearity(ref a, ref b) if a == "a" && b == "b"));
    }

    #[test]
    fn too_few_points_rejected() {
        let x = series(5, 3);
        assert!(standardized_ols(&x.clone(), &[("x".into(), x)]).is_err());
    }

    #[test]
    fn orthogonal_predictors_have_unit_vif() {
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        for v in vif(&[a, b]).unwrap() {
            assert!((v.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_predictor_flags_infinite_vif() {
        let a = series(10, 9);
        let v = vif(&[a.clone(), a]).unwrap();
        assert!(v.iter().all(|v| v.perfectly_collinear && v.value.is_infinite()));
    }
}
