use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::corr::pearson;
use crate::stats::ledger::{CumulativeTable, Source};
use crate::stats::regression::{standardized_ols, zscore, RegressionResult};

pub const DEFAULT_VIF_BOUND: f64 = 10.0;

/// One source's line of the beta table for a word group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRow {
    pub group: String,
    pub source: Source,
    pub beta: Option<f64>,
    pub r: Option<f64>,
    pub vif: Option<f64>,
    pub p_value: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedBetaResult {
    pub group: String,
    pub n_words: usize,
    pub n_points: usize,
    pub rows: Vec<SourceRow>,
    pub trial_demo: Option<RegressionResult>,
    pub trial_corpus: Option<RegressionResult>,
}

impl PairedBetaResult {
    pub fn row(&self, source: Source) -> &SourceRow {
        self.rows.iter().find(|r| r.source == source).expect("one row per source")
    }
}

/// Group-mean series of `log(1 + count)` for one source.
fn log_count_series(table: &CumulativeTable, words: &[&str], source: Source) -> Vec<f64> {
    let mut out = vec![0.0; table.grid.len()];
    for w in words {
        if let Some(s) = table.series(w, source) {
            for (o, &c) in out.iter_mut().zip(s) {
                *o += (c as f64).ln_1p();
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= words.len() as f64);
    out
}

/// Fits `y` on the non-constant members of a predictor pair. Constant
/// predictors are returned as dropped.
fn fit_pair(
    y: &[f64],
    a: (Source, &[f64]),
    b: (Source, &[f64]),
) -> Result<(Option<RegressionResult>, Vec<Source>)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (s, x) in [a, b] {
        if zscore(x).is_some() {
            keep.push((s.name().to_string(), x.to_vec()));
        } else {
            dropped.push(s);
        }
    }
    if keep.is_empty() {
        return Ok((None, dropped));
    }
    Ok((Some(standardized_ols(y, &keep)?), dropped))
}

fn coef(res: &Option<RegressionResult>, s: Source) -> Option<(f64, f64, f64)> {
    let r = res.as_ref()?;
    let j = r.predictors.iter().position(|p| p == s.name())?;
    Some((r.betas[j], r.vif[j], r.p_values[j]))
}

/// Table row per source for one word group.
///
/// `surprisal` maps each word to its mean surprisal at every grid step. The
/// response is the group-mean surprisal; predictors are group-mean
/// `log(1 + cumulative count)`. Demo comes from the (trial, demo) fit, corpus
/// from the (trial, corpus) fit, and trial averages its two betas.
pub fn paired_beta_analysis(
    table: &CumulativeTable,
    surprisal: &BTreeMap<String, Vec<f64>>,
    group_name: &str,
    group: &[String],
    vif_bound: f64,
) -> Result<PairedBetaResult> {
    let words: Vec<&str> = group.iter().map(String::as_str).filter(|w| surprisal.contains_key(*w)).collect();
    if words.is_empty() {
        return Err(Error::Analysis(format!("group `{group_name}` has no words with surprisal curves")));
    }
    let n = table.grid.len();
    if let Some(w) = words.iter().find(|w| surprisal[**w].len() != n) {
        return Err(Error::Dimension(format!("surprisal curve for `{w}` is not aligned with the {n}-step grid")));
    }
    let y: Vec<f64> = (0..n).map(|g| words.iter().map(|w| surprisal[*w][g]).sum::<f64>() / words.len() as f64).collect();
    let series: BTreeMap<Source, Vec<f64>> = Source::ALL.iter().map(|&s| (s, log_count_series(table, &words, s))).collect();
    let (td, td_drop) = fit_pair(&y, (Source::Trial, &series[&Source::Trial]), (Source::Demo, &series[&Source::Demo]))?;
    let (tc, tc_drop) = fit_pair(&y, (Source::Trial, &series[&Source::Trial]), (Source::Corpus, &series[&Source::Corpus]))?;

    let mut rows = Vec::with_capacity(3);
    for s in Source::ALL {
        let mut flags = Vec::new();
        let r = pearson(&series[&s], &y);
        let (beta, vif, p) = match s {
            Source::Demo => coef(&td, s).map_or((None, None, None), |(b, v, p)| (Some(b), Some(v), Some(p))),
            Source::Corpus => coef(&tc, s).map_or((None, None, None), |(b, v, p)| (Some(b), Some(v), Some(p))),
            Source::Trial => {
                let fits: Vec<(f64, f64, f64)> = [coef(&td, s), coef(&tc, s)].into_iter().flatten().collect();
                if fits.is_empty() {
                    (None, None, None)
                } else {
                    let k = fits.len() as f64;
                    let beta = fits.iter().map(|f| f.0).sum::<f64>() / k;
                    let vif = fits.iter().map(|f| f.1).fold(1.0, f64::max);
                    // Conservative: the weaker of the two nested tests.
                    let p = fits.iter().map(|f| f.2).fold(0.0, f64::max);
                    (Some(beta), Some(vif), Some(p))
                }
            }
        };
        if td_drop.contains(&s) || tc_drop.contains(&s) {
            flags.push("dropped:constant".to_string());
        }
        if vif.is_some_and(|v| v > vif_bound) {
            flags.push(format!("vif>{vif_bound}"));
        }
        rows.push(SourceRow { group: group_name.to_string(), source: s, beta, r, vif, p_value: p, flags });
    }
    Ok(PairedBetaResult { group: group_name.to_string(), n_words: words.len(), n_points: n, rows, trial_demo: td, trial_corpus: tc })
}

#[derive(Serialize)]
struct BetaRow<'a> {
    run: &'a str,
    group: &'a str,
    source: Source,
    beta: Option<f64>,
    r: Option<f64>,
    vif: Option<f64>,
    p_value: Option<f64>,
    n_words: usize,
    n_points: usize,
    flags: String,
}

/// Writes the beta table: one line per (run, group, source).
pub fn write_beta_table(path: &Path, results: &[(String, PairedBetaResult)]) -> Result<()> {
    let err = |e: csv::Error| Error::integrity(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for (run, res) in results {
        for row in &res.rows {
            w.serialize(BetaRow {
                run,
                group: &row.group,
                source: row.source,
                beta: row.beta,
                r: row.r,
                vif: row.vif,
                p_value: row.p_value,
                n_words: res.n_words,
                n_points: res.n_points,
                flags: row.flags.join(";"),
            })
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
