use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::aoa::{aoa_report, effective_vocab, AoAReport};
use crate::eval::curve::{fit_double_sigmoid, LearningCurve, SigmoidFit};
use crate::eval::plot::{Plot, Series};
use crate::eval::surprisal::{csv_err, evaluate_checkpoints, write_surprisal_csv, EvalPlan, WordSurprisalRecord};
use crate::lm::checkpoint::list_checkpoints;
use crate::stats::corr::{mean, std_error};
use crate::tnd::{RunMode, SuiteManifest};

pub const EVAL_DIR: &str = "eval";
pub const SUITE_EVAL_FILE: &str = "suite_eval.json";

/// JSON has no NaN; serde_json writes it as `null`, so read `null` back as NaN.
mod nan_null {
    use serde::{Deserialize, Deserializer};

    pub fn de<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Fits and ages for one run's learning curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub label: String,
    pub mode: Option<RunMode>,
    pub seed: Option<u64>,
    pub masked: bool,
    pub steps: Vec<u64>,
    pub reports: Vec<AoAReport>,
    /// Words whose curve could not be fitted, with the reason.
    pub unfit: Vec<(String, String)>,
    /// Mean over words of nAoA@0.5; unacquired words count at the range end.
    #[serde(deserialize_with = "nan_null::de")]
    pub mean_naoa50: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub mean_naoa_range: f64,
    /// Mean over words of the surprisal at the last step.
    #[serde(deserialize_with = "nan_null::de")]
    pub final_mean_surprisal: f64,
    /// Word-averaged surprisal at each step.
    pub mean_curve: Vec<(u64, f64)>,
    pub effective_vocab: Vec<(u64, usize)>,
}

impl RunEvaluation {
    pub fn report(&self, word: &str) -> Option<&AoAReport> {
        self.reports.iter().find(|r| r.word == word)
    }

    /// Mean nAoA@0.5 over `words` that have a report, imputing unacquired at the range end.
    pub fn mean_naoa50_over<S: AsRef<str>>(&self, words: &[S]) -> Option<f64> {
        let end = (*self.steps.last()? as f64).log10();
        let v: Vec<f64> = words.iter().filter_map(|w| self.report(w.as_ref())).map(|r| r.naoa50().unwrap_or(end)).collect();
        (!v.is_empty()).then(|| mean(&v))
    }
}

/// Fits every word's curve in `records` and summarises the run.
pub fn analyze_records(label: &str, records: &[WordSurprisalRecord]) -> Result<RunEvaluation> {
    let mut by_word: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_word.entry(&r.word).or_default().push((r.step, r.mean_surprisal));
        by_step.entry(r.step).or_default().push(r.mean_surprisal);
    }
    if by_word.is_empty() {
        return Err(Error::Analysis(format!("empty report: no surprisal records for {label}")));
    }
    let steps: Vec<u64> = by_step.keys().copied().collect();
    let mean_curve: Vec<(u64, f64)> = by_step.iter().map(|(s, v)| (*s, mean(v))).collect();
    let last = *steps.last().expect("non-empty");
    let mut reports = Vec::new();
    let mut unfit = Vec::new();
    let mut finals = Vec::new();
    for (word, pts) in by_word {
        if let Some(&(_, y)) = pts.iter().find(|(s, _)| *s == last) {
            finals.push(y);
        }
        let fitted = LearningCurve::from_steps(word, &pts).and_then(|c| {
            let range = c.x_range().ok_or_else(|| Error::Input("empty curve".into()))?;
            aoa_report(word, &fit_double_sigmoid(&c)?, range)
        });
        match fitted {
            Ok(r) => reports.push(r),
            Err(e) => unfit.push((word.to_string(), e.to_string())),
        }
    }
    let end = (last.max(1) as f64).log10();
    let n50: Vec<f64> = reports.iter().map(|r| r.naoa50().unwrap_or(end)).collect();
    let nr: Vec<f64> = reports.iter().map(|r| r.naoa_range_avg).collect();
    let ev = effective_vocab(&reports, &steps);
    Ok(RunEvaluation {
        label: label.to_string(),
        mode: None,
        seed: None,
        masked: false,
        steps,
        mean_naoa50: if n50.is_empty() { f64::NAN } else { mean(&n50) },
        mean_naoa_range: if nr.is_empty() { f64::NAN } else { mean(&nr) },
        final_mean_surprisal: mean(&finals),
        reports,
        unfit,
        mean_curve,
        effective_vocab: ev,
    })
}

#[derive(Serialize)]
struct FitRow<'a> {
    word: &'a str,
    b: f64,
    a1: f64,
    a2: f64,
    k1: f64,
    k2: f64,
    m1: f64,
    m2: f64,
    residual: f64,
    converged: bool,
    fallback: bool,
}

#[derive(Serialize)]
struct AoaRow<'a> {
    word: &'a str,
    threshold: f64,
    naoa: Option<f64>,
    imputed: bool,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `fits.csv`, `aoa.csv` and `evaluation.json` for one run.
pub fn write_run_evaluation(dir: &Path, ev: &RunEvaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join("fits.csv"),
        ev.reports.iter().map(|r| {
            let SigmoidFit { b, a1, a2, k1, k2, m1, m2, residual, converged, fallback } = r.fit;
            FitRow { word: &r.word, b, a1, a2, k1, k2, m1, m2, residual, converged, fallback }
        }),
    )?;
    write_rows(
        &dir.join("aoa.csv"),
        ev.reports.iter().flat_map(|r| r.naoa_at.iter().map(|&(t, x)| AoaRow { word: &r.word, threshold: t, naoa: x, imputed: x.is_none() })),
    )?;
    let p = dir.join("evaluation.json");
    fs::write(&p, serde_json::to_string_pretty(ev)? + "\n").map_err(|e| Error::io(&p, e))
}

/// Scores every checkpoint of a run directory and fits its curves.
pub fn evaluate_run(run_dir: &Path, plan: &EvalPlan, batch_size: usize, jobs: usize) -> Result<RunEvaluation> {
    let ckpts = list_checkpoints(&run_dir.join("checkpoints"))?;
    if ckpts.is_empty() {
        return Err(Error::Analysis(format!("empty report: {} has no checkpoints", run_dir.display())));
    }
    let records = evaluate_checkpoints(plan, &ckpts, batch_size, jobs)?;
    let out = run_dir.join(EVAL_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_surprisal_csv(&out.join("surprisal.csv"), &records)?;
    let ev = analyze_records(&run_dir.display().to_string(), &records)?;
    write_run_evaluation(&out, &ev)?;
    Ok(ev)
}

/// Mean and standard error across seeds for one (mode, masked) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mode: RunMode,
    pub masked: bool,
    pub n_seeds: usize,
    #[serde(deserialize_with = "nan_null::de")]
    pub naoa50_mean: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub naoa50_se: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub naoa_range_mean: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub naoa_range_se: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub final_surprisal_mean: f64,
    #[serde(deserialize_with = "nan_null::de")]
    pub final_surprisal_se: f64,
    /// `(step, mean, se)` of the word-averaged curve.
    pub curve: Vec<(u64, f64, f64)>,
    pub effective_vocab: Vec<(u64, f64)>,
}

impl GroupSummary {
    pub fn label(&self) -> String {
        if self.masked {
            format!("{}_masked", self.mode)
        } else {
            self.mode.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEvaluation {
    pub runs: Vec<RunEvaluation>,
    pub groups: Vec<GroupSummary>,
}

impl SuiteEvaluation {
    pub fn group(&self, mode: RunMode, masked: bool) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.mode == mode && g.masked == masked)
    }

    pub fn runs_of(&self, mode: RunMode, masked: bool) -> impl Iterator<Item = &RunEvaluation> {
        self.runs.iter().filter(move |r| r.mode == Some(mode) && r.masked == masked)
    }

    pub fn load(suite_dir: &Path) -> Result<Self> {
        let p = suite_dir.join(EVAL_DIR).join(SUITE_EVAL_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::integrity(&p, e.to_string()))
    }
}

pub fn summarize_groups(runs: &[RunEvaluation]) -> Vec<GroupSummary> {
    let mut cells: BTreeMap<(RunMode, bool), Vec<&RunEvaluation>> = BTreeMap::new();
    for r in runs {
        if let Some(m) = r.mode {
            cells.entry((m, r.masked)).or_default().push(r);
        }
    }
    cells
        .into_iter()
        .map(|((mode, masked), rs)| {
            let col = |f: &dyn Fn(&RunEvaluation) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let n50 = col(&|r| r.mean_naoa50);
            let nr = col(&|r| r.mean_naoa_range);
            let fin = col(&|r| r.final_mean_surprisal);
            let mut per_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            let mut ev_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for r in &rs {
                for &(s, y) in &r.mean_curve {
                    per_step.entry(s).or_default().push(y);
                }
                for &(s, c) in &r.effective_vocab {
                    ev_step.entry(s).or_default().push(c as f64);
                }
            }
            GroupSummary {
                mode,
                masked,
                n_seeds: rs.len(),
                naoa50_mean: mean(&n50),
                naoa50_se: std_error(&n50),
                naoa_range_mean: mean(&nr),
                naoa_range_se: std_error(&nr),
                final_surprisal_mean: mean(&fin),
                final_surprisal_se: std_error(&fin),
                curve: per_step.into_iter().map(|(s, v)| (s, mean(&v), std_error(&v))).collect(),
                effective_vocab: ev_step.into_iter().map(|(s, v)| (s, mean(&v))).collect(),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct TableRow {
    mode: String,
    n_seeds: usize,
    naoa50_mean: f64,
    naoa50_se: f64,
    naoa_range_mean: f64,
    naoa_range_se: f64,
    final_surprisal_mean: f64,
    final_surprisal_se: f64,
}

#[derive(Serialize)]
struct CurveRow {
    mode: String,
    step: u64,
    log10_step: f64,
    mean_surprisal: f64,
    se: f64,
}

/// Evaluates every successful run of a suite, writes per-run outputs and the
/// aggregate tables and plots under `<suite>/eval/`.
pub fn evaluate_suite(suite_dir: &Path, plan: &EvalPlan, batch_size: usize, jobs: usize) -> Result<SuiteEvaluation> {
    let manifest = SuiteManifest::load(suite_dir)?;
    let mut runs = Vec::new();
    for entry in manifest.ok_runs() {
        log::info!("evaluating {}", entry.run_dir.display());
        let mut ev = evaluate_run(&suite_dir.join(&entry.run_dir), plan, batch_size, jobs)?;
        ev.label = entry.run_dir.display().to_string();
        ev.mode = Some(entry.mode);
        ev.seed = Some(entry.seed);
        ev.masked = entry.masked;
        write_run_evaluation(&suite_dir.join(&entry.run_dir).join(EVAL_DIR), &ev)?;
        runs.push(ev);
    }
    if runs.is_empty() {
        return Err(Error::Analysis(format!("empty report: no completed runs in {}", suite_dir.display())));
    }
    let suite = SuiteEvaluation { groups: summarize_groups(&runs), runs };
    write_suite_tables(suite_dir, &suite)?;
    plot_suite(suite_dir, &suite)?;
    Ok(suite)
}

pub fn write_suite_tables(suite_dir: &Path, suite: &SuiteEvaluation) -> Result<()> {
    let out = suite_dir.join(EVAL_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let p = out.join(SUITE_EVAL_FILE);
    fs::write(&p, serde_json::to_string_pretty(suite)? + "\n").map_err(|e| Error::io(&p, e))?;
    write_rows(
        &out.join("naoa_table.csv"),
        suite.groups.iter().map(|g| TableRow {
            mode: g.label(),
            n_seeds: g.n_seeds,
            naoa50_mean: g.naoa50_mean,
            naoa50_se: g.naoa50_se,
            naoa_range_mean: g.naoa_range_mean,
            naoa_range_se: g.naoa_range_se,
            final_surprisal_mean: g.final_surprisal_mean,
            final_surprisal_se: g.final_surprisal_se,
        }),
    )?;
    write_rows(
        &out.join("learning_curves.csv"),
        suite.groups.iter().flat_map(|g| {
            g.curve.iter().map(move |&(s, m, se)| CurveRow { mode: g.label(), step: s, log10_step: (s.max(1) as f64).log10(), mean_surprisal: m, se })
        }),
    )?;
    #[derive(Serialize)]
    struct EvRow {
        mode: String,
        step: u64,
        acquired: f64,
    }
    write_rows(
        &out.join("effective_vocab.csv"),
        suite.groups.iter().flat_map(|g| g.effective_vocab.iter().map(move |&(s, c)| EvRow { mode: g.label(), step: s, acquired: c })),
    )
}

/// Renders `learning_curves.svg` and `effective_vocab.svg` from a suite evaluation.
pub fn plot_suite(suite_dir: &Path, suite: &SuiteEvaluation) -> Result<Vec<PathBuf>> {
    if suite.groups.is_empty() {
        return Err(Error::Analysis(format!("empty report: nothing evaluated in {}", suite_dir.display())));
    }
    let out = suite_dir.join(EVAL_DIR);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let curves = Plot {
        title: "Mean surprisal of tracked words".into(),
        x_label: "log10 step".into(),
        y_label: "surprisal (bits)".into(),
        series: suite
            .groups
            .iter()
            .map(|g| Series {
                name: g.label(),
                points: g.curve.iter().filter(|c| c.0 > 0).map(|&(s, m, _)| ((s as f64).log10(), m)).collect(),
                marker: Some(g.naoa50_mean),
            })
            .collect(),
        scatter: false,
    };
    let vocab = Plot {
        title: "Effective vocabulary".into(),
        x_label: "log10 step".into(),
        y_label: "words acquired".into(),
        series: suite
            .groups
            .iter()
            .map(|g| Series {
                name: g.label(),
                points: g.effective_vocab.iter().filter(|c| c.0 > 0).map(|&(s, c)| ((s as f64).log10(), c)).collect(),
                marker: None,
            })
            .collect(),
        scatter: false,
    };
    let a = out.join("learning_curves.svg");
    let b = out.join("effective_vocab.svg");
    curves.save(&a)?;
    vocab.save(&b)?;
    Ok(vec![a, b])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(word: &str, mid: f64) -> Vec<WordSurprisalRecord> {
        (0..16)
            .map(|i| {
                let step = 10f64.powf(i as f64 * 3.0 / 15.0).round() as u64;
                let x = (step as f64).log10();
                let y = 2.0 + 6.0 / (1.0 + (4.0 * (x - mid)).exp());
                WordSurprisalRecord { word: word.into(), step, mean_surprisal: y, occurrence_count: 100 }
            })
            .collect()
    }

    #[test]
    fn earlier_midpoint_means_earlier_age() {
        let mut recs = synth("early", 1.0);
        recs.extend(synth("late", 2.0));
        let ev = analyze_records("run", &recs).unwrap();
        let (e, l) = (ev.report("early").unwrap().naoa50().unwrap(), ev.report("late").unwrap().naoa50().unwrap());
        assert!(e < l, "{e} {l}");
        assert!(ev.effective_vocab.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(ev.effective_vocab.last().unwrap().1, 2);
    }

    #[test]
    fn empty_records_are_an_empty_report() {
        assert!(matches!(analyze_records("x", &[]), Err(Error::Analysis(m)) if m.contains("empty report")));
    }

    #[test]
    fn groups_average_over_seeds() {
        let mut a = analyze_records("a", &synth("w", 1.0)).unwrap();
        let mut b = analyze_records("b", &synth("w", 2.0)).unwrap();
        for (r, s) in [(&mut a, 0), (&mut b, 1)] {
            r.mode = Some(RunMode::Tnd);
            r.seed = Some(s);
        }
        let g = summarize_groups(&[a.clone(), b.clone()]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].n_seeds, 2);
        assert!((g[0].naoa50_mean - (a.mean_naoa50 + b.mean_naoa50) / 2.0).abs() < 1e-12);
        assert!(g[0].naoa50_se > 0.0);
    }

    #[test]
    fn unfittable_run_survives_json_round_trip() {
        let short: Vec<_> = synth("w", 1.0).into_iter().take(4).collect();
        let ev = analyze_records("r", &short).unwrap();
        assert!(ev.reports.is_empty() && ev.mean_naoa50.is_nan());
        let back: RunEvaluation = serde_json::from_str(&serde_json::to_string(&ev).unwrap()).unwrap();
        assert!(back.mean_naoa50.is_nan());
        assert_eq!(back.unfit, ev.unfit);
    }
}
