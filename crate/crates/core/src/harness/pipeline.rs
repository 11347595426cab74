//! The commands of the `tnd` binary as library functions. Each stage reads
//! and writes only the output-root directory layout, so stages compose by
//! directory contract.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::report::{plot_suite, RunEvaluation, SuiteEvaluation, EVAL_DIR};
use crate::eval::{evaluate_suite, plateau_vs_unigram, EvalPlan, PlateauRegression};
use crate::harness::config::ExperimentConfig;
use crate::lm::corpus::{read_lines, words, Corpus};
use crate::lm::teacher::final_checkpoint;
use crate::lm::{list_checkpoints, load_checkpoint, pretrain_teacher, train_bpe, TransformerLM, Vocabulary};
use crate::ppo::RolloutSource;
use crate::reward::{generate_trajectory_dataset, read_dataset, split_indices, train_age_predictor, write_dataset, AgePredictor, TrainReport};
use crate::stats::ledger::read_ledger_events;
use crate::stats::{group_words, load_pos_map, paired_beta_analysis, write_beta_table, FrequencyLedger, PairedBetaResult, Pos, DEFAULT_VIF_BOUND};
use crate::tnd::run::{read_rollouts, ROLLOUTS_FILE};
use crate::tnd::suite::{grid, ManifestEntry, RunStatus, SuiteCell, SuiteManifest};
use crate::tnd::{run_ablation_suite, run_student, select_mask, MaskSet, RunInputs, RunMode, RunSpec};

pub const SNAPSHOT_FILE: &str = "experiment.toml";

/// Where each stage keeps its artifacts under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn tokenizer(&self) -> PathBuf {
        self.root.join("tokenizer.json")
    }

    pub fn teacher_dir(&self) -> PathBuf {
        self.root.join("teacher")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.teacher_dir().join("checkpoints")
    }

    pub fn reward_dir(&self) -> PathBuf {
        self.root.join("reward")
    }

    pub fn dataset(&self) -> PathBuf {
        self.reward_dir().join("dataset.jsonl")
    }

    pub fn predictor(&self) -> PathBuf {
        self.reward_dir().join("predictor.bin")
    }

    pub fn suite_dir(&self) -> PathBuf {
        self.root.join("suite")
    }

    pub fn mask_dir(&self) -> PathBuf {
        self.root.join("mask_experiment")
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::integrity(path, e.to_string()))
}

/// Writes the config snapshot into `dir`.
pub fn write_snapshot(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let p = dir.join(SNAPSHOT_FILE);
    fs::write(&p, cfg.to_toml()?).map_err(|e| Error::io(&p, e))
}

/// Corpus split, tokenizer and tracked words shared by every stage.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub tracked: Vec<String>,
}

impl Workspace {
    /// Loads the corpus and trains (or reloads) the tokenizer.
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg.output_root);
        create_dir(&layout.root)?;
        let corpus = Corpus::load(&cfg.corpus.path, cfg.corpus.train_fraction, cfg.corpus.split_seed)?;
        let tok = layout.tokenizer();
        let vocab = if tok.is_file() {
            Vocabulary::load(&tok)?
        } else {
            let v = train_bpe(&corpus.train, cfg.corpus.vocab_size)?;
            v.save(&tok)?;
            v
        };
        let tracked = read_lines(&cfg.eval.words)?
            .into_iter()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>();
        if tracked.is_empty() {
            return Err(Error::Config(format!("word list {} is empty", cfg.eval.words.display())));
        }
        write_snapshot(cfg, &layout.root)?;
        Ok(Self { cfg: cfg.clone(), layout, corpus, vocab, tracked })
    }

    pub fn model_config(&self) -> crate::lm::ModelConfig {
        self.cfg.model.with_vocab(self.vocab.len())
    }

    pub fn teacher(&self) -> Result<TransformerLM> {
        let dir = self.layout.trajectory();
        if !dir.is_dir() {
            return Err(Error::Config(format!("no teacher trajectory at {}; run train-teacher first", dir.display())));
        }
        let ck = load_checkpoint(&final_checkpoint(&dir)?)?;
        if ck.model.config().vocab_size != self.vocab.len() {
            return Err(Error::Config("teacher vocabulary does not match the tokenizer".into()));
        }
        Ok(ck.model)
    }

    pub fn predictor(&self) -> Result<AgePredictor> {
        let p = self.layout.predictor();
        if !p.is_file() {
            return Err(Error::Config(format!("no age predictor at {}; run build-reward first", p.display())));
        }
        AgePredictor::load(&p)
    }

    pub fn eval_plan(&self) -> EvalPlan {
        let plan = EvalPlan::new(&self.vocab, &self.corpus.eval, &self.tracked, self.cfg.model.context_len, &self.cfg.eval_config());
        for (w, why) in &plan.rejected {
            log::warn!("not evaluating `{w}`: {why}");
        }
        plan
    }

    /// Train-split word counts over every word, for unigram surprisal.
    pub fn unigram_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for s in &self.corpus.train {
            for w in words(s) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn pos_map(&self) -> Result<BTreeMap<String, Pos>> {
        match &self.cfg.eval.pos_map {
            Some(p) => load_pos_map(p),
            None => Ok(BTreeMap::new()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherOutcome {
    pub trajectory: PathBuf,
    pub checkpoints: usize,
    /// Mean next-token loss (nats) of the final checkpoint on held-out sentences.
    pub final_loss: f64,
}

/// Mean per-token negative log-likelihood over up to `limit` sentences.
pub fn heldout_loss(model: &TransformerLM, vocab: &Vocabulary, sentences: &[String], limit: usize) -> Result<f64> {
    let ctx = model.config().context_len;
    let seqs: Vec<Vec<usize>> = sentences
        .iter()
        .take(limit)
        .map(|s| crate::lm::training_sequence(vocab, s, ctx))
        .filter(|s| s.len() >= 2)
        .collect();
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in seqs.chunks(32) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        for (seq, l) in chunk.iter().zip(model.forward_logits_batch(&refs)?) {
            let v = l.shape()[1];
            for t in 1..seq.len() {
                let row = &l.values()[(t - 1) * v..t * v];
                total += crate::autodiff::log_sum_exp(row) - row[seq[t]];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Input("no held-out sentence to score".into()));
    }
    Ok(total / n as f64)
}

pub fn train_teacher(ws: &Workspace) -> Result<TeacherOutcome> {
    let dir = ws.layout.teacher_dir();
    write_snapshot(&ws.cfg, &dir)?;
    let traj = pretrain_teacher(&ws.corpus.train, &ws.vocab, ws.model_config(), &ws.cfg.teacher_config()?, &dir)?;
    let n = list_checkpoints(&traj)?.len();
    let final_loss = heldout_loss(&ws.teacher()?, &ws.vocab, &ws.corpus.eval, 512)?;
    let out = TeacherOutcome { trajectory: traj, checkpoints: n, final_loss };
    write_json(&dir.join("summary.json"), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub predictor: PathBuf,
    pub scatter: PathBuf,
    pub n_samples: usize,
    pub report: TrainReport,
}

pub fn build_reward(ws: &Workspace, jobs: usize) -> Result<RewardOutcome> {
    let traj = ws.layout.trajectory();
    if !traj.is_dir() {
        return Err(Error::Config(format!("no teacher trajectory at {}; run train-teacher first", traj.display())));
    }
    let dir = ws.layout.reward_dir();
    write_snapshot(&ws.cfg, &dir)?;
    let samples = generate_trajectory_dataset(&traj, &ws.vocab, &ws.corpus.eval, &ws.cfg.dataset_config(jobs))?;
    write_dataset(&ws.layout.dataset(), &samples)?;
    let pcfg = &ws.cfg.reward.predictor;
    let predictor = train_age_predictor(&samples, pcfg, Some(&ws.vocab))?;
    predictor.save(&ws.layout.predictor())?;

    let scatter = dir.join("scatter.csv");
    let (train, hold) = split_indices(samples.len(), pcfg.holdout_fraction, pcfg.seed);
    let mut w = csv::Writer::from_path(&scatter).map_err(|e| Error::integrity(&scatter, e.to_string()))?;
    w.write_record(["split", "step", "true_ln_step", "predicted_ln_step"]).map_err(|e| Error::integrity(&scatter, e.to_string()))?;
    for (split, idx) in [("train", &train), ("heldout", &hold)] {
        let texts: Vec<&str> = idx.iter().map(|&i| samples[i].text.as_str()).collect();
        for (&i, p) in idx.iter().zip(predictor.predict_many(&texts)) {
            let s = samples[i].step;
            w.write_record([split.to_string(), s.to_string(), (s as f64).ln().to_string(), p.to_string()])
                .map_err(|e| Error::integrity(&scatter, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&scatter, e))?;
    let out = RewardOutcome { predictor: ws.layout.predictor(), scatter, n_samples: samples.len(), report: predictor.report.clone() };
    write_json(&dir.join("report.json"), &out)?;
    Ok(out)
}

/// Dataset already on disk, for callers that only retrain the predictor.
pub fn load_dataset(ws: &Workspace) -> Result<Vec<crate::reward::TrajectorySample>> {
    read_dataset(&ws.layout.dataset())
}

struct Loaded {
    teacher: Option<TransformerLM>,
    predictor: Option<AgePredictor>,
}

fn load_for(ws: &Workspace, modes: &[RunMode]) -> Result<Loaded> {
    let teacher = if modes.iter().any(|m| m.uses_teacher()) { Some(ws.teacher()?) } else { None };
    let predictor = if modes.iter().any(|m| m.uses_reward()) { Some(ws.predictor()?) } else { None };
    Ok(Loaded { teacher, predictor })
}

fn inputs<'a>(ws: &'a Workspace, l: &'a Loaded) -> RunInputs<'a> {
    RunInputs { train: &ws.corpus.train, vocab: &ws.vocab, teacher: l.teacher.as_ref(), predictor: l.predictor.as_ref(), tracked_words: &ws.tracked }
}

fn snapshot_runs(ws: &Workspace, suite_dir: &Path, m: &SuiteManifest) -> Result<()> {
    for r in &m.runs {
        let d = suite_dir.join(&r.run_dir);
        if d.is_dir() {
            write_snapshot(&ws.cfg, &d)?;
        }
    }
    Ok(())
}

/// Trains one student into the suite directory and records it in the manifest.
pub fn train_student(ws: &Workspace, mode: RunMode, seed: u64, mask: Option<&MaskSet>) -> Result<ManifestEntry> {
    let loaded = load_for(ws, &[mode])?;
    let suite = ws.layout.suite_dir();
    create_dir(&suite)?;
    let cell = SuiteCell { mode, seed, masked: mask.is_some() };
    let student = ws.cfg.student_config(ws.vocab.len())?;
    let spec = RunSpec { mode, seed, mask: mask.map(|m| m.words.clone()), student };
    let rel = PathBuf::from(cell.dir_name());
    let summary = run_student(&inputs(ws, &loaded), &spec, mask, &suite.join(&rel))?;
    write_snapshot(&ws.cfg, &suite.join(&rel))?;
    let entry = ManifestEntry {
        mode,
        seed,
        masked: cell.masked,
        status: RunStatus::Ok,
        error: None,
        metrics: rel.join(crate::tnd::run::METRICS_FILE),
        ledger: rel.join(crate::tnd::run::LEDGER_FILE),
        final_checkpoint: summary.final_checkpoint.strip_prefix(&suite).map(Path::to_path_buf).ok(),
        run_dir: rel,
        checkpoints: summary.checkpoints,
    };
    let mut manifest = SuiteManifest::load(&suite).unwrap_or(SuiteManifest { mask: spec.mask.clone(), runs: Vec::new() });
    manifest.runs.retain(|r| !(r.mode == mode && r.seed == seed && r.masked == cell.masked));
    manifest.runs.push(entry.clone());
    manifest.runs.sort_by_key(|r| (r.mode, r.seed, r.masked));
    manifest.save(&suite)?;
    Ok(entry)
}

/// Every configured mode crossed with every seed.
pub fn run_suite(ws: &Workspace, jobs: usize) -> Result<SuiteManifest> {
    let modes = &ws.cfg.suite.modes;
    let loaded = load_for(ws, modes)?;
    let suite = ws.layout.suite_dir();
    let student = ws.cfg.student_config(ws.vocab.len())?;
    let m = run_ablation_suite(&inputs(ws, &loaded), &student, &grid(modes, &ws.cfg.suite.seeds), None, &suite, jobs)?;
    snapshot_runs(ws, &suite, &m)?;
    Ok(m)
}

fn warn_failures(suite_dir: &Path) -> Result<usize> {
    let m = SuiteManifest::load(suite_dir)?;
    for r in m.runs.iter().filter(|r| r.status == RunStatus::Failed) {
        log::warn!("skipping failed run {}: {}", r.run_dir.display(), r.error.as_deref().unwrap_or("unknown error"));
    }
    Ok(m.failures())
}

/// Scores every completed run of a suite; writes tables and curves under `<suite>/eval`.
pub fn evaluate(ws: &Workspace, suite_dir: &Path, jobs: usize) -> Result<SuiteEvaluation> {
    warn_failures(suite_dir)?;
    evaluate_suite(suite_dir, &ws.eval_plan(), ws.cfg.eval.batch_size, jobs)
}

pub fn plot(suite_dir: &Path) -> Result<Vec<PathBuf>> {
    let p = suite_dir.join(EVAL_DIR).join(crate::eval::report::SUITE_EVAL_FILE);
    if !p.is_file() {
        return Err(Error::Analysis(format!("empty report: {} has no evaluation; run evaluate first", suite_dir.display())));
    }
    plot_suite(suite_dir, &SuiteEvaluation::load(suite_dir)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauRow {
    pub run: String,
    pub regression: PlateauRegression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSummaryRow {
    pub mode: RunMode,
    pub group: String,
    pub source: crate::stats::Source,
    pub n_runs: usize,
    pub beta_mean: f64,
    pub beta_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub betas: Vec<(String, PairedBetaResult)>,
    pub summary: Vec<BetaSummaryRow>,
    pub plateau: Vec<PlateauRow>,
    pub warnings: Vec<String>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Surprisal curves on the run's checkpoint grid, keyed by word.
fn surprisal_curves(run_dir: &Path) -> Result<(Vec<u64>, BTreeMap<String, Vec<f64>>)> {
    let p = run_dir.join(EVAL_DIR).join("surprisal.csv");
    if !p.is_file() {
        return Err(Error::Analysis(format!("{} is missing; run evaluate first", p.display())));
    }
    let recs = crate::eval::read_surprisal_csv(&p)?;
    let grid: Vec<u64> = recs.iter().map(|r| r.step).collect::<BTreeSet<_>>().into_iter().collect();
    let mut by_word: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in recs {
        by_word.entry(r.word).or_default().insert(r.step, r.mean_surprisal);
    }
    let curves = by_word
        .into_iter()
        .filter(|(_, m)| m.len() == grid.len())
        .map(|(w, m)| (w, m.into_values().collect()))
        .collect();
    Ok((grid, curves))
}

/// Source betas per word group for every evaluated run, and the plateau
/// regression on CLM runs. Writes `<suite>/analysis/`.
pub fn analyze(ws: &Workspace, suite_dir: &Path) -> Result<AnalysisOutcome> {
    let manifest = SuiteManifest::load(suite_dir)?;
    let pos = ws.pos_map()?;
    let counts = ws.unigram_counts();
    let mut warnings = Vec::new();
    let mut betas = Vec::new();
    let mut plateau = Vec::new();
    for r in manifest.ok_runs() {
        let run_dir = suite_dir.join(&r.run_dir);
        let label = r.run_dir.display().to_string();
        let (grid, curves) = match surprisal_curves(&run_dir) {
            Ok(x) => x,
            Err(e) => {
                warnings.push(format!("{label}: {e}"));
                continue;
            }
        };
        let ledger = FrequencyLedger::replay(&ws.tracked, &read_ledger_events(&run_dir.join(&r.ledger.file_name().unwrap_or_default()))?)?;
        let table = ledger.cumulative(&grid);
        let words: Vec<String> = curves.keys().cloned().collect();
        let mut groups: Vec<(String, Vec<String>)> = vec![("all".to_string(), words.clone())];
        groups.extend(group_words(&words, &pos).into_iter().map(|(p, ws)| (p.name().to_string(), ws)));
        for (name, members) in groups {
            match paired_beta_analysis(&table, &curves, &name, &members, DEFAULT_VIF_BOUND) {
                Ok(res) => betas.push((label.clone(), res)),
                Err(e) => warnings.push(format!("{label} group {name}: {e}")),
            }
        }
        if r.mode == RunMode::Clm && !r.masked {
            let ev: RunEvaluation = read_json(&run_dir.join(EVAL_DIR).join("evaluation.json"))?;
            let fits: Vec<(String, crate::eval::SigmoidFit)> = ev.reports.iter().map(|a| (a.word.clone(), a.fit)).collect();
            match plateau_vs_unigram(&fits, &counts) {
                Ok(reg) => plateau.push(PlateauRow { run: label.clone(), regression: reg }),
                Err(e) => warnings.push(format!("{label} plateau: {e}")),
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if betas.is_empty() {
        return Err(Error::Analysis(format!("empty report: no analyzable runs in {}", suite_dir.display())));
    }
    let mode_of: BTreeMap<String, RunMode> = manifest.runs.iter().map(|r| (r.run_dir.display().to_string(), r.mode)).collect();
    let mut cells: BTreeMap<(RunMode, String, crate::stats::Source), Vec<f64>> = BTreeMap::new();
    for (run, res) in &betas {
        for row in &res.rows {
            if let Some(b) = row.beta {
                cells.entry((mode_of[run], row.group.clone(), row.source)).or_default().push(b);
            }
        }
    }
    let summary: Vec<BetaSummaryRow> = cells
        .into_iter()
        .map(|((mode, group, source), bs)| {
            let (m, se) = mean_se(&bs);
            BetaSummaryRow { mode, group, source, n_runs: bs.len(), beta_mean: m, beta_se: se }
        })
        .collect();

    let out = suite_dir.join("analysis");
    create_dir(&out)?;
    write_beta_table(&out.join("beta_table.csv"), &betas)?;
    let sp = out.join("beta_summary.csv");
    let mut w = csv::Writer::from_path(&sp).map_err(|e| Error::integrity(&sp, e.to_string()))?;
    for row in &summary {
        w.serialize(row).map_err(|e| Error::integrity(&sp, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&sp, e))?;
    let outcome = AnalysisOutcome { betas, summary, plateau, warnings };
    write_json(&out.join("plateau.json"), &outcome.plateau)?;
    write_json(&out.join("analysis.json"), &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskComparison {
    pub mask: Vec<String>,
    pub seeds: Vec<u64>,
    /// Mean nAoA@0.5 of the masked words, per seed.
    pub masked: Vec<Option<f64>>,
    pub unmasked: Vec<Option<f64>>,
    pub masked_mean: f64,
    pub masked_se: f64,
    pub unmasked_mean: f64,
    pub unmasked_se: f64,
    /// Demonstrations scanned and masked tokens or words found in them.
    pub demos_scanned: usize,
    pub masked_tokens_in_demos: usize,
    pub masked_words_in_demos: usize,
}

/// The mask: the configured list, or the most frequent tracked content words.
pub fn choose_mask(ws: &Workspace) -> Result<MaskSet> {
    if let Some(p) = &ws.cfg.mask.path {
        return MaskSet::load(&ws.vocab, p);
    }
    let pos = ws.pos_map()?;
    let function: BTreeSet<String> = pos.iter().filter(|(_, p)| **p == Pos::Function).map(|(w, _)| w.clone()).collect();
    let counts = ws.unigram_counts();
    let mut cands = ws.tracked.clone();
    cands.sort_by_key(|w| std::cmp::Reverse(counts.get(w).copied().unwrap_or(0)));
    let m = select_mask(&ws.vocab, &cands, &function, ws.cfg.mask.size);
    if m.is_empty() {
        return Err(Error::Config("no tracked word qualifies for the mask".into()));
    }
    Ok(m)
}

/// Masked TnD against its unmasked control on the same seeds.
pub fn mask_experiment(ws: &Workspace, jobs: usize) -> Result<MaskComparison> {
    let mask = choose_mask(ws)?;
    let loaded = load_for(ws, &[RunMode::Tnd])?;
    let dir = ws.layout.mask_dir();
    let seeds = ws.cfg.mask.seeds.clone();
    if seeds.is_empty() {
        return Err(Error::Config("mask experiment needs at least one seed".into()));
    }
    let cells: Vec<SuiteCell> = seeds.iter().flat_map(|&seed| [true, false].map(|masked| SuiteCell { mode: RunMode::Tnd, seed, masked })).collect();
    let mut student = ws.cfg.student_config(ws.vocab.len())?;
    student.log_rollouts = true;
    let m = run_ablation_suite(&inputs(ws, &loaded), &student, &cells, Some(&mask), &dir, jobs)?;
    snapshot_runs(ws, &dir, &m)?;
    let suite = evaluate(ws, &dir, jobs)?;

    let masked_ids: BTreeSet<usize> = mask.token_ids.iter().copied().collect();
    let masked_words: BTreeSet<&str> = mask.words.iter().map(String::as_str).collect();
    let (mut demos, mut tok_hits, mut word_hits) = (0, 0, 0);
    for r in m.ok_runs().filter(|r| r.masked) {
        for rec in read_rollouts(&dir.join(&r.run_dir).join(ROLLOUTS_FILE))? {
            if rec.source != RolloutSource::Demonstration {
                continue;
            }
            demos += 1;
            tok_hits += rec.generated.iter().filter(|t| masked_ids.contains(t)).count();
            word_hits += words(&rec.continuation).filter(|w| masked_words.contains(w.as_str())).count();
        }
    }
    let per_seed = |masked: bool| -> Vec<Option<f64>> {
        seeds
            .iter()
            .map(|&s| suite.runs_of(RunMode::Tnd, masked).find(|r| r.seed == Some(s)).and_then(|r| r.mean_naoa50_over(&mask.words)))
            .collect()
    };
    let (mk, um) = (per_seed(true), per_seed(false));
    let stats = |v: &[Option<f64>]| {
        let xs: Vec<f64> = v.iter().flatten().copied().collect();
        if xs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_se(&xs)
        }
    };
    let ((mm, ms), (um_m, um_s)) = (stats(&mk), stats(&um));
    let out = MaskComparison {
        mask: mask.words.clone(),
        seeds,
        masked: mk,
        unmasked: um,
        masked_mean: mm,
        masked_se: ms,
        unmasked_mean: um_m,
        unmasked_se: um_s,
        demos_scanned: demos,
        masked_tokens_in_demos: tok_hits,
        masked_words_in_demos: word_hits,
    };
    write_json(&dir.join("mask_comparison.json"), &out)?;
    Ok(out)
}
