use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, AdamMeta, Tensor};
use crate::error::{Error, Result};
use crate::lm::checkpoint::{checkpoint_file_name, read_container, save_checkpoint, write_container, RngState};
use crate::lm::model::{ModelConfig, TransformerLM};
use crate::lm::sample::Sampler;
use crate::lm::teacher::EpochSampler;
use crate::lm::tokenizer::Vocabulary;
use crate::lm::train::clm_step;
use crate::ppo::{collect_demonstrations, collect_trials, ppo_update, PPOConfig, PpoStats, Rollout, RolloutSource, PROMPT_TOKENS};
use crate::reward::AgePredictor;
use crate::stats::ledger::{read_ledger_events, FrequencyLedger, Source};
use crate::tnd::mask::MaskSet;
use crate::tnd::schedule::{RunMode, Schedule};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const ROLLOUTS_FILE: &str = "rollouts.jsonl";
pub const RESUME_FILE: &str = "resume.bin";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub steps: u64,
    pub schedule: Schedule,
    pub model: ModelConfig,
    pub clm_batch_size: usize,
    pub clm_lr: f64,
    /// Prompts per interactive step; TnD batches hold one trial and one demo per prompt.
    pub prompts_per_step: usize,
    pub top_k: usize,
    pub ppo: PPOConfig,
    /// Steps at which evaluation checkpoints are written. The final step is always saved.
    pub checkpoints: Vec<u64>,
    /// Write resumable state every this many steps (and at each checkpoint).
    pub resume_every: u64,
    /// Append every trial and demonstration to `rollouts.jsonl`.
    pub log_rollouts: bool,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            schedule: Schedule::default(),
            model: ModelConfig { d_model: 64, n_heads: 4, n_layers: 2, context_len: 32, vocab_size: 0 },
            clm_batch_size: 16,
            clm_lr: 1e-4,
            prompts_per_step: 8,
            top_k: 20,
            ppo: PPOConfig::default(),
            checkpoints: crate::lm::teacher::log_spaced_schedule(2000, 25),
            resume_every: 100,
            log_rollouts: false,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.ppo.validate()?;
        self.model.validate()?;
        if self.steps == 0 || self.clm_batch_size == 0 || self.prompts_per_step == 0 || self.top_k == 0 {
            return Err(Error::Config("steps, clm_batch_size, prompts_per_step and top_k must be >= 1".into()));
        }
        if !(self.clm_lr > 0.0) {
            return Err(Error::Config(format!("clm_lr must be > 0, got {}", self.clm_lr)));
        }
        if self.model.context_len <= PROMPT_TOKENS + 1 {
            return Err(Error::Config(format!("context_len {} leaves no room after a {PROMPT_TOKENS}-token prompt", self.model.context_len)));
        }
        if let Some(bad) = self.checkpoints.iter().find(|&&s| s == 0 || s > self.steps) {
            return Err(Error::Config(format!("checkpoint step {bad} outside [1, {}]", self.steps)));
        }
        Ok(())
    }

    /// Sorted, deduplicated checkpoint steps including the final step.
    pub fn checkpoint_grid(&self) -> Vec<u64> {
        let mut g = self.checkpoints.clone();
        g.push(self.steps);
        g.sort_unstable();
        g.dedup();
        g
    }
}

/// Everything that identifies a run; written to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: RunMode,
    pub seed: u64,
    pub mask: Option<Vec<String>>,
    pub student: StudentConfig,
}

/// Shared, read-only inputs of every run in a suite.
#[derive(Clone, Copy)]
pub struct RunInputs<'a> {
    pub train: &'a [String],
    pub vocab: &'a Vocabulary,
    pub teacher: Option<&'a TransformerLM>,
    pub predictor: Option<&'a AgePredictor>,
    pub tracked_words: &'a [String],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Clm,
    Ppo,
    ClmGenerated,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub kind: StepKind,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppo: Option<PpoStats>,
    /// Interactive steps: whether every trial and demo pair shared its prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_paired: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prompts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub step: u64,
    pub source: RolloutSource,
    pub prompt: Vec<usize>,
    pub generated: Vec<usize>,
    pub continuation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub seed: u64,
    pub steps: u64,
    pub checkpoints: Vec<u64>,
    pub final_checkpoint: PathBuf,
    pub resumed_from: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResumeHeader {
    kind: String,
    step: u64,
    spec: RunSpec,
    cursor: EpochSampler,
    rng: RngState,
    clm_opt: AdamMeta,
    ppo_opt: AdamMeta,
    n_params: usize,
}

struct State {
    step: u64,
    model: TransformerLM,
    clm_opt: Adam,
    ppo_opt: Adam,
    cursor: EpochSampler,
    rng: ChaCha8Rng,
    ledger: FrequencyLedger,
}

fn fresh_state(spec: &RunSpec, n_sentences: usize, tracked: &[String]) -> Result<State> {
    let model = TransformerLM::new(spec.student.model, spec.seed)?;
    let clm_opt = Adam::new(model.params(), AdamConfig::with_lr(spec.student.clm_lr));
    let ppo_opt = Adam::new(model.params(), AdamConfig::with_lr(spec.student.ppo.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    Ok(State {
        step: 0,
        model,
        clm_opt,
        ppo_opt,
        cursor: EpochSampler::new(n_sentences, spec.seed)?,
        rng,
        ledger: FrequencyLedger::new(tracked),
    })
}

fn save_resume(dir: &Path, spec: &RunSpec, st: &State) -> Result<()> {
    let header = ResumeHeader {
        kind: "resume".into(),
        step: st.step,
        spec: spec.clone(),
        cursor: st.cursor.clone(),
        rng: RngState::capture(&st.rng),
        clm_opt: st.clm_opt.meta(),
        ppo_opt: st.ppo_opt.meta(),
        n_params: st.model.params().tensors().len(),
    };
    let mut arrays: Vec<&[f64]> = st.model.params().tensors().iter().map(Tensor::values).collect();
    arrays.extend(st.clm_opt.moment_arrays());
    arrays.extend(st.ppo_opt.moment_arrays());
    // ledger first: a resume point must never be ahead of the events it implies
    st.ledger.write_jsonl(&dir.join(LEDGER_FILE))?;
    write_container(&dir.join(RESUME_FILE), &header, &arrays)
}

fn load_resume(dir: &Path, spec: &RunSpec, tracked: &[String]) -> Result<State> {
    let path = dir.join(RESUME_FILE);
    let (h, mut arrays): (ResumeHeader, Vec<Vec<f64>>) = read_container(&path)?;
    if h.kind != "resume" {
        return Err(Error::integrity(&path, format!("expected resume state, found `{}`", h.kind)));
    }
    if &h.spec != spec {
        return Err(Error::Config(format!("{} was written by a different run configuration", path.display())));
    }
    let n = h.n_params;
    let n_clm = 2 * h.clm_opt.t.len();
    if arrays.len() != n + n_clm + 2 * h.ppo_opt.t.len() {
        return Err(Error::integrity(&path, format!("unexpected array count {} (step {})", arrays.len(), h.step)));
    }
    let ppo_arrays = arrays.split_off(n + n_clm);
    let clm_arrays = arrays.split_off(n);
    let template = TransformerLM::new(spec.student.model, spec.seed)?;
    let tensors = template
        .params()
        .tensors()
        .iter()
        .zip(arrays)
        .map(|(t, a)| Tensor::new(t.shape().to_vec(), a))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::integrity(&path, format!("{e} (step {})", h.step)))?;
    let model = TransformerLM::from_params(spec.student.model, tensors)?;
    let events: Vec<_> = read_ledger_events(&dir.join(LEDGER_FILE))?.into_iter().filter(|e| e.step <= h.step).collect();
    let ledger = FrequencyLedger::replay(tracked, &events)?;
    Ok(State {
        step: h.step,
        model,
        clm_opt: Adam::from_parts(h.clm_opt, clm_arrays)?,
        ppo_opt: Adam::from_parts(h.ppo_opt, ppo_arrays)?,
        cursor: h.cursor,
        rng: h.rng.restore()?,
        ledger,
    })
}

/// Keeps only JSONL records whose `step` is at most `step`.
fn truncate_jsonl(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::integrity(path, e.to_string()))?;
        if v.get("step").and_then(|s| s.as_u64()).is_some_and(|s| s <= step) {
            kept.push(line);
        }
    }
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_writer(path: &Path) -> Result<BufWriter<File>> {
    let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, rec: &T) -> Result<()> {
    let line = serde_json::to_string(rec)?;
    writeln!(w, "{line}").map_err(|e| Error::io(path, e))
}

fn check_inputs(inputs: &RunInputs<'_>, spec: &RunSpec) -> Result<()> {
    let v = inputs.vocab.len();
    if spec.student.model.vocab_size != v {
        return Err(Error::Config(format!("student vocab {} != tokenizer vocab {v}", spec.student.model.vocab_size)));
    }
    if spec.mode.uses_teacher() {
        let t = inputs.teacher.ok_or_else(|| Error::Config(format!("mode {} needs a teacher", spec.mode)))?;
        if t.config().vocab_size != v {
            return Err(Error::Config(format!("teacher vocab {} != student vocab {v}", t.config().vocab_size)));
        }
    }
    if spec.mode.uses_reward() && inputs.predictor.is_none() {
        return Err(Error::Config(format!("mode {} needs an age predictor", spec.mode)));
    }
    if spec.mask.is_some() && !spec.mode.uses_teacher() {
        return Err(Error::Config(format!("a mask only applies to modes with demonstrations, not {}", spec.mode)));
    }
    if inputs.train.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    Ok(())
}

fn next_prompts(cursor: &mut EpochSampler, encoded: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = &encoded[cursor.next_index()];
        if s.len() >= PROMPT_TOKENS {
            out.push(s[..PROMPT_TOKENS].to_vec());
        }
    }
    out
}

fn clm_sequence(vocab: &Vocabulary, ids: &[usize], context_len: usize) -> Vec<usize> {
    let mut seq = Vec::with_capacity(ids.len() + 2);
    seq.push(vocab.bos());
    seq.extend_from_slice(ids);
    seq.push(vocab.eos());
    seq.truncate(context_len);
    seq
}

fn record_rollouts(st: &mut State, batch: &[Rollout]) -> Result<()> {
    for r in batch {
        let src = match r.source {
            RolloutSource::Trial => Source::Trial,
            RolloutSource::Demonstration => Source::Demo,
        };
        st.ledger.update(st.step, src, &r.continuation)?;
    }
    Ok(())
}

/// Trains one student from scratch (or resumes it) into `run_dir`.
///
/// A completed run directory is left untouched and its summary returned.
pub fn run_student(inputs: &RunInputs<'_>, spec: &RunSpec, mask: Option<&MaskSet>, run_dir: &Path) -> Result<RunSummary> {
    Ok(run_student_until(inputs, spec, mask, run_dir, None)?.expect("runs to completion without a stop step"))
}

/// Like [`run_student`] but returns `None` after step `stop_at`, as if the
/// process had been killed there. Progress since the last resume point is lost.
pub fn run_student_until(
    inputs: &RunInputs<'_>,
    spec: &RunSpec,
    mask: Option<&MaskSet>,
    run_dir: &Path,
    stop_at: Option<u64>,
) -> Result<Option<RunSummary>> {
    spec.student.validate()?;
    check_inputs(inputs, spec)?;
    if spec.mask.as_ref() != mask.map(|m| &m.words) {
        return Err(Error::Config("run spec mask words disagree with the supplied mask".into()));
    }
    let cfg = &spec.student;
    let vocab = inputs.vocab;
    let summary_path = run_dir.join(SUMMARY_FILE);
    let config_path = run_dir.join(CONFIG_FILE);
    if summary_path.exists() {
        let prior: RunSpec = serde_json::from_str(&fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?)?;
        if &prior != spec {
            return Err(Error::Config(format!("{} holds a finished run with a different configuration", run_dir.display())));
        }
        let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        return Ok(Some(serde_json::from_str(&text)?));
    }
    let ckpt_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let encoded: Vec<Vec<usize>> = inputs.train.iter().map(|s| vocab.encode(s)).collect();
    if spec.mode.is_interactive() && !encoded.iter().any(|s| s.len() >= PROMPT_TOKENS) {
        return Err(Error::Input(format!("no training sentence has {PROMPT_TOKENS} tokens for a prompt")));
    }

    let metrics_path = run_dir.join(METRICS_FILE);
    let rollouts_path = run_dir.join(ROLLOUTS_FILE);
    let mut st = if run_dir.join(RESUME_FILE).exists() {
        let st = load_resume(run_dir, spec, inputs.tracked_words)?;
        log::info!("resuming {} at step {}", run_dir.display(), st.step);
        st
    } else {
        for p in [&metrics_path, &rollouts_path, &run_dir.join(LEDGER_FILE)] {
            if p.exists() {
                fs::remove_file(p).map_err(|e| Error::io(p, e))?;
            }
        }
        fresh_state(spec, encoded.len(), inputs.tracked_words)?
    };
    let resumed_from = (st.step > 0).then_some(st.step);
    truncate_jsonl(&metrics_path, st.step)?;
    truncate_jsonl(&rollouts_path, st.step)?;
    fs::write(&config_path, serde_json::to_string_pretty(spec)? + "\n").map_err(|e| Error::io(&config_path, e))?;

    let mut metrics = append_writer(&metrics_path)?;
    let mut rollouts = if cfg.log_rollouts { Some(append_writer(&rollouts_path)?) } else { None };
    let grid = cfg.checkpoint_grid();
    let ctx = cfg.model.context_len;
    let trial_sampler = Sampler::new(cfg.top_k, ctx, vocab.specials())?;
    let demo_sampler = match mask {
        Some(m) => m.sampler(vocab, cfg.top_k, ctx)?,
        None => trial_sampler.clone(),
    };

    while st.step < cfg.steps {
        st.step += 1;
        let n = st.step;
        let interactive = spec.mode.is_interactive() && cfg.schedule.is_interactive(n);
        let record = if !interactive {
            let idx: Vec<usize> = (0..cfg.clm_batch_size).map(|_| st.cursor.next_index()).collect();
            let batch: Vec<Vec<usize>> = idx.iter().map(|&i| clm_sequence(vocab, &encoded[i], ctx)).collect();
            let loss = clm_step(&mut st.model, &mut st.clm_opt, &batch)?;
            for &i in &idx {
                st.ledger.update(n, Source::Corpus, &inputs.train[i])?;
            }
            StepRecord { step: n, kind: StepKind::Clm, loss, ppo: None, prompts_paired: None, n_prompts: None }
        } else {
            let prompts = next_prompts(&mut st.cursor, &encoded, cfg.prompts_per_step);
            interactive_step(inputs, spec, &mut st, &prompts, &trial_sampler, &demo_sampler, rollouts.as_mut(), &rollouts_path)?
        };
        write_line(&mut metrics, &metrics_path, &record)?;

        let at_ckpt = grid.binary_search(&n).is_ok();
        if at_ckpt {
            save_checkpoint(&ckpt_dir.join(checkpoint_file_name(n)), n, &st.model, Some(&st.rng))?;
        }
        if at_ckpt || (cfg.resume_every > 0 && n % cfg.resume_every == 0) {
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            if let Some(w) = rollouts.as_mut() {
                w.flush().map_err(|e| Error::io(&rollouts_path, e))?;
            }
            save_resume(run_dir, spec, &st)?;
        }
        if stop_at == Some(n) && n < cfg.steps {
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
            return Ok(None);
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    if let Some(w) = rollouts.as_mut() {
        w.flush().map_err(|e| Error::io(&rollouts_path, e))?;
    }
    st.ledger.write_jsonl(&run_dir.join(LEDGER_FILE))?;
    let summary = RunSummary {
        mode: spec.mode,
        seed: spec.seed,
        steps: cfg.steps,
        final_checkpoint: ckpt_dir.join(checkpoint_file_name(cfg.steps)),
        checkpoints: grid,
        resumed_from,
    };
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(Some(summary))
}

#[allow(clippy::too_many_arguments)]
fn interactive_step(
    inputs: &RunInputs<'_>,
    spec: &RunSpec,
    st: &mut State,
    prompts: &[Vec<usize>],
    trial_sampler: &Sampler,
    demo_sampler: &Sampler,
    log: Option<&mut BufWriter<File>>,
    log_path: &Path,
) -> Result<StepRecord> {
    let vocab = inputs.vocab;
    let n = st.step;
    let cfg = &spec.student;
    let mode = spec.mode;
    let (batch, raw): (Vec<Rollout>, Vec<(RolloutSource, Vec<usize>)>) = if mode == RunMode::ClmOnGenerated {
        let teacher = inputs.teacher.expect("checked");
        let mut raw: Vec<(RolloutSource, Vec<usize>)> =
            trial_sampler.generate(&st.model, prompts, &mut st.rng)?.into_iter().map(|s| (RolloutSource::Trial, s)).collect();
        raw.extend(demo_sampler.generate(teacher, prompts, &mut st.rng)?.into_iter().map(|s| (RolloutSource::Demonstration, s)));
        (Vec::new(), raw)
    } else {
        let predictor = inputs.predictor.expect("checked");
        let mut batch = Vec::with_capacity(2 * prompts.len());
        if mode.uses_trials() {
            batch.extend(collect_trials(&st.model, trial_sampler, vocab, prompts, predictor, n, &mut st.rng)?);
        }
        if mode.uses_teacher() {
            let teacher = inputs.teacher.expect("checked");
            batch.extend(collect_demonstrations(teacher, &st.model, demo_sampler, vocab, prompts, predictor, n, &mut st.rng)?);
        }
        (batch, Vec::new())
    };

    let pairs = |srcs: Vec<&[usize]>| {
        let (t, d) = srcs.split_at(srcs.len() / 2);
        t.iter().zip(d).all(|(a, b)| a == b)
    };
    if mode == RunMode::ClmOnGenerated {
        let seqs: Vec<Vec<usize>> =
            raw.iter().map(|(_, s)| std::iter::once(vocab.bos()).chain(s.iter().copied()).collect()).collect();
        let loss = clm_step(&mut st.model, &mut st.clm_opt, &seqs)?;
        let mut log = log;
        for (src, s) in &raw {
            let gen = &s[PROMPT_TOKENS..];
            let continuation = vocab.decode(gen);
            let ledger_src = if *src == RolloutSource::Trial { Source::Trial } else { Source::Demo };
            st.ledger.update(n, ledger_src, &continuation)?;
            if let Some(w) = log.as_deref_mut() {
                let rec = RolloutRecord { step: n, source: *src, prompt: s[..PROMPT_TOKENS].to_vec(), generated: gen.to_vec(), continuation, reward: None };
                write_line(w, log_path, &rec)?;
            }
        }
        let paired = pairs(raw.iter().map(|(_, s)| &s[..PROMPT_TOKENS]).collect());
        return Ok(StepRecord {
            step: n,
            kind: StepKind::ClmGenerated,
            loss,
            ppo: None,
            prompts_paired: Some(paired),
            n_prompts: Some(prompts.len()),
        });
    }

    let stats = ppo_update(&mut st.model, &mut st.ppo_opt, vocab.bos(), &batch, &cfg.ppo)?;
    record_rollouts(st, &batch)?;
    if let Some(w) = log {
        for r in &batch {
            let rec = RolloutRecord {
                step: n,
                source: r.source,
                prompt: r.prompt.clone(),
                generated: r.generated.clone(),
                continuation: r.continuation.clone(),
                reward: Some(r.terminal_reward),
            };
            write_line(w, log_path, &rec)?;
        }
    }
    let paired = (mode == RunMode::Tnd).then(|| pairs(batch.iter().map(|r| r.prompt.as_slice()).collect()));
    Ok(StepRecord { step: n, kind: StepKind::Ppo, loss: stats.loss, ppo: Some(stats), prompts_paired: paired, n_prompts: Some(prompts.len()) })
}

/// Parses a run's `metrics.jsonl`.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    read_jsonl(path)
}

pub fn read_rollouts(path: &Path) -> Result<Vec<RolloutRecord>> {
    read_jsonl(path)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::integrity(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
