use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::lm::corpus::{DEFAULT_SPLIT_SEED, DEFAULT_TRAIN_FRACTION};
use crate::lm::model::ModelConfig;
use crate::lm::teacher::{log_spaced_schedule, TeacherConfig};
use crate::ppo::PPOConfig;
use crate::reward::{DatasetConfig, PredictorConfig};
use crate::tnd::{RunMode, Schedule, StudentConfig, DEFAULT_MASK_SIZE};

pub const OUTPUT_ROOT_ENV: &str = "TND_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub path: PathBuf,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Target BPE vocabulary size.
    pub vocab_size: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { path: PathBuf::from("corpus.txt"), train_fraction: DEFAULT_TRAIN_FRACTION, split_seed: DEFAULT_SPLIT_SEED, vocab_size: 512 }
    }
}

/// Architecture shared by teacher and student; the vocabulary size comes from the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub context_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 2, context_len: 32 }
    }
}

impl ModelSection {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig { d_model: self.d_model, n_heads: self.n_heads, n_layers: self.n_layers, context_len: self.context_len, vocab_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Number of log-spaced trajectory checkpoints.
    pub checkpoints: usize,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, lr: 1e-3, checkpoints: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub contexts_per_checkpoint: usize,
    pub top_k: usize,
    pub predictor: PredictorConfig,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self { contexts_per_checkpoint: 500, top_k: 20, predictor: PredictorConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentSection {
    pub steps: u64,
    pub c: u64,
    pub r: u64,
    pub clm_batch_size: usize,
    pub clm_lr: f64,
    pub prompts_per_step: usize,
    pub top_k: usize,
    /// Number of log-spaced evaluation checkpoints.
    pub checkpoints: usize,
    pub resume_every: u64,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self { steps: 2000, c: 3, r: 1, clm_batch_size: 16, clm_lr: 1e-4, prompts_per_step: 8, top_k: 20, checkpoints: 25, resume_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub modes: Vec<RunMode>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self { modes: RunMode::ABLATION.to_vec(), seeds: (0..5).collect(), jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// One tracked word per line.
    pub words: PathBuf,
    /// `word category` lines for the source analysis.
    pub pos_map: Option<PathBuf>,
    pub min_occurrences: usize,
    pub max_samples: usize,
    pub multi_token: bool,
    pub batch_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self { words: PathBuf::from("words.txt"), pos_map: None, min_occurrences: e.min_occurrences, max_samples: e.max_samples, multi_token: false, batch_size: e.batch_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSection {
    /// Explicit mask words; otherwise the most frequent tracked content words are used.
    pub path: Option<PathBuf>,
    pub size: usize,
    pub seeds: Vec<u64>,
}

impl Default for MaskSection {
    fn default() -> Self {
        Self { path: None, size: DEFAULT_MASK_SIZE, seeds: (0..5).collect() }
    }
}

/// Single source of truth for an experiment. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_root: PathBuf,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub teacher: TeacherSection,
    pub reward: RewardSection,
    pub student: StudentSection,
    pub ppo: PPOConfig,
    pub suite: SuiteSection,
    pub eval: EvalSection,
    pub mask: MaskSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_root: PathBuf::from("runs"),
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            teacher: TeacherSection::default(),
            reward: RewardSection::default(),
            student: StudentSection::default(),
            ppo: PPOConfig::default(),
            suite: SuiteSection::default(),
            eval: EvalSection::default(),
            mask: MaskSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_root = resolve(base, &self.output_root);
        self.corpus.path = resolve(base, &self.corpus.path);
        self.eval.words = resolve(base, &self.eval.words);
        self.eval.pos_map = self.eval.pos_map.as_deref().map(|p| resolve(base, p));
        self.mask.path = self.mask.path.as_deref().map(|p| resolve(base, p));
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("corpus", Some(&self.corpus.path)), ("word list", Some(&self.eval.words)), ("pos map", self.eval.pos_map.as_ref()), ("mask list", self.mask.path.as_ref())] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{what} {} does not exist", p.display())));
                }
            }
        }
        self.model.with_vocab(1).validate()?;
        self.student_config(1)?.validate()?;
        self.teacher_config().and_then(|t| {
            if t.steps == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
                Err(Error::Config("teacher needs steps, batch_size and lr > 0".into()))
            } else {
                Ok(())
            }
        })?;
        if self.suite.modes.is_empty() || self.suite.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one mode and one seed".into()));
        }
        if self.corpus.vocab_size < 8 {
            return Err(Error::Config(format!("vocab_size {} is too small", self.corpus.vocab_size)));
        }
        if self.reward.contexts_per_checkpoint == 0 || self.reward.top_k == 0 {
            return Err(Error::Config("reward needs contexts_per_checkpoint and top_k >= 1".into()));
        }
        Ok(())
    }

    /// Applies the output-root environment override, if set.
    pub fn apply_env(&mut self) {
        if let Some(v) = std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()) {
            self.output_root = PathBuf::from(v);
        }
    }

    pub fn teacher_config(&self) -> Result<TeacherConfig> {
        let t = &self.teacher;
        Ok(TeacherConfig { steps: t.steps, batch_size: t.batch_size, lr: t.lr, schedule: log_spaced_schedule(t.steps, t.checkpoints), seed: self.seed })
    }

    pub fn dataset_config(&self, jobs: usize) -> DatasetConfig {
        DatasetConfig {
            contexts_per_checkpoint: self.reward.contexts_per_checkpoint,
            context_tokens: crate::reward::dataset::CONTEXT_TOKENS,
            top_k: self.reward.top_k,
            seed: self.seed,
            jobs,
        }
    }

    pub fn student_config(&self, vocab_size: usize) -> Result<StudentConfig> {
        let s = &self.student;
        Ok(StudentConfig {
            steps: s.steps,
            schedule: Schedule::new(s.c, s.r)?,
            model: self.model.with_vocab(vocab_size),
            clm_batch_size: s.clm_batch_size,
            clm_lr: s.clm_lr,
            prompts_per_step: s.prompts_per_step,
            top_k: s.top_k,
            ppo: self.ppo.clone(),
            checkpoints: log_spaced_schedule(s.steps, s.checkpoints),
            resume_every: s.resume_every,
            log_rollouts: false,
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            min_occurrences: self.eval.min_occurrences,
            max_samples: self.eval.max_samples,
            multi_token: self.eval.multi_token,
            seed: self.seed,
            batch_size: self.eval.batch_size,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }
}
