//! A small teacher trajectory and age predictor shared by several examples.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tnd::lm::corpus::read_lines;
use tnd::lm::teacher::final_checkpoint;
use tnd::lm::{load_checkpoint, log_spaced_schedule, pretrain_teacher, train_bpe, Corpus, ModelConfig, TeacherConfig, TransformerLM, Vocabulary};
use tnd::reward::{generate_trajectory_dataset, train_age_predictor, AgePredictor, DatasetConfig, PredictorConfig};

pub struct Setup {
    pub corpus: Corpus,
    pub vocab: Vocabulary,
    pub model_cfg: ModelConfig,
    pub trajectory: PathBuf,
    pub teacher: TransformerLM,
}

pub fn desk_corpus() -> tnd::Result<Corpus> {
    let lines = read_lines(concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_corpus.txt").as_ref())?;
    Corpus::split(lines, 0.9, 0)
}

/// Trains a short teacher trajectory under `dir`.
pub fn teacher(dir: &Path, steps: u64) -> tnd::Result<Setup> {
    let corpus = desk_corpus()?;
    let vocab = train_bpe(&corpus.train, 384)?;
    let model_cfg = ModelConfig { d_model: 32, n_heads: 4, n_layers: 2, context_len: 24, vocab_size: vocab.len() };
    let cfg = TeacherConfig { steps, batch_size: 32, lr: 3e-3, schedule: log_spaced_schedule(steps, 12), seed: 0 };
    let trajectory = pretrain_teacher(&corpus.train, &vocab, model_cfg, &cfg, dir)?;
    let teacher = load_checkpoint(&final_checkpoint(&trajectory)?)?.model;
    Ok(Setup { corpus, vocab, model_cfg, trajectory, teacher })
}

/// Samples the trajectory and fits the ridge age predictor on it.
pub fn predictor(s: &Setup, contexts: usize) -> tnd::Result<AgePredictor> {
    let dcfg = DatasetConfig { contexts_per_checkpoint: contexts, ..DatasetConfig::default() };
    let samples = generate_trajectory_dataset(&s.trajectory, &s.vocab, &s.corpus.eval, &dcfg)?;
    train_age_predictor(&samples, &PredictorConfig::default(), Some(&s.vocab))
}
