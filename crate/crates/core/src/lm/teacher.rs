use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::lm::checkpoint::{checkpoint_file_name, list_checkpoints, save_checkpoint};
use crate::lm::model::{ModelConfig, TransformerLM};
use crate::lm::tokenizer::Vocabulary;
use crate::lm::train::{clm_step, training_sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Steps at which a checkpoint is written; the final step is always saved.
    pub schedule: Vec<u64>,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, lr: 1e-3, schedule: log_spaced_schedule(2000, 30), seed: 0 }
    }
}

/// About `n` distinct steps in `[1, steps]`, geometrically spaced, always
/// including 1 and `steps`.
pub fn log_spaced_schedule(steps: u64, n: usize) -> Vec<u64> {
    if steps == 0 || n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![steps];
    }
    let ratio = (steps as f64).ln() / (n - 1) as f64;
    let mut out: Vec<u64> = (0..n).map(|i| ((i as f64 * ratio).exp().round() as u64).clamp(1, steps)).collect();
    out.push(steps);
    out.sort_unstable();
    out.dedup();
    out
}

/// Endless stream of sentences: each epoch is a fresh shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Input("cannot sample from an empty corpus".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self { order, pos: 0, epoch: 0, rng })
    }

    /// Completed passes over the data.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Pretrains a model from scratch and writes its trajectory under `out_dir`.
///
/// Returns the trajectory directory; the checkpoint at `cfg.steps` is the teacher.
pub fn pretrain_teacher<S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocabulary,
    model_cfg: ModelConfig,
    cfg: &TeacherConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    if cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("teacher needs steps >= 1 and batch_size >= 1".into()));
    }
    if let Some(bad) = cfg.schedule.iter().find(|&&s| s == 0 || s > cfg.steps) {
        return Err(Error::Config(format!("checkpoint step {bad} outside [1, {}]", cfg.steps)));
    }
    if model_cfg.vocab_size != vocab.len() {
        return Err(Error::Config(format!("model vocab {} != tokenizer vocab {}", model_cfg.vocab_size, vocab.len())));
    }
    let seqs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|l| training_sequence(vocab, l.as_ref(), model_cfg.context_len))
        .filter(|s| s.len() >= 2)
        .collect();
    let mut picker = EpochSampler::new(seqs.len(), cfg.seed)?;
    let mut model = TransformerLM::new(model_cfg, cfg.seed)?;
    let mut opt = Adam::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut schedule = cfg.schedule.clone();
    schedule.push(cfg.steps);
    schedule.sort_unstable();
    schedule.dedup();
    let mut next = schedule.iter().peekable();
    for step in 1..=cfg.steps {
        let batch: Vec<Vec<usize>> = (0..cfg.batch_size).map(|_| seqs[picker.next_index()].clone()).collect();
        let loss = clm_step(&mut model, &mut opt, &batch).map_err(|e| match e {
            Error::Training(m) => Error::Training(format!("teacher step {step}: {m}")),
            other => other,
        })?;
        if next.peek() == Some(&&step) {
            next.next();
            save_checkpoint(&dir.join(checkpoint_file_name(step)), step, &model, None)?;
            log::info!("teacher step {step} loss {loss:.4}");
        }
    }
    Ok(dir)
}

/// Path of the last checkpoint in a trajectory directory.
pub fn final_checkpoint(dir: &Path) -> Result<PathBuf> {
    list_checkpoints(dir)?
        .pop()
        .map(|(_, p)| p)
        .ok_or_else(|| Error::integrity(dir, "trajectory directory holds no checkpoints"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::tokenizer::train_bpe;

    #[test]
    fn schedule_is_geometric_and_bounded() {
        let s = log_spaced_schedule(2000, 30);
        assert_eq!(s[0], 1);
        assert_eq!(*s.last().unwrap(), 2000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.len() >= 20 && s.len() <= 31);
        assert!(s.iter().filter(|&&x| x <= 100).count() > s.len() / 2);
    }

    #[test]
    fn epoch_sampler_covers_each_item_once_per_epoch() {
        let mut p = EpochSampler::new(7, 1).unwrap();
        let mut seen: Vec<usize> = (0..7).map(|_| p.next_index()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_beyond_total_is_config_error() {
        let corpus = ["the dog ran"];
        let v = train_bpe(&corpus, 20).unwrap();
        let mc = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 8, vocab_size: v.len() };
        let cfg = TeacherConfig { steps: 5, batch_size: 2, lr: 1e-3, schedule: vec![2, 6], seed: 0 };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(pretrain_teacher(&corpus, &v, mc, &cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn writes_scheduled_checkpoints_and_final() {
        let corpus = ["the dog ran", "a cat sat", "the cat ran"];
        let v = train_bpe(&corpus, 24).unwrap();
        let mc = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 12, vocab_size: v.len() };
        let cfg = TeacherConfig { steps: 6, batch_size: 2, lr: 1e-3, schedule: vec![1, 3], seed: 0 };
        let dir = tempfile::tempdir().unwrap();
        let traj = pretrain_teacher(&corpus, &v, mc, &cfg, dir.path()).unwrap();
        let steps: Vec<u64> = list_checkpoints(&traj).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, vec![1, 3, 6]);
        assert!(final_checkpoint(&traj).unwrap().ends_with(checkpoint_file_name(6)));
    }
}
