use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::checkpoint::{list_checkpoints, load_checkpoint};
use crate::lm::sample::Sampler;
use crate::lm::tokenizer::Vocabulary;

pub const CONTEXT_TOKENS: usize = 5;

/// A generated sentence and the training step of the checkpoint that wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub step: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub contexts_per_checkpoint: usize,
    pub context_tokens: usize,
    pub top_k: usize,
    pub seed: u64,
    /// Worker threads across checkpoints; results do not depend on it.
    pub jobs: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { contexts_per_checkpoint: 500, context_tokens: CONTEXT_TOKENS, top_k: 20, seed: 0, jobs: 1 }
    }
}

/// First `n` tokens of every held-out sentence long enough to have a continuation.
pub fn prompt_pool<S: AsRef<str>>(vocab: &Vocabulary, sentences: &[S], n: usize) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| vocab.encode(s.as_ref()))
        .filter(|ids| ids.len() > n)
        .map(|mut ids| {
            ids.truncate(n);
            ids
        })
        .collect()
}

/// Per-checkpoint RNG so output is independent of scheduling.
fn checkpoint_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

const GEN_BATCH: usize = 32;

fn samples_for(
    path: &Path,
    step: u64,
    vocab: &Vocabulary,
    pool: &[Vec<usize>],
    cfg: &DatasetConfig,
) -> Result<Vec<TrajectorySample>> {
    let ck = load_checkpoint(path)?;
    let sampler = Sampler::new(cfg.top_k, ck.model.config().context_len, vocab.specials())?;
    let mut rng = checkpoint_rng(cfg.seed, step);
    let prompts: Vec<Vec<usize>> = (0..cfg.contexts_per_checkpoint).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect();
    let mut out = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(GEN_BATCH) {
        for ids in sampler.generate(&ck.model, chunk, &mut rng)? {
            let text = vocab.decode(&ids).trim().to_string();
            if !text.is_empty() {
                out.push(TrajectorySample { step, text });
            }
        }
    }
    Ok(out)
}

/// Samples continuations of held-out prompts from every checkpoint of a trajectory.
///
/// `eval_sentences` must come from the eval split; prompts are their first
/// `context_tokens` tokens.
pub fn generate_trajectory_dataset<S: AsRef<str>>(
    trajectory: &Path,
    vocab: &Vocabulary,
    eval_sentences: &[S],
    cfg: &DatasetConfig,
) -> Result<Vec<TrajectorySample>> {
    let ckpts = list_checkpoints(trajectory)?;
    if ckpts.is_empty() {
        return Err(Error::Input(format!("trajectory {} has no checkpoints", trajectory.display())));
    }
    let pool = prompt_pool(vocab, eval_sentences, cfg.context_tokens);
    if pool.is_empty() {
        return Err(Error::Input(format!("no eval sentence is longer than {} tokens", cfg.context_tokens)));
    }
    let jobs = cfg.jobs.max(1).min(ckpts.len());
    let mut per_ckpt: Vec<Option<Result<Vec<TrajectorySample>>>> = (0..ckpts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = per_ckpt.chunks_mut(ckpts.len().div_ceil(jobs)).zip(ckpts.chunks(ckpts.len().div_ceil(jobs))).collect();
        for (slots, work) in chunks {
            let pool = &pool;
            scope.spawn(move || {
                for (slot, (step, path)) in slots.iter_mut().zip(work) {
                    *slot = Some(samples_for(path, *step, vocab, pool, cfg));
                }
            });
        }
    });
    let mut out = Vec::new();
    for r in per_ckpt {
        out.extend(r.expect("every checkpoint processed")?);
    }
    Ok(out)
}

/// One JSON object per line: `{"step": .., "text": ..}`.
pub fn write_dataset(path: &Path, samples: &[TrajectorySample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrajectorySample>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: TrajectorySample =
            serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if s.step == 0 || s.text.is_empty() {
            return Err(Error::Input(format!("{}:{}: step must be >= 1 and text non-empty", path.display(), i + 1)));
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::ModelConfig;
    use crate::lm::teacher::{pretrain_teacher, TeacherConfig};
    use crate::lm::tokenizer::train_bpe;

    #[test]
    fn prompts_are_prefixes_of_eval_sentences() {
        let v = train_bpe(&["the dog ran to the big red ball"], 30).unwrap();
        let pool = prompt_pool(&v, &["the dog ran to the big red ball", "hi"], 5);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0], v.encode("the dog ran to the big red ball")[..5]);
    }

    #[test]
    fn one_sample_per_context_per_checkpoint_and_jobs_invariant() {
        let train = ["the dog ran to the ball", "a cat sat on the mat", "the cat ran to the dog"];
        let v = train_bpe(&train, 40).unwrap();
        let mc = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 16, vocab_size: v.len() };
        let tc = TeacherConfig { steps: 4, batch_size: 2, lr: 1e-3, schedule: vec![1, 2], seed: 0 };
        let dir = tempfile::tempdir().unwrap();
        let traj = pretrain_teacher(&train, &v, mc, &tc, dir.path()).unwrap();
        let eval = ["the dog sat on the mat today"];
        let cfg = DatasetConfig { contexts_per_checkpoint: 6, jobs: 1, ..Default::default() };
        let a = generate_trajectory_dataset(&traj, &v, &eval, &cfg).unwrap();
        assert_eq!(a.len(), 3 * 6);
        assert!(a.iter().all(|s| [1, 2, 4].contains(&s.step)));
        let b = generate_trajectory_dataset(&traj, &v, &eval, &DatasetConfig { jobs: 3, ..cfg }).unwrap();
        assert_eq!(a, b);
        let p = dir.path().join("ds.jsonl");
        write_dataset(&p, &a).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), a);
    }
}
