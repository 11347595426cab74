use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};
use crate::lm::model::TransformerLM;
use crate::lm::tokenizer::{Vocabulary, SPACE_MARK};
use crate::lm::train::training_sequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub min_occurrences: usize,
    pub max_samples: usize,
    /// Keep multi-token words and sum the surprisal of their pieces.
    pub multi_token: bool,
    /// Picks which occurrences survive the `max_samples` cap.
    pub seed: u64,
    /// Sequences per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { min_occurrences: 100, max_samples: 512, multi_token: false, seed: 0, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSurprisalRecord {
    pub word: String,
    pub step: u64,
    /// Bits.
    pub mean_surprisal: f64,
    pub occurrence_count: usize,
}

/// Token span `[start, end)` of one word occurrence inside a packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Occurrence {
    seq: usize,
    start: usize,
    end: usize,
}

/// The occurrences to score, fixed once per evaluation corpus.
#[derive(Debug, Clone)]
pub struct EvalPlan {
    pub words: Vec<String>,
    /// Words left out and why.
    pub rejected: Vec<(String, String)>,
    sequences: Vec<Vec<usize>>,
    occurrences: Vec<Vec<Occurrence>>,
}

/// Splits token ids into word spans: a word starts at the first content token
/// or at any token carrying the space mark.
fn word_spans(vocab: &Vocabulary, seq: &[usize]) -> Vec<(usize, usize)> {
    let sp = vocab.specials();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &id) in seq.iter().enumerate() {
        let special = id == sp.bos || id == sp.eos || id == sp.unk;
        let marked = vocab.token(id).is_some_and(|t| t.starts_with(SPACE_MARK));
        if special || marked {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        }
        if !special {
            start = start.or(Some(i));
        }
    }
    if let Some(s) = start {
        spans.push((s, seq.len()));
    }
    spans
}

fn span_text(vocab: &Vocabulary, seq: &[usize]) -> String {
    seq.iter().filter_map(|&id| vocab.token(id)).collect::<String>().replace(SPACE_MARK, "").to_lowercase()
}

impl EvalPlan {
    /// Finds every occurrence of each word in `sentences`, truncated to `context_len`.
    pub fn new<S: AsRef<str>, W: AsRef<str>>(
        vocab: &Vocabulary,
        sentences: &[S],
        words: &[W],
        context_len: usize,
        cfg: &EvalConfig,
    ) -> Self {
        let mut rejected = Vec::new();
        let mut wanted: BTreeMap<String, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if w.is_empty() || wanted.contains_key(&w) {
                continue;
            }
            if !cfg.multi_token && vocab.word_token(&w).is_none() {
                rejected.push((w, "not a single token".to_string()));
                continue;
            }
            wanted.insert(w.clone(), order.len());
            order.push(w);
        }
        let mut hits: Vec<Vec<Occurrence>> = vec![Vec::new(); order.len()];
        let mut sequences = Vec::new();
        for s in sentences {
            let seq = training_sequence(vocab, s.as_ref(), context_len);
            let seq_idx = sequences.len();
            let mut any = false;
            for (start, end) in word_spans(vocab, &seq) {
                if !cfg.multi_token && end - start != 1 {
                    continue;
                }
                if let Some(&w) = wanted.get(&span_text(vocab, &seq[start..end])) {
                    hits[w].push(Occurrence { seq: seq_idx, start, end });
                    any = true;
                }
            }
            if any {
                sequences.push(seq);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut kept_words = Vec::new();
        let mut occurrences = Vec::new();
        for (w, mut occ) in order.into_iter().zip(hits) {
            if occ.len() < cfg.min_occurrences.max(1) {
                rejected.push((w, format!("only {} occurrences", occ.len())));
                continue;
            }
            if occ.len() > cfg.max_samples {
                let mut pick = sample(&mut rng, occ.len(), cfg.max_samples).into_vec();
                pick.sort_unstable();
                occ = pick.into_iter().map(|i| occ[i]).collect();
            }
            kept_words.push(w);
            occurrences.push(occ);
        }
        let mut plan = Self { words: kept_words, rejected, sequences, occurrences };
        plan.compact();
        plan
    }

    /// Drops sequences no kept occurrence points into.
    fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.sequences.len()];
        let mut used: Vec<usize> = self.occurrences.iter().flatten().map(|o| o.seq).collect();
        used.sort_unstable();
        used.dedup();
        let mut seqs = Vec::with_capacity(used.len());
        for (new, &old) in used.iter().enumerate() {
            remap[old] = new;
            seqs.push(std::mem::take(&mut self.sequences[old]));
        }
        self.sequences = seqs;
        for o in self.occurrences.iter_mut().flatten() {
            o.seq = remap[o.seq];
        }
    }

    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    pub fn occurrence_counts(&self) -> Vec<usize> {
        self.occurrences.iter().map(Vec::len).collect()
    }

    /// Mean surprisal in bits of every planned word under `model`.
    pub fn evaluate(&self, model: &TransformerLM, step: u64, batch_size: usize) -> Result<Vec<WordSurprisalRecord>> {
        if self.words.is_empty() {
            return Ok(Vec::new());
        }
        let mut by_seq: Vec<Vec<(usize, Occurrence)>> = vec![Vec::new(); self.sequences.len()];
        for (w, occ) in self.occurrences.iter().enumerate() {
            for o in occ {
                by_seq[o.seq].push((w, *o));
            }
        }
        let mut sums = vec![0.0; self.words.len()];
        for (chunk_idx, chunk) in self.sequences.chunks(batch_size.max(1)).enumerate() {
            let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            let logits = model.forward_logits_batch(&refs)?;
            for (j, l) in logits.iter().enumerate() {
                let seq_idx = chunk_idx * batch_size.max(1) + j;
                let seq = &self.sequences[seq_idx];
                let v = l.shape()[1];
                for &(w, o) in &by_seq[seq_idx] {
                    for t in o.start..o.end {
                        let row = &l.values()[(t - 1) * v..t * v];
                        sums[w] += (log_sum_exp(row) - row[seq[t]]) / LN_2;
                    }
                }
            }
        }
        Ok(self
            .words
            .iter()
            .zip(&self.occurrences)
            .zip(sums)
            .map(|((w, occ), s)| WordSurprisalRecord {
                word: w.clone(),
                step,
                mean_surprisal: (s / occ.len() as f64).max(0.0),
                occurrence_count: occ.len(),
            })
            .collect())
    }
}

/// One-call form: plan then evaluate.
pub fn eval_checkpoint<S: AsRef<str>, W: AsRef<str>>(
    model: &TransformerLM,
    step: u64,
    vocab: &Vocabulary,
    sentences: &[S],
    words: &[W],
    cfg: &EvalConfig,
) -> Result<(Vec<WordSurprisalRecord>, Vec<(String, String)>)> {
    let plan = EvalPlan::new(vocab, sentences, words, model.config().context_len, cfg);
    Ok((plan.evaluate(model, step, cfg.batch_size)?, plan.rejected))
}

/// Evaluates every checkpoint of a trajectory, `jobs` checkpoints at a time.
pub fn evaluate_checkpoints(plan: &EvalPlan, checkpoints: &[(u64, std::path::PathBuf)], batch_size: usize, jobs: usize) -> Result<Vec<WordSurprisalRecord>> {
    let chunk = checkpoints.len().div_ceil(jobs.max(1)).max(1);
    let parts: Vec<Result<Vec<WordSurprisalRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = checkpoints
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for (step, path) in part {
                        let ck = crate::lm::load_checkpoint(path)?;
                        out.extend(plan.evaluate(&ck.model, *step, batch_size)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn write_surprisal_csv(path: &Path, records: &[WordSurprisalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_surprisal_csv(path: &Path) -> Result<Vec<WordSurprisalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::integrity(path, format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::ModelConfig;
    use crate::lm::tokenizer::train_bpe;

    fn setup() -> (Vocabulary, TransformerLM, Vec<String>) {
        let sents: Vec<String> = (0..40).map(|i| if i % 2 == 0 { "the dog ran".into() } else { "a dogs cat sat".into() }).collect();
        let v = train_bpe(&sents, 40).unwrap();
        let m = TransformerLM::new(ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 8, vocab_size: v.len() }, 2).unwrap();
        (v, m, sents)
    }

    #[test]
    fn plan_matches_whole_words_only() {
        let (v, _, sents) = setup();
        let cfg = EvalConfig { min_occurrences: 1, ..EvalConfig::default() };
        let plan = EvalPlan::new(&v, &sents, &["dog", "cat", "zebra"], 8, &cfg);
        assert_eq!(plan.words, ["dog", "cat"]);
        assert_eq!(plan.occurrence_counts(), [20, 20]);
        assert_eq!(plan.rejected[0].0, "zebra");
    }

    #[test]
    fn rare_words_rejected_and_cap_applies() {
        let (v, _, sents) = setup();
        let cfg = EvalConfig { min_occurrences: 25, ..EvalConfig::default() };
        assert!(EvalPlan::new(&v, &sents, &["dog"], 8, &cfg).words.is_empty());
        let cfg = EvalConfig { min_occurrences: 1, max_samples: 7, ..EvalConfig::default() };
        assert_eq!(EvalPlan::new(&v, &sents, &["dog"], 8, &cfg).occurrence_counts(), [7]);
    }

    #[test]
    fn matches_direct_softmax() {
        let (v, m, sents) = setup();
        let cfg = EvalConfig { min_occurrences: 1, ..EvalConfig::default() };
        let (recs, _) = eval_checkpoint(&m, 5, &v, &sents[..2], &["dog"], &cfg).unwrap();
        let seq = training_sequence(&v, &sents[0], 8);
        let pos = seq.iter().position(|&t| Some(t) == v.word_token("dog")).unwrap();
        let (logits, _) = m.forward(&seq).unwrap();
        let n = v.len();
        let row = &logits.values()[(pos - 1) * n..pos * n];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
        let p = (row[seq[pos]] - mx).exp() / z;
        assert!((recs[0].mean_surprisal - (-p.log2())).abs() < 1e-12);
        assert_eq!(recs[0].step, 5);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let recs = vec![WordSurprisalRecord { word: "dog".into(), step: 3, mean_surprisal: 1.25, occurrence_count: 100 }];
        write_surprisal_csv(&p, &recs).unwrap();
        assert_eq!(read_surprisal_csv(&p).unwrap(), recs);
    }
}
