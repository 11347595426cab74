use std::collections::HashSet;

use rand::Rng;

use crate::autodiff::{softmax_row, Tape};
use crate::error::{Error, Result};
use crate::lm::corpus::words;
use crate::lm::model::TransformerLM;
use crate::lm::tokenizer::{Specials, Vocabulary, SPACE_MARK};

/// Ids of the `k` largest logits, best first; equal logits keep the lower id first.
pub fn top_k_ids(row: &[f64], k: usize) -> Vec<usize> {
    let k = k.clamp(1, row.len());
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let cmp = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Draws one id from the renormalized top-`k` distribution of `row`.
///
/// Consumes exactly one uniform draw regardless of `k`.
pub fn sample_row<R: Rng + ?Sized>(row: &[f64], k: usize, rng: &mut R) -> usize {
    let ids = top_k_ids(row, k);
    let mut p: Vec<f64> = ids.iter().map(|&i| row[i]).collect();
    softmax_row(&mut p);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in ids.iter().zip(&p) {
        acc += pi;
        if u < acc {
            return *i;
        }
    }
    *ids.last().expect("k >= 1")
}

/// Top-k decoder. A non-empty `mask` turns it into the masked decoder: a
/// sampled masked id is replaced by the highest-logit unmasked id.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub k: usize,
    /// Upper bound on `<bos>` + prompt + continuation, clamped to the context length.
    pub max_len: usize,
    pub specials: Specials,
    mask: Vec<bool>,
    guard: Option<WordGuard>,
}

/// Rejects tokens that would complete a forbidden word inside the generated
/// text, so masked words cannot be spelled out from sub-word pieces.
#[derive(Debug, Clone)]
struct WordGuard {
    tokens: Vec<String>,
    words: HashSet<String>,
}

impl WordGuard {
    fn is_word_start(&self, id: usize) -> bool {
        self.tokens[id].starts_with(SPACE_MARK)
    }

    fn hits(&self, text: &str) -> bool {
        words(&text.replace(SPACE_MARK, " ")).any(|w| self.words.contains(&w))
    }

    /// `seq` is `<bos>` + prompt + generated so far; generation began at `gen_start`.
    fn allows(&self, seq: &[usize], gen_start: usize, id: usize, is_special: bool, last: bool) -> bool {
        let mut from = seq.len();
        while from > gen_start && !self.is_word_start(seq[from - 1]) {
            from -= 1;
        }
        if from > gen_start {
            from -= 1;
        }
        let partial: String = seq[from.max(gen_start)..].iter().map(|&t| self.tokens[t].as_str()).collect();
        if is_special || self.is_word_start(id) {
            if self.hits(&partial) {
                return false;
            }
            return !(last && !is_special && self.hits(&self.tokens[id]));
        }
        !(last && self.hits(&(partial + &self.tokens[id])))
    }
}

impl Sampler {
    pub fn new(k: usize, max_len: usize, specials: Specials) -> Result<Self> {
        if k == 0 {
            return Err(Error::Contract("top-k sampling needs k >= 1".into()));
        }
        Ok(Self { k, max_len, specials, mask: Vec::new(), guard: None })
    }

    /// Also forbids the surface `words` from appearing in generated text,
    /// whatever token pieces would spell them.
    pub fn with_word_guard<S: AsRef<str>>(mut self, vocab: &Vocabulary, words: &[S]) -> Self {
        let tokens = (0..vocab.len()).map(|i| vocab.token(i).unwrap_or_default().to_string()).collect();
        let words = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
        self.guard = Some(WordGuard { tokens, words });
        self
    }

    pub fn with_mask(mut self, vocab_size: usize, masked: &[usize]) -> Result<Self> {
        let mut mask = vec![false; vocab_size];
        for &id in masked {
            *mask.get_mut(id).ok_or_else(|| Error::Index(format!("mask id {id} outside vocabulary {vocab_size}")))? = true;
        }
        if mask.iter().all(|&m| m) {
            return Err(Error::Contract("mask covers the entire vocabulary".into()));
        }
        self.mask = mask;
        Ok(self)
    }

    pub fn is_masked(&self, id: usize) -> bool {
        self.mask.get(id).copied().unwrap_or(false)
    }

    fn is_special(&self, id: usize) -> bool {
        id == self.specials.bos || id == self.specials.eos || id == self.specials.unk
    }

    fn allowed(&self, seq: &[usize], gen_start: usize, id: usize, last: bool) -> bool {
        !self.is_masked(id) && self.guard.as_ref().map_or(true, |g| g.allows(seq, gen_start, id, self.is_special(id), last))
    }

    fn pick<R: Rng + ?Sized>(&self, row: &[f64], seq: &[usize], gen_start: usize, last: bool, rng: &mut R) -> usize {
        let id = sample_row(row, self.k, rng);
        if self.allowed(seq, gen_start, id, last) {
            return id;
        }
        let mut order: Vec<usize> = (0..row.len()).collect();
        order.sort_by(|a, b| row[*b].total_cmp(&row[*a]).then(a.cmp(b)));
        order
            .iter()
            .copied()
            .find(|&i| self.allowed(seq, gen_start, i, last))
            .or_else(|| order.iter().copied().find(|&i| !self.is_masked(i)))
            .expect("mask leaves at least one id")
    }

    /// Continues every prompt until `<eos>` or the length bound.
    ///
    /// Returns prompt + continuation per input (no `<bos>`; a sampled `<eos>`
    /// is kept as the final id). Sequences are advanced in lockstep and the
    /// RNG is consumed in input order at every step.
    pub fn generate<R: Rng + ?Sized>(&self, model: &TransformerLM, prompts: &[Vec<usize>], rng: &mut R) -> Result<Vec<Vec<usize>>> {
        if prompts.iter().any(Vec::is_empty) {
            return Err(Error::Contract("sampling needs a non-empty prompt".into()));
        }
        let limit = self.max_len.min(model.config().context_len);
        let mut seqs: Vec<Vec<usize>> = prompts
            .iter()
            .map(|p| std::iter::once(self.specials.bos).chain(p.iter().copied()).collect())
            .collect();
        if let Some(s) = seqs.iter().find(|s| s.len() > limit) {
            return Err(Error::Contract(format!("prompt of {} tokens leaves no room under length {limit}", s.len() - 1)));
        }
        let starts: Vec<usize> = seqs.iter().map(Vec::len).collect();
        let mut active: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() < limit).collect();
        let v = model.config().vocab_size;
        while !active.is_empty() {
            let refs: Vec<&[usize]> = active.iter().map(|&i| seqs[i].as_slice()).collect();
            let mut tape = Tape::new();
            let h = model.hidden(&mut tape, &refs)?;
            let last: Vec<usize> = h.segments.iter().map(|s| s.end - 1).collect();
            let sel = tape.select_rows(h.states, &last)?;
            let logits = model.lm_logits(&mut tape, sel)?;
            let rows = tape.value(logits).to_vec();
            let mut still = Vec::with_capacity(active.len());
            for (slot, &i) in active.iter().enumerate() {
                let last = seqs[i].len() + 1 == limit;
                let id = self.pick(&rows[slot * v..(slot + 1) * v], &seqs[i], starts[i], last, rng);
                seqs[i].push(id);
                if id != self.specials.eos && seqs[i].len() < limit {
                    still.push(i);
                }
            }
            active = still;
        }
        Ok(seqs.into_iter().map(|mut s| s.split_off(1)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, model: &TransformerLM, prompt: &[usize], rng: &mut R) -> Result<Vec<usize>> {
        Ok(self.generate(model, &[prompt.to_vec()], rng)?.remove(0))
    }
}

/// Samples one continuation; `k` larger than the vocabulary is clamped to it.
pub fn sample_top_k<R: Rng + ?Sized>(
    model: &TransformerLM,
    specials: Specials,
    prompt: &[usize],
    k: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Sampler::new(k, max_len, specials)?.sample(model, prompt, rng)
}


#[cfg(test)]
mod guard_tests {
    use super::*;
    use crate::lm::model::ModelConfig;
    use crate::lm::tokenizer::train_bpe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn guarded_generations_never_spell_a_masked_word() {
        let corpus = ["the dog ran", "a dog sat", "the cat ran to the dog", "dogs do dig"];
        let v = train_bpe(&corpus, 30).unwrap();
        let cfg = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 14, vocab_size: v.len() };
        let m = TransformerLM::new(cfg, 2).unwrap();
        let masked: Vec<usize> = v.word_token("dog").into_iter().collect();
        let s = Sampler::new(v.len(), 14, v.specials()).unwrap().with_mask(v.len(), &masked).unwrap().with_word_guard(&v, &["dog"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prompt = v.encode("the");
        let prompts = vec![prompt.clone(); 200];
        for out in s.generate(&m, &prompts, &mut rng).unwrap() {
            let cont = v.decode(&out[prompt.len()..]);
            assert!(!words(&cont).any(|w| w == "dog"), "{cont}");
        }
    }
}
