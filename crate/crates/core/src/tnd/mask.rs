use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::model::TransformerLM;
use crate::lm::sample::Sampler;
use crate::lm::tokenizer::Vocabulary;

pub const DEFAULT_MASK_SIZE: usize = 40;

/// Words withheld from teacher demonstrations, each a single token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSet {
    pub words: Vec<String>,
    pub token_ids: Vec<usize>,
}

impl MaskSet {
    /// Rejects any word that is not exactly one token.
    pub fn new<S: AsRef<str>>(vocab: &Vocabulary, words: &[S]) -> Result<Self> {
        let mut out = Self { words: Vec::new(), token_ids: Vec::new() };
        let mut seen = BTreeSet::new();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if w.is_empty() || !seen.insert(w.clone()) {
                continue;
            }
            let id = vocab
                .word_token(&w)
                .ok_or_else(|| Error::Config(format!("mask word `{w}` is not a single token in the shared vocabulary")))?;
            out.words.push(w);
            out.token_ids.push(id);
        }
        Ok(out)
    }

    pub fn load(vocab: &Vocabulary, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<&str> = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()).collect();
        Self::new(vocab, &words)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Masking sampler: masked ids never emitted, masked words never spelled out.
    pub fn sampler(&self, vocab: &Vocabulary, k: usize, max_len: usize) -> Result<Sampler> {
        let s = Sampler::new(k, max_len, vocab.specials())?;
        if self.is_empty() {
            return Ok(s);
        }
        Ok(s.with_mask(vocab.len(), &self.token_ids)?.with_word_guard(vocab, &self.words))
    }
}

/// Up to `n` single-token candidates, skipping function words, in candidate order.
pub fn select_mask<S: AsRef<str>>(vocab: &Vocabulary, candidates: &[S], function_words: &BTreeSet<String>, n: usize) -> MaskSet {
    let picked: Vec<String> = candidates
        .iter()
        .map(|w| w.as_ref().to_lowercase())
        .filter(|w| !function_words.contains(w) && vocab.word_token(w).is_some())
        .take(n)
        .collect();
    MaskSet::new(vocab, &picked).expect("candidates filtered to single tokens")
}

/// Top-k sampling from the teacher with `mask` applied.
pub fn masked_decode<R: Rng + ?Sized>(
    teacher: &TransformerLM,
    vocab: &Vocabulary,
    prompt: &[usize],
    mask: &MaskSet,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    mask.sampler(vocab, k, teacher.config().context_len)?.sample(teacher, prompt, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::ModelConfig;
    use crate::lm::sample::sample_top_k;
    use crate::lm::tokenizer::train_bpe;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        train_bpe(&["the dog ran", "the dog sat", "the dog ran", "a hippopotamus"], 30).unwrap()
    }

    #[test]
    fn multi_token_word_rejected() {
        let v = vocab();
        assert!(MaskSet::new(&v, &["dog"]).is_ok());
        assert!(matches!(MaskSet::new(&v, &["hippopotamus"]), Err(Error::Config(_))));
    }

    #[test]
    fn selection_skips_function_and_multi_token_words() {
        let v = vocab();
        let func: BTreeSet<String> = ["the".to_string()].into();
        let m = select_mask(&v, &["the", "hippopotamus", "dog"], &func, 40);
        assert_eq!(m.words, ["dog"]);
    }

    #[test]
    fn empty_mask_matches_plain_top_k() {
        let v = vocab();
        let cfg = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 10, vocab_size: v.len() };
        let m = TransformerLM::new(cfg, 1).unwrap();
        let empty = MaskSet::new(&v, &[] as &[&str]).unwrap();
        let p = v.encode("the");
        let a = masked_decode(&m, &v, &p, &empty, 5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_top_k(&m, v.specials(), &p, 5, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}
