//! Character-level BPE with a word-initial space marker.
//!
//! Text is cut into chunks at spaces; every chunk after the first carries a
//! leading [`SPACE_MARK`] in place of the space. Merges never cross chunks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in for a space inside token strings. Input text must not contain it.
pub const SPACE_MARK: char = '\u{2581}';

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub bos: usize,
    pub eos: usize,
    pub unk: usize,
}

/// Token table plus the ordered merge list that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabFile", try_from = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    specials: Specials,
    index: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    specials: Specials,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
}

const VOCAB_VERSION: u32 = 1;

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        Self { version: VOCAB_VERSION, specials: v.specials, tokens: v.tokens, merges: v.merges }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = String;

    fn try_from(f: VocabFile) -> std::result::Result<Self, String> {
        if f.version != VOCAB_VERSION {
            return Err(format!("unsupported vocabulary version {}", f.version));
        }
        Ok(Self::from_parts(f.tokens, f.merges, f.specials))
    }
}

fn chunks(line: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    for ch in line.chars() {
        if ch == ' ' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(SPACE_MARK);
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Greedy BPE training.
///
/// Ids `0..3` are `<bos>`, `<eos>`, `<unk>`; the sorted character alphabet
/// follows, then one token per merge. `target_vocab` counts all of these,
/// so `target_vocab == 3 + |alphabet|` performs zero merges. Ties between
/// equally frequent pairs go to the lexicographically smallest pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], target_vocab: usize) -> Result<Vocabulary> {
    if corpus.iter().all(|l| l.as_ref().trim().is_empty()) {
        return Err(Error::Input("cannot train BPE on an empty corpus".into()));
    }
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    let mut alphabet: BTreeSet<char> = BTreeSet::new();
    for line in corpus {
        for c in chunks(line.as_ref()) {
            alphabet.extend(c.chars());
            *words.entry(c).or_insert(0) += 1;
        }
    }
    let base = 3 + alphabet.len();
    if target_vocab < base {
        return Err(Error::Input(format!("target vocabulary {target_vocab} is below the base alphabet size {base}")));
    }
    let mut tokens: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
    tokens.extend(alphabet.iter().map(|c| c.to_string()));

    let mut symbols: Vec<(Vec<String>, usize)> =
        words.into_iter().map(|(w, n)| (w.chars().map(|c| c.to_string()).collect(), n)).collect();
    let mut merges = Vec::new();
    while tokens.len() < target_vocab {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (syms, n) in &symbols {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_insert(0) += n;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so keeping the first
        // maximum implements the tie rule.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, n) in counts {
            if best.map_or(true, |(_, b)| n > b) {
                best = Some((pair, n));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        let merged = format!("{a}{b}");
        for (syms, _) in &mut symbols {
            merge_in_place(syms, &a, &b, &merged);
        }
        tokens.push(merged);
        merges.push((a, b));
    }
    Ok(Vocabulary::from_parts(tokens, merges, Specials { bos: 0, eos: 1, unk: 2 }))
}

fn merge_in_place(syms: &mut Vec<String>, a: &str, b: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == a && syms[i + 1] == b {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, merges: Vec<(String, String)>, specials: Specials) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Self { tokens, merges, specials, index, ranks }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn bos(&self) -> usize {
        self.specials.bos
    }

    pub fn eos(&self) -> usize {
        self.specials.eos
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<usize>) {
        let mut syms: Vec<String> = chunk.chars().map(|c| c.to_string()).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let (a, b) = &self.merges[rank];
            let merged = format!("{a}{b}");
            merge_in_place(&mut syms, a, b, &merged);
        }
        out.extend(syms.iter().map(|s| self.id(s).unwrap_or(self.specials.unk)));
    }

    /// Content token ids for `text` (no specials added).
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for c in chunks(text) {
            self.encode_chunk(&c, &mut out);
        }
        out
    }

    /// Inverse of [`Vocabulary::encode`]; specials other than `<unk>` are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            if id == self.specials.bos || id == self.specials.eos {
                continue;
            }
            if id == self.specials.unk {
                s.push('\u{FFFD}');
                continue;
            }
            if let Some(t) = self.tokens.get(id) {
                s.extend(t.chars().map(|c| if c == SPACE_MARK { ' ' } else { c }));
            }
        }
        s
    }

    /// Token id of `word` as it appears after a space, when that is a single token.
    pub fn word_token(&self, word: &str) -> Option<usize> {
        self.id(&format!("{SPACE_MARK}{word}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::integrity(path, format!("vocabulary: {e}")))
    }
}
