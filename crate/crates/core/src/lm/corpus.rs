use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sentence-per-line corpus split into train and eval parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_SPLIT_SEED: u64 = 20_240_601;

/// Reads non-empty trimmed lines.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

impl Corpus {
    /// Shuffles line indices with `split_seed` and keeps the first
    /// `train_fraction` of them for training.
    pub fn split(lines: Vec<String>, train_fraction: f64, split_seed: u64) -> Result<Self> {
        if lines.len() < 2 {
            return Err(Error::Input(format!("corpus needs at least 2 lines, got {}", lines.len())));
        }
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
        }
        let mut idx: Vec<usize> = (0..lines.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        let n_train = ((lines.len() as f64 * train_fraction).round() as usize).clamp(1, lines.len() - 1);
        let mut train = Vec::with_capacity(n_train);
        let mut eval = Vec::with_capacity(lines.len() - n_train);
        for (rank, &i) in idx.iter().enumerate() {
            if rank < n_train {
                train.push(lines[i].clone());
            } else {
                eval.push(lines[i].clone());
            }
        }
        Ok(Self { train, eval })
    }

    pub fn load(path: &Path, train_fraction: f64, split_seed: u64) -> Result<Self> {
        let lines = read_lines(path)?;
        if lines.is_empty() {
            return Err(Error::Input(format!("corpus {} is empty", path.display())));
        }
        Self::split(lines, train_fraction, split_seed)
    }
}

/// Case-folded, punctuation-stripped words of a sentence.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let s: String = w.chars().filter(|c| c.is_alphanumeric() || *c == '\'').flat_map(char::to_lowercase).collect();
        (!s.is_empty()).then_some(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_eighty_twenty_and_disjoint() {
        let lines: Vec<String> = (0..100).map(|i| format!("line {i}")).collect();
        let c = Corpus::split(lines.clone(), 0.8, 7).unwrap();
        assert_eq!(c.train.len(), 80);
        assert_eq!(c.eval.len(), 20);
        let mut all: Vec<String> = c.train.iter().chain(&c.eval).cloned().collect();
        all.sort();
        let mut expect = lines.clone();
        expect.sort();
        assert_eq!(all, expect);
        assert_eq!(Corpus::split(lines, 0.8, 7).unwrap(), c);
    }

    #[test]
    fn word_matching_folds_case_and_strips_punctuation() {
        let w: Vec<String> = words("Look, the Dog! isn't it?").collect();
        assert_eq!(w, ["look", "the", "dog", "isn't", "it"]);
    }
}
