use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::lm::corpus::words;

/// Hashed word and character n-gram counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub min_order: usize,
    pub max_order: usize,
    pub dim_log2: u32,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { min_order: 1, max_order: 3, dim_log2: 14 }
    }
}

/// Sparse row: sorted unique indices with their counts.
pub type SparseRow = Vec<(u32, f64)>;

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        1 << self.dim_log2
    }

    fn bucket(&self, kind: u8, parts: &[&str]) -> u32 {
        let mut h = FnvHasher::default();
        h.write_u8(kind);
        for p in parts {
            h.write(p.as_bytes());
            h.write_u8(0xff);
        }
        (h.finish() & (self.dim() as u64 - 1)) as u32
    }

    pub fn extract(&self, text: &str) -> SparseRow {
        let mut idx = Vec::new();
        let ws: Vec<String> = words(text).collect();
        let mut padded: Vec<&str> = vec!["<s>"];
        padded.extend(ws.iter().map(String::as_str));
        padded.push("</s>");
        for n in self.min_order..=self.max_order {
            for g in padded.windows(n) {
                idx.push(self.bucket(b'w', g));
            }
        }
        let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        for n in self.min_order..=self.max_order {
            for g in chars.windows(n) {
                let s: String = g.iter().collect();
                idx.push(self.bucket(b'c', &[&s]));
            }
        }
        idx.sort_unstable();
        let mut row: SparseRow = Vec::with_capacity(idx.len());
        for i in idx {
            match row.last_mut() {
                Some((j, c)) if *j == i => *c += 1.0,
                _ => row.push((i, 1.0)),
            }
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_sorted_unique_and_in_range() {
        let spec = FeatureSpec::default();
        let row = spec.extract("the dog saw the dog");
        assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(row.iter().all(|(i, _)| (*i as usize) < spec.dim()));
        let total: f64 = row.iter().map(|(_, c)| c).sum();
        // word grams over 7 padded tokens: 7 + 6 + 5; char grams over 21 chars: 21 + 20 + 19
        assert_eq!(total, 18.0 + 60.0);
    }

    #[test]
    fn extraction_is_pure() {
        let spec = FeatureSpec::default();
        assert_eq!(spec.extract("a ball"), spec.extract("a ball"));
    }
}
