use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Predicate,
    Function,
    Other,
}

impl Pos {
    pub fn name(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Predicate => "predicate",
            Pos::Function => "function",
            Pos::Other => "other",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noun" => Ok(Pos::Noun),
            "predicate" | "verb" | "adjective" => Ok(Pos::Predicate),
            "function" => Ok(Pos::Function),
            "other" => Ok(Pos::Other),
            other => Err(Error::Input(format!("unknown POS category `{other}`"))),
        }
    }
}

/// Parses `word<TAB or space>category` lines; `#` starts a comment.
pub fn parse_pos_map(text: &str) -> Result<BTreeMap<String, Pos>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(w), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Input(format!("POS map line {}: expected `word category`", i + 1)));
        };
        map.insert(w.to_lowercase(), c.parse()?);
    }
    Ok(map)
}

pub fn load_pos_map(path: &Path) -> Result<BTreeMap<String, Pos>> {
    parse_pos_map(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Partitions `words` by POS; unmapped words go to [`Pos::Other`].
pub fn group_words<S: AsRef<str>>(words: &[S], pos_map: &BTreeMap<String, Pos>) -> BTreeMap<Pos, Vec<String>> {
    let mut out: BTreeMap<Pos, Vec<String>> = BTreeMap::new();
    for w in words {
        let w = w.as_ref();
        out.entry(pos_map.get(w).copied().unwrap_or(Pos::Other)).or_default().push(w.to_string());
    }
    out
}
