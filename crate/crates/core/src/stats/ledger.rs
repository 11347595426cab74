use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::corpus::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Trial,
    Demo,
    Corpus,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Trial, Source::Demo, Source::Corpus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::Trial => "trial",
            Source::Demo => "demo",
            Source::Corpus => "corpus",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One ledger.jsonl line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub step: u64,
    pub source: Source,
    pub hits: BTreeMap<String, u64>,
}

/// Cumulative encounters of tracked words per learning source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLedger {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    step: u64,
    totals: Vec<[u64; 3]>,
    events: Vec<LedgerEvent>,
}

impl FrequencyLedger {
    pub fn new<S: AsRef<str>>(tracked: &[S]) -> Self {
        let mut words: Vec<String> = tracked.iter().map(|w| w.as_ref().to_lowercase()).collect();
        words.sort();
        words.dedup();
        let mut l = Self { totals: vec![[0; 3]; words.len()], words, index: HashMap::new(), step: 0, events: Vec::new() };
        l.reindex();
        l
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn total(&self, word: &str, source: Source) -> Option<u64> {
        self.index.get(word).map(|&i| self.totals[i][source.index()])
    }

    /// Counts tracked words in `text` and records the event.
    ///
    /// Returns the event even when nothing matched; such events are not stored.
    pub fn update(&mut self, step: u64, source: Source, text: &str) -> Result<LedgerEvent> {
        if step < self.step {
            return Err(Error::Contract(format!("ledger step {step} precedes current step {}", self.step)));
        }
        self.step = step;
        let mut hits = BTreeMap::new();
        for w in words(text) {
            if let Some(&i) = self.index.get(&w) {
                self.totals[i][source.index()] += 1;
                *hits.entry(w).or_insert(0) += 1;
            }
        }
        let ev = LedgerEvent { step, source, hits };
        if !ev.hits.is_empty() {
            self.events.push(ev.clone());
        }
        Ok(ev)
    }

    /// Rebuilds a ledger by replaying events in order.
    pub fn replay<S: AsRef<str>>(tracked: &[S], events: &[LedgerEvent]) -> Result<Self> {
        let mut l = Self::new(tracked);
        for ev in events {
            if ev.step < l.step {
                return Err(Error::Contract(format!("ledger event at step {} follows step {}", ev.step, l.step)));
            }
            l.step = ev.step;
            for (w, &n) in &ev.hits {
                if let Some(&i) = l.index.get(w) {
                    l.totals[i][ev.source.index()] += n;
                }
            }
            l.events.push(ev.clone());
        }
        Ok(l)
    }

    /// Cumulative counts at each grid step (events with `step <= grid[g]`).
    pub fn cumulative(&self, grid: &[u64]) -> CumulativeTable {
        let mut counts = vec![[vec![0u64; grid.len()], vec![0u64; grid.len()], vec![0u64; grid.len()]]; self.words.len()];
        let mut running = vec![[0u64; 3]; self.words.len()];
        let mut e = 0;
        for (g, &step) in grid.iter().enumerate() {
            while e < self.events.len() && self.events[e].step <= step {
                let ev = &self.events[e];
                for (w, &n) in &ev.hits {
                    if let Some(&i) = self.index.get(w) {
                        running[i][ev.source.index()] += n;
                    }
                }
                e += 1;
            }
            for (i, r) in running.iter().enumerate() {
                for s in 0..3 {
                    counts[i][s][g] = r[s];
                }
            }
        }
        CumulativeTable { grid: grid.to_vec(), words: self.words.clone(), counts }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for ev in &self.events {
            serde_json::to_writer(&mut f, ev)?;
            f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.reindex();
    }
}

pub fn update_ledger(ledger: &mut FrequencyLedger, step: u64, source: Source, text: &str) -> Result<LedgerEvent> {
    ledger.update(step, source, text)
}

pub fn read_ledger_events(path: &Path) -> Result<Vec<LedgerEvent>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

/// `counts[word][source][grid index]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeTable {
    pub grid: Vec<u64>,
    pub words: Vec<String>,
    pub counts: Vec<[Vec<u64>; 3]>,
}

impl CumulativeTable {
    pub fn series(&self, word: &str, source: Source) -> Option<&[u64]> {
        let i = self.words.iter().position(|w| w == word)?;
        Some(&self.counts[i][source.index()])
    }
}
