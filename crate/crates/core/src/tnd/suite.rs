use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tnd::mask::MaskSet;
use crate::tnd::run::{run_student, RunInputs, RunSpec, StudentConfig, LEDGER_FILE, METRICS_FILE};
use crate::tnd::schedule::RunMode;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub mode: RunMode,
    pub seed: u64,
    #[serde(default)]
    pub masked: bool,
}

impl SuiteCell {
    pub fn dir_name(&self) -> String {
        if self.masked {
            format!("{}_masked_seed{}", self.mode, self.seed)
        } else {
            format!("{}_seed{}", self.mode, self.seed)
        }
    }
}

/// Every mode crossed with every seed, unmasked.
pub fn grid(modes: &[RunMode], seeds: &[u64]) -> Vec<SuiteCell> {
    modes.iter().flat_map(|&mode| seeds.iter().map(move |&seed| SuiteCell { mode, seed, masked: false })).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Paths are relative to the suite directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub mode: RunMode,
    pub seed: u64,
    pub masked: bool,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub run_dir: PathBuf,
    pub metrics: PathBuf,
    pub ledger: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_checkpoint: Option<PathBuf>,
    pub checkpoints: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub mask: Option<Vec<String>>,
    pub runs: Vec<ManifestEntry>,
}

impl SuiteManifest {
    pub fn load(suite_dir: &Path) -> Result<Self> {
        let path = suite_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::integrity(&path, e.to_string()))
    }

    pub fn save(&self, suite_dir: &Path) -> Result<()> {
        let path = suite_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn ok_runs(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.runs.iter().filter(|r| r.status == RunStatus::Ok)
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed).count()
    }
}

/// Runs every cell, `jobs` at a time, and writes `manifest.json`.
///
/// A failed cell is recorded and the rest continue. Finished run directories
/// are reused, so an interrupted suite picks up where it stopped.
pub fn run_ablation_suite(
    inputs: &RunInputs<'_>,
    student: &StudentConfig,
    cells: &[SuiteCell],
    mask: Option<&MaskSet>,
    suite_dir: &Path,
    jobs: usize,
) -> Result<SuiteManifest> {
    if cells.iter().any(|c| c.masked) && mask.is_none() {
        return Err(Error::Config("masked suite cells need a mask".into()));
    }
    std::fs::create_dir_all(suite_dir).map_err(|e| Error::io(suite_dir, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ManifestEntry>>> = Mutex::new(vec![None; cells.len()]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        let cell_mask = if cell.masked { mask } else { None };
        let spec = RunSpec { mode: cell.mode, seed: cell.seed, mask: cell_mask.map(|m| m.words.clone()), student: student.clone() };
        let rel = PathBuf::from(cell.dir_name());
        log::info!("suite: starting {}", rel.display());
        let outcome = run_student(inputs, &spec, cell_mask, &suite_dir.join(&rel));
        let mut entry = ManifestEntry {
            mode: cell.mode,
            seed: cell.seed,
            masked: cell.masked,
            status: RunStatus::Ok,
            error: None,
            metrics: rel.join(METRICS_FILE),
            ledger: rel.join(LEDGER_FILE),
            run_dir: rel.clone(),
            final_checkpoint: None,
            checkpoints: Vec::new(),
        };
        match outcome {
            Ok(s) => {
                entry.final_checkpoint = s.final_checkpoint.strip_prefix(suite_dir).map(Path::to_path_buf).ok().or(Some(s.final_checkpoint));
                entry.checkpoints = s.checkpoints;
            }
            Err(e) => {
                log::warn!("suite: {} failed: {e}", rel.display());
                entry.status = RunStatus::Failed;
                entry.error = Some(e.to_string());
            }
        }
        results.lock().expect("no panics while holding the lock")[i] = Some(entry);
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1).min(cells.len().max(1)) {
            s.spawn(work);
        }
        work();
    });
    let runs = results.into_inner().expect("workers finished").into_iter().map(|e| e.expect("every cell visited")).collect();
    let manifest = SuiteManifest { mask: mask.map(|m| m.words.clone()), runs };
    manifest.save(suite_dir)?;
    Ok(manifest)
}
