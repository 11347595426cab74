//! The alternating CLM / interactive training loop and the ablation suite.

pub mod mask;
pub mod run;
pub mod schedule;
pub mod suite;

pub use mask::{masked_decode, select_mask, MaskSet, DEFAULT_MASK_SIZE};
pub use run::{
    read_metrics, read_rollouts, run_student, RolloutRecord, RunInputs, RunSpec, RunSummary, StepKind, StepRecord, StudentConfig,
};
pub use schedule::{RunMode, Schedule};
pub use suite::{grid, run_ablation_suite, ManifestEntry, RunStatus, SuiteCell, SuiteManifest, MANIFEST_FILE};
