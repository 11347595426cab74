//! Word-encounter ledger and regression analysis of learning sources.

pub mod corr;
pub mod groups;
pub mod ledger;
pub mod paired;
pub mod regression;

pub use corr::{pearson, spearman};
pub use groups::{group_words, load_pos_map, parse_pos_map, Pos};
pub use ledger::{update_ledger, CumulativeTable, FrequencyLedger, LedgerEvent, Source};
pub use paired::{paired_beta_analysis, write_beta_table, PairedBetaResult, SourceRow, DEFAULT_VIF_BOUND};
pub use regression::{standardized_ols, vif, RegressionResult, Vif};
