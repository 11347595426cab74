//! Tokenizer, transformer language model, CLM training, sampling and checkpoints.

pub mod checkpoint;
pub mod corpus;
pub mod model;
pub mod sample;
pub mod teacher;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{list_checkpoints, load_checkpoint, save_checkpoint, RngState, TrajectoryCheckpoint};
pub use corpus::{words, Corpus};
pub use model::{ModelConfig, TransformerLM};
pub use sample::{sample_top_k, Sampler};
pub use teacher::{log_spaced_schedule, pretrain_teacher, TeacherConfig};
pub use tokenizer::{train_bpe, Specials, Vocabulary};
pub use train::{clm_loss, clm_step, training_sequence};
