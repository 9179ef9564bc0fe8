//! Training, evaluation, checkpoints, ablations and embedding export.

mod ablation;
mod checkpoint;
mod config;
mod export;
mod optim;
mod train;

pub use ablation::{run_ablation, run_ablation_on, AblationReport, AblationRow};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{load_data, DataSource, Split, SplitConfig, SplitIndices, TrainConfig};
pub use export::{embeddings_csv, export_embeddings, EXPORT_STAGES};
pub use optim::Sgd;
pub use train::{evaluate, evaluate_on, run_epoch, score_range, train, train_on, EpochLog, TrainOutcome};
