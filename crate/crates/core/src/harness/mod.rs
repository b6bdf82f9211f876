//! Synthetic data, training, evaluation and attention export.

mod config;
mod export;
mod task;
mod train;

pub use config::{all_keys, Experiment, TASK_KEYS};
pub use export::{csv_text, export_attention, parse_csv_matrix, parse_pgm, pgm_bytes, AttnFormat};
pub use task::{generate_dataset, Dataset, Placement, Split, SyntheticTask, MAX_CLASSES};
pub use train::{
    accuracy, argmax_rows, evaluate, train, train_model, EpochMetrics, TrainOutcome, TrainRun, CHECKPOINT_FILE,
    METRICS_FILE, RUN_FILE, TRAIN_KEYS,
};
