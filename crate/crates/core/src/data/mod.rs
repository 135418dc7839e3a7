//! Datasets, checkpoints and CSV logs.

pub mod checkpoint;
pub mod dataset;
pub mod log;
pub mod synthetic;

pub use checkpoint::{Checkpoint, RngState};
pub use dataset::{load_cifar, load_dataset, load_idx, Dataset, DatasetFormat, Split};
pub use log::{append_log, format_g, parse_log, CsvLog, Phase, TrainLogRecord, CSV_HEADER};
pub use synthetic::{write_synthetic_cifar, SyntheticConfig};
