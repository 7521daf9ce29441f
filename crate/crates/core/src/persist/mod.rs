//! Dataset ingestion, model files and run configuration.

pub mod config;
pub mod dataset;
pub mod model_file;
pub mod train;

pub use config::RunConfig;
pub use dataset::{parse_csv_dataset, parse_libsvm_dataset, read_dataset, write_dataset};
pub use model_file::{ModelFile, StoredModel};
pub use train::{train_model, ModelKind, TrainSummary};
