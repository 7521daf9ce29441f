//! Metric learning with thin-plate-spline transforms.

pub mod bench;
pub mod data;
pub mod error;
pub mod kpca;
pub mod metric;
pub mod optim;
pub mod persist;
pub mod svm;
pub mod tml_svm;
pub mod tps;

pub use data::{Dataset, MinMaxScaler};
pub use error::{Error, Result};
