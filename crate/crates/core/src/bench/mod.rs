//! Nearest-neighbour classification, synthetic data, and the repeated-split
//! evaluation protocol with paired t-test scoring.

pub mod knn;
pub mod methods;
pub mod protocol;
pub mod split;
pub mod stats;
pub mod synth;

pub use knn::{knn_predict, loo_1nn_accuracy, KnnIndex};
pub use methods::{BenchMethod, MethodKind};
pub use protocol::{exp_grid, run_protocol, Grids, Method};
pub use split::{stratified_folds, SplitPlan};
pub use stats::{ttest_paired, ScoreBoard, TTestOutcome};
pub use synth::{make_blobs, make_circles, make_synthetic, Generator, SyntheticSpec};
