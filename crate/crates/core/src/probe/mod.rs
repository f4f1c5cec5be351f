//! Synthetic moving-bar probe.
//!
//! Up/Down and Left/Right clips are exact time reversals of each other, so
//! any transform that is blind to the order of its context rows (followed by
//! global average pooling) cannot tell the members of a direction pair apart.

mod checkpoint;
mod data;
mod kernels;
mod model;
mod train;

pub use checkpoint::{load, save, Manifest, TensorEntry};
pub use data::{gen_dataset, Clip, Dataset, DatasetConfig, Direction, INPUT_CHANNELS};
pub use kernels::{dump_kernels, kernel_csv, kernels, parse_kernel_csv, DumpedKernel};
pub use model::{ClipGrad, Layer, ProbeConfig, ProbeModel, TransformKind, CLASSES};
pub use train::{evaluate, paired_logit_test, train, EpochMetrics, PairedReport, TrainOptions, TrainReport};
