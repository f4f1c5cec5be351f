//! Dense-array substrate shared by every transform.

mod contract;
mod map;
pub(crate) mod matrix;
mod ops;
mod rng;
mod window;

pub use contract::{contract, Tensor};
pub use map::{FeatureMap, GridShape};
pub use matrix::Matrix;
pub use ops::{l2_normalize, l2_normalize_rows, softmax, softmax_in_place, NORM_EPS};
pub use rng::{derive_seed, seeded, Rng};
pub use window::{unfold, unfold_with, ContextTensor, NeighborTable, NeighborhoodSpec, Padding};
