//! Per-command configuration documents. Every field has a default, unknown
//! keys are rejected, and command-line flags are applied on top.

use std::fs;
use std::path::{Path, PathBuf};

use rsa_core::analysis::{Dims, Dtype, Impl};
use rsa_core::grad::{ForwardPath, RsaGradCase};
use rsa_core::probe::{DatasetConfig, ProbeConfig, TrainOptions};
use rsa_core::rsa::RsaConfig;
use rsa_core::tensor::NeighborhoodSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Reads `path` as a JSON document, or returns the defaults.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::ConfigFile {
        path: path.display().to_string(),
        source,
    })
}

/// The kernel-size grid `3×3×3 … 5×9×9`.
pub fn kernel_sizes() -> Vec<NeighborhoodSpec> {
    ["3x3x3", "3x5x5", "3x7x7", "3x9x9", "5x7x7", "5x9x9"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

fn window(s: &str) -> NeighborhoodSpec {
    s.parse().unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivCase {
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    pub rsa: RsaConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivConfig {
    pub seed: u64,
    pub dtype: Dtype,
    /// Absolute for f64; relative to the largest reference output for f32.
    pub tolerance: Option<f64>,
    pub cases: Vec<EquivCase>,
}

impl Default for EquivConfig {
    /// 27 configurations over L ∈ {1,2,4}, C ∈ {8,16,64} and three windows,
    /// cycling the correlation groups, latent size and normalisation.
    fn default() -> Self {
        let mut cases = Vec::new();
        for (i, w) in ["3x1x1", "3x3x3", "5x7x7"].into_iter().enumerate() {
            for (j, c) in [8usize, 16, 64].into_iter().enumerate() {
                for (k, l) in [1usize, 2, 4].into_iter().enumerate() {
                    let cq = c / l;
                    cases.push(EquivCase {
                        batch: 1 + cases.len() % 2,
                        time: 3,
                        height: 4,
                        width: 5,
                        rsa: RsaConfig {
                            channels: c,
                            queries: l,
                            latent: [2, 4, 8][(i + k) % 3],
                            groups: [1, 2, cq][(i + j + k) % 3],
                            normalize: (i + j + k) % 2 == 0,
                            window: window(w),
                        },
                    });
                }
            }
        }
        EquivConfig {
            seed: 0,
            dtype: Dtype::F64,
            tolerance: None,
            cases,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub case: RsaGradCase,
    pub path: ForwardPath,
    pub eps: f64,
    pub tolerance: f64,
    pub coords_per_tensor: usize,
    /// Flip the sign of one analytic gradient entry; the check must then fail.
    pub corrupt: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            case: RsaGradCase::default(),
            path: ForwardPath::Reference,
            eps: 1e-5,
            tolerance: 1e-4,
            coords_per_tensor: 64,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsConfig {
    /// Problem size; `window` is replaced by each entry of `windows`.
    pub dims: Dims,
    pub windows: Vec<usize>,
    pub impls: Vec<Impl>,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            dims: Dims {
                batch: 1,
                time: 8,
                height: 56,
                width: 56,
                channels: 64,
                queries: 8,
                latent: 8,
                groups: 1,
                window: 245,
                normalize: true,
            },
            windows: kernel_sizes().iter().map(|k| k.size()).collect(),
            impls: Impl::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub dtype: Dtype,
    pub threads: Option<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub max_workset: u64,
    pub interleave: bool,
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    /// Layer hyper-parameters; `window` is replaced by each kernel size.
    pub rsa: RsaConfig,
    pub kernel_sizes: Vec<NeighborhoodSpec>,
    pub impls: Vec<Impl>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            dtype: Dtype::F64,
            threads: None,
            repeats: 5,
            warmup: 2,
            max_workset: 1 << 28,
            interleave: false,
            batch: 1,
            time: 4,
            height: 8,
            width: 8,
            rsa: RsaConfig {
                channels: 64,
                queries: 8,
                latent: 8,
                groups: 1,
                normalize: true,
                window: window("3x3x3"),
            },
            kernel_sizes: kernel_sizes(),
            impls: Impl::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeRunConfig {
    pub data: DatasetConfig,
    pub model: ProbeConfig,
    pub train: TrainOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct DumpConfig {
    /// Trained model to load; a fresh model from `model` and `seed` otherwise.
    pub checkpoint: Option<PathBuf>,
    pub model: ProbeConfig,
    pub seed: u64,
    pub data: DatasetConfig,
    /// Index into the test split.
    pub clip: usize,
    /// `[t, h, w]`; the grid centre when absent.
    pub position: Option<[usize; 3]>,
}
