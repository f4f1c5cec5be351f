#![allow(dead_code)]

use rand_distr::{Distribution, StandardNormal};
use rsa_core::rsa::RsaConfig;
use rsa_core::tensor::{seeded, FeatureMap, GridShape, Matrix, NeighborhoodSpec};

pub fn spec(t: usize, h: usize, w: usize) -> NeighborhoodSpec {
    NeighborhoodSpec::new(t, h, w).unwrap()
}

pub fn random_map(grid: GridShape, seed: u64) -> FeatureMap<f64> {
    let mut rng = seeded(seed);
    FeatureMap::new(grid, (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    Matrix::random_normal(rows, cols, 1.0, &mut seeded(seed))
}

pub fn rsa_config(c: usize, l: usize, d: usize, g: usize, window: NeighborhoodSpec, normalize: bool) -> RsaConfig {
    RsaConfig {
        channels: c,
        queries: l,
        latent: d,
        groups: g,
        normalize,
        window,
    }
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
