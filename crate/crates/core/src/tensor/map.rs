use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Extent of a batched spatio-temporal feature map `[B, T, H, W, C]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub const fn new(batch: usize, time: usize, height: usize, width: usize, channels: usize) -> Self {
        GridShape {
            batch,
            time,
            height,
            width,
            channels,
        }
    }

    /// Spatio-temporal positions per batch element, `N = T·H·W`.
    pub const fn positions(&self) -> usize {
        self.time * self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.batch * self.positions() * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        GridShape { channels, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.batch, self.time, self.height, self.width, self.channels];
        if dims.contains(&0) {
            return Err(Error::shape(format!("all dimensions must be >= 1, got {dims:?}")));
        }
        Ok(())
    }

    /// Flat position index of `(t, h, w)`.
    pub const fn position(&self, t: usize, h: usize, w: usize) -> usize {
        (t * self.height + h) * self.width + w
    }

    pub const fn coords(&self, n: usize) -> (usize, usize, usize) {
        let w = n % self.width;
        let h = (n / self.width) % self.height;
        let t = n / (self.width * self.height);
        (t, h, w)
    }
}

/// Batched dense feature map, stored row-major as `[B, T, H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    shape: GridShape,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(shape: GridShape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "feature map {shape:?} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map element {i}")));
        }
        Ok(FeatureMap { shape, data })
    }

    pub fn zeros(shape: GridShape) -> Result<Self> {
        shape.validate()?;
        Ok(FeatureMap {
            shape,
            data: vec![T::zero(); shape.len()],
        })
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn random_normal(shape: GridShape, std: f64, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let d = Normal::new(0.0, std).map_err(|e| Error::config(format!("normal std {std}: {e}")))?;
        Ok(FeatureMap {
            shape,
            data: (0..shape.len()).map(|_| T::lit(d.sample(rng))).collect(),
        })
    }

    /// Builds a map from `f(b, t, h, w, c)`.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize, usize, usize, usize) -> T) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.len());
        for b in 0..shape.batch {
            for t in 0..shape.time {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        for c in 0..shape.channels {
                            data.push(f(b, t, h, w, c));
                        }
                    }
                }
            }
        }
        FeatureMap::new(shape, data)
    }

    /// Wraps buffers produced internally; skips the finiteness scan.
    pub(crate) fn from_parts(shape: GridShape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        FeatureMap { shape, data }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Feature vector of position `n` in batch element `b`.
    pub fn row(&self, b: usize, n: usize) -> &[T] {
        let c = self.shape.channels;
        let start = (b * self.shape.positions() + n) * c;
        &self.data[start..start + c]
    }

    pub fn max_abs_diff(&self, other: &FeatureMap<T>) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Ok(FeatureMap {
            shape: self.shape,
            data,
        })
    }

    /// Reverses the time axis.
    pub fn reverse_time(&self) -> FeatureMap<T> {
        let s = self.shape;
        let frame = s.height * s.width * s.channels;
        let mut data = Vec::with_capacity(self.data.len());
        for b in 0..s.batch {
            let clip = &self.data[b * s.time * frame..(b + 1) * s.time * frame];
            for t in (0..s.time).rev() {
                data.extend_from_slice(&clip[t * frame..(t + 1) * frame]);
            }
        }
        FeatureMap { shape: s, data }
    }
}
