use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FeatureMap, GridShape};
use crate::{Error, Real, Result};

/// Border rule for neighbours that fall outside the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Padding {
    #[default]
    Zero,
}

/// Centred spatio-temporal window `m_t × m_h × m_w`. Serialised as `"TxHxW"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NeighborhoodSpec {
    time: usize,
    height: usize,
    width: usize,
    padding: Padding,
}

impl NeighborhoodSpec {
    pub fn new(time: usize, height: usize, width: usize) -> Result<Self> {
        for (axis, m) in [("time", time), ("height", height), ("width", width)] {
            if m == 0 || m % 2 == 0 {
                return Err(Error::Window(format!(
                    "{axis} extent must be odd and positive, got {m}"
                )));
            }
        }
        Ok(NeighborhoodSpec {
            time,
            height,
            width,
            padding: Padding::Zero,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Context size `M = m_t·m_h·m_w`.
    pub fn size(&self) -> usize {
        self.time * self.height * self.width
    }

    /// Index of the zero offset, `(M - 1) / 2`.
    pub fn center(&self) -> usize {
        (self.size() - 1) / 2
    }

    /// Offsets `(dt, dh, dw)` in row-major order, `dt` slowest.
    pub fn offsets(&self) -> Vec<[isize; 3]> {
        let (rt, rh, rw) = (
            self.time as isize / 2,
            self.height as isize / 2,
            self.width as isize / 2,
        );
        let mut out = Vec::with_capacity(self.size());
        for dt in -rt..=rt {
            for dh in -rh..=rh {
                for dw in -rw..=rw {
                    out.push([dt, dh, dw]);
                }
            }
        }
        out
    }

    /// Index of the offset `(-dt, dh, dw)` for every `m`: the row permutation
    /// induced by reversing time.
    pub fn time_mirror(&self) -> Vec<usize> {
        let plane = self.height * self.width;
        (0..self.size())
            .map(|m| {
                let (t, rest) = (m / plane, m % plane);
                (self.time - 1 - t) * plane + rest
            })
            .collect()
    }

    /// Rejects windows wider than `2·extent + 1` along any axis.
    pub fn check_grid(&self, grid: &GridShape) -> Result<()> {
        for (axis, m, g) in [
            ("time", self.time, grid.time),
            ("height", self.height, grid.height),
            ("width", self.width, grid.width),
        ] {
            if m > 2 * g + 1 {
                return Err(Error::Window(format!("{axis} window {m} exceeds 2·{g}+1")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for NeighborhoodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.time, self.height, self.width)
    }
}

impl FromStr for NeighborhoodSpec {
    type Err = Error;

    /// Parses `"5x7x7"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<_> = s.trim().split(['x', 'X', '×']).collect();
        if parts.len() != 3 {
            return Err(Error::Window(format!("expected TxHxW, got {s:?}")));
        }
        let mut dims = [0usize; 3];
        for (d, p) in dims.iter_mut().zip(&parts) {
            *d = p
                .trim()
                .parse()
                .map_err(|_| Error::Window(format!("bad extent {p:?} in {s:?}")))?;
        }
        NeighborhoodSpec::new(dims[0], dims[1], dims[2])
    }
}

impl TryFrom<String> for NeighborhoodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NeighborhoodSpec> for String {
    fn from(spec: NeighborhoodSpec) -> String {
        spec.to_string()
    }
}

/// Flat neighbour lookup for every `(position, offset)` pair of a grid.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    positions: usize,
    window: usize,
    idx: Vec<u32>,
}

impl NeighborTable {
    const PAD: u32 = u32::MAX;

    pub fn new(grid: &GridShape, spec: &NeighborhoodSpec) -> Result<Self> {
        spec.check_grid(grid)?;
        let offsets = spec.offsets();
        let n = grid.positions();
        if n >= Self::PAD as usize {
            return Err(Error::shape("grid too large for neighbour table"));
        }
        let mut idx = Vec::with_capacity(n * offsets.len());
        for p in 0..n {
            let (t, h, w) = grid.coords(p);
            for &[dt, dh, dw] in &offsets {
                let (tt, hh, ww) = (t as isize + dt, h as isize + dh, w as isize + dw);
                let inside = (0..grid.time as isize).contains(&tt)
                    && (0..grid.height as isize).contains(&hh)
                    && (0..grid.width as isize).contains(&ww);
                idx.push(if inside {
                    grid.position(tt as usize, hh as usize, ww as usize) as u32
                } else {
                    Self::PAD
                });
            }
        }
        Ok(NeighborTable {
            positions: n,
            window: offsets.len(),
            idx,
        })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Position of the `m`-th neighbour of `n`, or `None` in the padding.
    #[inline]
    pub fn neighbor(&self, n: usize, m: usize) -> Option<usize> {
        let v = self.idx[n * self.window + m];
        (v != Self::PAD).then_some(v as usize)
    }

    /// Copies the context rows of position `n` out of a `[N, C]` slice into
    /// `out` (`[M, C]`), zero-filling padded rows.
    #[inline]
    pub fn gather<T: Real>(&self, rows: &[T], c: usize, n: usize, out: &mut [T]) {
        for (m, dst) in out.chunks_exact_mut(c).enumerate() {
            match self.neighbor(n, m) {
                Some(p) => dst.copy_from_slice(&rows[p * c..(p + 1) * c]),
                None => dst.iter_mut().for_each(|v| *v = T::zero()),
            }
        }
    }

    /// Adjoint of [`gather`](Self::gather): adds `ctx` rows back onto `rows`.
    #[inline]
    pub fn scatter_add<T: Real>(&self, ctx: &[T], c: usize, n: usize, rows: &mut [T]) {
        for (m, src) in ctx.chunks_exact(c).enumerate() {
            if let Some(p) = self.neighbor(n, m) {
                for (d, s) in rows[p * c..(p + 1) * c].iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
    }
}

/// Per-position unfolded contexts `[B, N, M, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTensor<T> {
    batch: usize,
    positions: usize,
    window: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ContextTensor<T> {
    /// Wraps a raw `[B, N, M, C]` buffer. Any `M` is accepted here, which
    /// lets callers build contexts that no centred window can produce.
    pub fn from_raw(batch: usize, positions: usize, window: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if batch * positions * window * channels != data.len() || data.is_empty() {
            return Err(Error::shape(format!(
                "context [{batch},{positions},{window},{channels}] vs {} elements",
                data.len()
            )));
        }
        Ok(ContextTensor {
            batch,
            positions,
            window,
            channels,
            data,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// `[M, C]` block of position `n` in batch `b`.
    pub fn context(&self, b: usize, n: usize) -> &[T] {
        let len = self.window * self.channels;
        let start = (b * self.positions + n) * len;
        &self.data[start..start + len]
    }
}

/// Extracts every centred window of `x`, zero-padded at the borders.
pub fn unfold<T: Real>(x: &FeatureMap<T>, spec: &NeighborhoodSpec) -> Result<ContextTensor<T>> {
    let table = NeighborTable::new(&x.shape(), spec)?;
    Ok(unfold_with(x.data(), x.shape().batch, x.shape().channels, &table))
}

/// [`unfold`] over a raw `[B, N, C]` buffer with a prebuilt table.
pub fn unfold_with<T: Real>(rows: &[T], batch: usize, c: usize, table: &NeighborTable) -> ContextTensor<T> {
    let (n, m) = (table.positions(), table.window());
    let mut data = vec![T::zero(); batch * n * m * c];
    crate::par::for_each_chunk(&mut data, m * c, |i, out| {
        let (b, p) = (i / n, i % n);
        table.gather(&rows[b * n * c..(b + 1) * n * c], c, p, out);
    });
    ContextTensor {
        batch,
        positions: n,
        window: m,
        channels: c,
        data,
    }
}
