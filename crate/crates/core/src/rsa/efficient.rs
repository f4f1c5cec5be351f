//! Factorised RSA with switched contraction order.
//!
//! Per target and sub-query the output is
//! `y = q (P₁ᵀ + Xᴷ ⊛ r(H₁)) (H₂ᵀ Xᵛ) (I + Xᵛᵀ G)`, where
//! `(Xᴷ ⊛ r(H₁))[c, d] = Σ_m Xᴷ[m, c] r(H₁)[m, group(c), d]`. No intermediate
//! has an `M` axis, so both time and working set are linear in `M`.

use super::embed::{check_input, embed_rows};
use super::RsaParams;
use crate::tensor::matrix::axpy;
use crate::tensor::{FeatureMap, Matrix, NeighborTable};
use crate::{par, Error, Real, Result};

/// `H₁ ∈ R^{M·G × D}` viewed as `[M, G, D]` without copying.
#[derive(Clone, Copy, Debug)]
pub struct ReshapedH1<'a, T> {
    data: &'a [T],
    window: usize,
    groups: usize,
    latent: usize,
}

impl<'a, T: Real> ReshapedH1<'a, T> {
    pub fn new(h1: &'a Matrix<T>, window: usize, groups: usize) -> Result<Self> {
        if h1.rows() != window * groups {
            return Err(Error::shape(format!(
                "H1 has {} rows, expected {window}·{groups}",
                h1.rows()
            )));
        }
        Ok(ReshapedH1 {
            data: h1.data(),
            window,
            groups,
            latent: h1.cols(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.window, self.groups, self.latent)
    }

    /// `r(H₁)[m, g, :]`
    #[inline]
    pub fn fiber(&self, m: usize, g: usize) -> &'a [T] {
        let start = (m * self.groups + g) * self.latent;
        &self.data[start..start + self.latent]
    }

    pub fn get(&self, m: usize, g: usize, d: usize) -> T {
        self.fiber(m, g)[d]
    }

    /// Flattens back to `[M·G, D]`.
    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::new(self.window * self.groups, self.latent, self.data.to_vec()).unwrap()
    }
}

/// `out[c, d] += Σ_m K[m, c] r(H₁)[m, group(c), d]`; `out` is `[C_Q, D]`.
#[inline]
fn key_factor_acc<T: Real>(keys: &[T], cq: usize, h1: &ReshapedH1<'_, T>, out: &mut [T]) {
    let d = h1.latent;
    let width = cq / h1.groups;
    for (m, k) in keys.chunks_exact(cq).enumerate() {
        for (c, &kc) in k.iter().enumerate() {
            axpy(kc, h1.fiber(m, c / width), &mut out[c * d..(c + 1) * d]);
        }
    }
}

/// Relational kernel through the switched order:
/// `κᴿ = (q · (K ⊛ r(H₁))) · H₂ᵀ`.
pub fn kernel_fast<T: Real>(
    q: &[T],
    keys: &Matrix<T>,
    h1: &Matrix<T>,
    h2: &Matrix<T>,
    groups: usize,
) -> Result<Vec<T>> {
    let (m, cq) = keys.dims();
    if cq != q.len() || groups == 0 || cq % groups != 0 {
        return Err(Error::shape(format!("query {} / keys {cq} / groups {groups}", q.len())));
    }
    if h2.rows() != m || h1.cols() != h2.cols() {
        return Err(Error::shape(format!(
            "H1 {:?} / H2 {:?} for M={m}",
            h1.dims(),
            h2.dims()
        )));
    }
    let r = ReshapedH1::new(h1, m, groups)?;
    let d = h1.cols();
    let mut kh = vec![T::zero(); cq * d];
    key_factor_acc(keys.data(), cq, &r, &mut kh);
    let mut u = vec![T::zero(); d];
    for (c, &qc) in q.iter().enumerate() {
        axpy(qc, &kh[c * d..(c + 1) * d], &mut u);
    }
    Ok((0..m).map(|j| crate::tensor::matrix::dot(&u, h2.row(j))).collect())
}

/// Per-target scratch for the factorised path.
struct Scratch<T> {
    keys: Vec<T>,
    values: Vec<T>,
    /// `P₁ᵀ + K ⊛ r(H₁)`, `[C_Q, D]`
    a: Vec<T>,
    /// `H₂ᵀ V`, `[D, C_Q]`
    hv: Vec<T>,
    /// `I + Vᵀ G`, `[C_Q, C_Q]`
    z: Vec<T>,
    u: Vec<T>,
    w: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(p: &RsaParams<T>) -> Self {
        let (m, cq, d) = (p.config.window_size(), p.config.query_channels(), p.config.latent);
        Scratch {
            keys: vec![T::zero(); m * cq],
            values: vec![T::zero(); m * cq],
            a: vec![T::zero(); cq * d],
            hv: vec![T::zero(); d * cq],
            z: vec![T::zero(); cq * cq],
            u: vec![T::zero(); d],
            w: vec![T::zero(); cq],
        }
    }

    fn gather(&mut self, table: &NeighborTable, keys: &[T], values: &[T], cq: usize, i: usize) {
        let n = table.positions();
        let (b, pos) = (i / n, i % n);
        let rows = b * n * cq..(b + 1) * n * cq;
        table.gather(&keys[rows.clone()], cq, pos, &mut self.keys);
        table.gather(&values[rows], cq, pos, &mut self.values);
    }

    /// Builds the three query-independent factors from the gathered context.
    fn context_factors(&mut self, p: &RsaParams<T>, h1: &ReshapedH1<'_, T>) {
        let (cq, d) = (p.config.query_channels(), p.config.latent);
        // P₁ᵀ enters as the initial value of the grouped reduction
        for c in 0..cq {
            for j in 0..d {
                self.a[c * d + j] = p.p1.get(j, c);
            }
        }
        key_factor_acc(&self.keys, cq, h1, &mut self.a);

        self.hv.iter_mut().for_each(|v| *v = T::zero());
        for (m, v) in self.values.chunks_exact(cq).enumerate() {
            for (j, &h) in p.h2.row(m).iter().enumerate() {
                axpy(h, v, &mut self.hv[j * cq..(j + 1) * cq]);
            }
        }

        self.z.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..cq {
            self.z[c * cq + c] = T::one();
        }
        for (m, v) in self.values.chunks_exact(cq).enumerate() {
            let g = p.g_ctx.row(m);
            for (c, &vc) in v.iter().enumerate() {
                axpy(vc, g, &mut self.z[c * cq..(c + 1) * cq]);
            }
        }
    }

    /// `y = ((q · A) · HV) · Z` for one sub-query.
    fn query_output(&mut self, q: &[T], d: usize, y: &mut [T]) {
        let cq = q.len();
        self.u.iter_mut().for_each(|v| *v = T::zero());
        for (c, &qc) in q.iter().enumerate() {
            axpy(qc, &self.a[c * d..(c + 1) * d], &mut self.u);
        }
        self.w.iter_mut().for_each(|v| *v = T::zero());
        for (j, &uj) in self.u.iter().enumerate() {
            axpy(uj, &self.hv[j * cq..(j + 1) * cq], &mut self.w);
        }
        y.iter_mut().for_each(|v| *v = T::zero());
        for (c, &wc) in self.w.iter().enumerate() {
            axpy(wc, &self.z[c * cq..(c + 1) * cq], y);
        }
    }
}

fn forward<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>, share_context: bool) -> Result<FeatureMap<T>> {
    check_input(x, p)?;
    let shape = x.shape();
    let emb = embed_rows(x, p)?;
    let table = NeighborTable::new(&shape, &p.config.window)?;
    let h1 = ReshapedH1::new(&p.h1, p.config.window_size(), p.config.groups)?;
    let (cq, c, d) = (p.config.query_channels(), p.config.channels, p.config.latent);
    let mut out = vec![T::zero(); shape.len()];
    par::for_each_chunk(&mut out, c * par::BLOCK, |blk, chunk| {
        let mut s = Scratch::new(p);
        for (j, dst) in chunk.chunks_exact_mut(c).enumerate() {
            let i = blk * par::BLOCK + j;
            s.gather(&table, &emb.keys, &emb.values, cq, i);
            if share_context {
                s.context_factors(p, &h1);
            }
            let q_all = &emb.queries[i * c..(i + 1) * c];
            for (q, y) in q_all.chunks_exact(cq).zip(dst.chunks_exact_mut(cq)) {
                if !share_context {
                    s.context_factors(p, &h1);
                }
                s.query_output(q, d, y);
            }
        }
    });
    Ok(FeatureMap::from_parts(shape, out))
}

/// Factorised forward pass evaluated independently for each sub-query:
/// the context factors are rebuilt for every query, as a single-query
/// implementation applied `L` times would.
pub fn rsa_forward_fast<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<FeatureMap<T>> {
    forward(x, p, false)
}

/// Factorised forward pass with the key/value factors built once per target
/// and shared by all `L` sub-queries.
pub fn multi_query_forward<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<FeatureMap<T>> {
    forward(x, p, true)
}
