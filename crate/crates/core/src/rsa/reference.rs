//! Literal RSA: kernels and contexts are formed explicitly and combined as
//! `y = (κᵛ + κᴿ)(Xᵛ + Xᴿ)` per target and sub-query.

use super::embed::{check_input, embed_rows};
use super::RsaParams;
use crate::tensor::matrix::{axpy, dot, vec_mat};
use crate::tensor::{FeatureMap, Matrix, NeighborTable};
use crate::{par, Error, Real, Result};

/// Basic kernel `κᵛ = q Pᵀ` with `P = H₂ P₁` formed explicitly.
pub fn basic_kernel<T: Real>(q: &[T], p1: &Matrix<T>, h2: &Matrix<T>) -> Result<Vec<T>> {
    if p1.cols() != q.len() {
        return Err(Error::shape(format!(
            "P1 has {} columns, query has {}",
            p1.cols(),
            q.len()
        )));
    }
    let pos = h2.matmul(p1)?;
    let mut out = vec![T::zero(); pos.rows()];
    basic_kernel_into(q, pos.data(), &mut out);
    Ok(out)
}

/// Relational kernel `κᴿ = vec(corr) · H₁H₂ᵀ`, where
/// `corr[m, g] = Σ_{c ∈ g} q_c K[m, c]` over contiguous channel groups.
///
/// One group is the dot-product correlation; `groups == q.len()` is the
/// Hadamard (channel-wise) correlation.
pub fn relational_kernel<T: Real>(
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
    if h1.rows() != m * groups || h2.rows() != m || h1.cols() != h2.cols() {
        return Err(Error::shape(format!(
            "H1 {:?} and H2 {:?} do not fit M={m}, G={groups}",
            h1.dims(),
            h2.dims()
        )));
    }
    let proj = h1.matmul_t(h2)?;
    let mut corr = vec![T::zero(); m * groups];
    correlation_into(q, keys.data(), groups, &mut corr);
    let mut out = vec![T::zero(); m];
    vec_mat(&corr, proj.data(), m, &mut out);
    Ok(out)
}

/// Relational context `Xᴿ = (V Vᵀ) G`.
pub fn relational_context<T: Real>(values: &Matrix<T>, g_ctx: &Matrix<T>) -> Result<Matrix<T>> {
    if g_ctx.dims() != values.dims() {
        return Err(Error::shape(format!(
            "G {:?} vs values {:?}",
            g_ctx.dims(),
            values.dims()
        )));
    }
    let (m, cq) = values.dims();
    let mut gram = vec![T::zero(); m * m];
    let mut xr = vec![T::zero(); m * cq];
    relational_context_into(values.data(), cq, g_ctx.data(), &mut gram, &mut xr);
    Matrix::new(m, cq, xr)
}

#[inline]
pub(crate) fn basic_kernel_into<T: Real>(q: &[T], pos: &[T], out: &mut [T]) {
    let cq = q.len();
    for (m, o) in out.iter_mut().enumerate() {
        *o = dot(q, &pos[m * cq..(m + 1) * cq]);
    }
}

#[inline]
pub(crate) fn correlation_into<T: Real>(q: &[T], keys: &[T], groups: usize, out: &mut [T]) {
    let cq = q.len();
    let width = cq / groups;
    for (m, k) in keys.chunks_exact(cq).enumerate() {
        for g in 0..groups {
            let span = g * width..(g + 1) * width;
            out[m * groups + g] = dot(&q[span.clone()], &k[span]);
        }
    }
}

/// Fills `gram = V Vᵀ` and `xr = gram · G`.
#[inline]
pub(crate) fn relational_context_into<T: Real>(values: &[T], cq: usize, g_ctx: &[T], gram: &mut [T], xr: &mut [T]) {
    let m = values.len() / cq;
    for i in 0..m {
        let vi = &values[i * cq..(i + 1) * cq];
        for j in 0..m {
            gram[i * m + j] = dot(vi, &values[j * cq..(j + 1) * cq]);
        }
    }
    for i in 0..m {
        let dst = &mut xr[i * cq..(i + 1) * cq];
        dst.iter_mut().for_each(|v| *v = T::zero());
        for j in 0..m {
            axpy(gram[i * m + j], &g_ctx[j * cq..(j + 1) * cq], dst);
        }
    }
}

/// Explicit `P` and `H` for one forward call.
pub(crate) struct Derived<T> {
    pub pos: Matrix<T>,
    pub proj: Matrix<T>,
}

impl<T: Real> Derived<T> {
    pub fn new(p: &RsaParams<T>) -> Self {
        Derived {
            pos: p.position_matrix(),
            proj: p.kernel_projection(),
        }
    }
}

/// Per-target intermediates of the literal path.
pub(crate) struct Terms<T> {
    pub keys: Vec<T>,
    pub values: Vec<T>,
    pub gram: Vec<T>,
    pub xr: Vec<T>,
    /// `[L, M·G]`
    pub corr: Vec<T>,
    /// `[L, M]`
    pub kv: Vec<T>,
    /// `[L, M]`
    pub kr: Vec<T>,
}

impl<T: Real> Terms<T> {
    pub fn new(p: &RsaParams<T>) -> Self {
        let c = &p.config;
        let (m, cq, l, g) = (c.window_size(), c.query_channels(), c.queries, c.groups);
        Terms {
            keys: vec![T::zero(); m * cq],
            values: vec![T::zero(); m * cq],
            gram: vec![T::zero(); m * m],
            xr: vec![T::zero(); m * cq],
            corr: vec![T::zero(); l * m * g],
            kv: vec![T::zero(); l * m],
            kr: vec![T::zero(); l * m],
        }
    }

    /// Evaluates every kernel and context of target `n` (row `i = b·N + n`).
    #[allow(clippy::too_many_arguments)]
    pub fn fill(
        &mut self,
        p: &RsaParams<T>,
        derived: &Derived<T>,
        table: &NeighborTable,
        queries: &[T],
        keys: &[T],
        values: &[T],
        i: usize,
    ) {
        let c = &p.config;
        let (m, cq, l, g) = (c.window_size(), c.query_channels(), c.queries, c.groups);
        let n = table.positions();
        let (b, pos) = (i / n, i % n);
        let rows = b * n * cq..(b + 1) * n * cq;
        table.gather(&keys[rows.clone()], cq, pos, &mut self.keys);
        table.gather(&values[rows], cq, pos, &mut self.values);
        relational_context_into(&self.values, cq, p.g_ctx.data(), &mut self.gram, &mut self.xr);
        let q_all = &queries[i * l * cq..(i + 1) * l * cq];
        for ql in 0..l {
            let q = &q_all[ql * cq..(ql + 1) * cq];
            basic_kernel_into(q, derived.pos.data(), &mut self.kv[ql * m..(ql + 1) * m]);
            let corr = &mut self.corr[ql * m * g..(ql + 1) * m * g];
            correlation_into(q, &self.keys, g, corr);
            vec_mat(corr, derived.proj.data(), m, &mut self.kr[ql * m..(ql + 1) * m]);
        }
    }
}

/// Per-sub-query `κᵛ` and `κᴿ` vectors.
pub type KernelPair<T> = (Vec<Vec<T>>, Vec<Vec<T>>);

/// Kernels `κᵛ` and `κᴿ` (one `[M]` vector per sub-query) at one target.
pub fn kernels_at<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>, b: usize, n: usize) -> Result<KernelPair<T>> {
    let shape = x.shape();
    if b >= shape.batch || n >= shape.positions() {
        return Err(Error::shape(format!("target ({b}, {n}) outside {shape:?}")));
    }
    let emb = embed_rows(x, p)?;
    let table = NeighborTable::new(&shape, &p.config.window)?;
    let derived = Derived::new(p);
    let mut terms = Terms::new(p);
    terms.fill(
        p,
        &derived,
        &table,
        &emb.queries,
        &emb.keys,
        &emb.values,
        b * shape.positions() + n,
    );
    let m = p.config.window_size();
    let split = |v: &[T]| v.chunks_exact(m).map(<[T]>::to_vec).collect();
    Ok((split(&terms.kv), split(&terms.kr)))
}

/// Literal forward pass.
pub fn rsa_forward_reference<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<FeatureMap<T>> {
    check_input(x, p)?;
    let shape = x.shape();
    let emb = embed_rows(x, p)?;
    let table = NeighborTable::new(&shape, &p.config.window)?;
    let derived = Derived::new(p);
    let (m, cq, c) = (p.config.window_size(), p.config.query_channels(), p.config.channels);
    let mut out = vec![T::zero(); shape.len()];
    par::for_each_chunk(&mut out, c * par::BLOCK, |blk, chunk| {
        let mut t = Terms::new(p);
        for (j, dst) in chunk.chunks_exact_mut(c).enumerate() {
            t.fill(
                p,
                &derived,
                &table,
                &emb.queries,
                &emb.keys,
                &emb.values,
                blk * par::BLOCK + j,
            );
            // context = Xᵛ + Xᴿ, in place over xr
            for (r, v) in t.xr.iter_mut().zip(&t.values) {
                *r = *r + *v;
            }
            for (ql, y) in dst.chunks_exact_mut(cq).enumerate() {
                y.iter_mut().for_each(|v| *v = T::zero());
                for j in 0..m {
                    let k = t.kv[ql * m + j] + t.kr[ql * m + j];
                    axpy(k, &t.xr[j * cq..(j + 1) * cq], y);
                }
            }
        }
    });
    Ok(FeatureMap::from_parts(shape, out))
}

/// The four dynamic transforms whose sum is the RSA output.
#[derive(Clone, Debug)]
pub struct SubTransforms<T> {
    /// `κᵛ Xᵛ`
    pub basic_basic: FeatureMap<T>,
    /// `κᴿ Xᵛ`
    pub relational_basic: FeatureMap<T>,
    /// `κᵛ Xᴿ`
    pub basic_relational: FeatureMap<T>,
    /// `κᴿ Xᴿ`
    pub relational_relational: FeatureMap<T>,
}

impl<T: Real> SubTransforms<T> {
    pub fn sum(&self) -> FeatureMap<T> {
        let a = self.basic_basic.add(&self.relational_basic).unwrap();
        let b = self.basic_relational.add(&self.relational_relational).unwrap();
        a.add(&b).unwrap()
    }
}

pub fn rsa_subtransforms<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<SubTransforms<T>> {
    check_input(x, p)?;
    let shape = x.shape();
    let emb = embed_rows(x, p)?;
    let table = NeighborTable::new(&shape, &p.config.window)?;
    let derived = Derived::new(p);
    let (m, cq, c) = (p.config.window_size(), p.config.query_channels(), p.config.channels);
    // four C-wide outputs per target, split afterwards
    let mut out = vec![T::zero(); shape.len() * 4];
    par::for_each_chunk(&mut out, 4 * c * par::BLOCK, |blk, chunk| {
        let mut t = Terms::new(p);
        for (i, dst) in chunk.chunks_exact_mut(4 * c).enumerate() {
            t.fill(
                p,
                &derived,
                &table,
                &emb.queries,
                &emb.keys,
                &emb.values,
                blk * par::BLOCK + i,
            );
            let (vv, rest) = dst.split_at_mut(c);
            let (rv, rest) = rest.split_at_mut(c);
            let (vr, rr) = rest.split_at_mut(c);
            for ql in 0..p.config.queries {
                let s = ql * cq..(ql + 1) * cq;
                for j in 0..m {
                    let (kv, kr) = (t.kv[ql * m + j], t.kr[ql * m + j]);
                    let v = &t.values[j * cq..(j + 1) * cq];
                    let r = &t.xr[j * cq..(j + 1) * cq];
                    axpy(kv, v, &mut vv[s.clone()]);
                    axpy(kr, v, &mut rv[s.clone()]);
                    axpy(kv, r, &mut vr[s.clone()]);
                    axpy(kr, r, &mut rr[s.clone()]);
                }
            }
        }
    });
    let mut parts: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(shape.len()));
    for block in out.chunks_exact(4 * c) {
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&block[k * c..(k + 1) * c]);
        }
    }
    let [a, b, cc, d] = parts;
    Ok(SubTransforms {
        basic_basic: FeatureMap::from_parts(shape, a),
        relational_basic: FeatureMap::from_parts(shape, b),
        basic_relational: FeatureMap::from_parts(shape, cc),
        relational_relational: FeatureMap::from_parts(shape, d),
    })
}
