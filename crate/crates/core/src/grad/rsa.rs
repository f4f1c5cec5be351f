use super::attention::embed_backward;
use super::check::NamedTensor;
use super::norm::{normalize_rows_backward, normalize_rows_saving};
use crate::baselines::project;
use crate::rsa::reference::{Derived, Terms};
use crate::rsa::RsaParams;
use crate::tensor::matrix::{axpy, dot};
use crate::tensor::{FeatureMap, Matrix, NeighborTable};
use crate::{par, Error, Result};

/// Gradients of `⟨upstream, rsa(x)⟩` with respect to every parameter and the input.
#[derive(Clone, Debug, PartialEq)]
pub struct RsaGrads {
    pub e_q: Matrix<f64>,
    pub e_k: Matrix<f64>,
    pub e_v: Matrix<f64>,
    pub p1: Matrix<f64>,
    pub h1: Matrix<f64>,
    pub h2: Matrix<f64>,
    pub g_ctx: Matrix<f64>,
    pub input: FeatureMap<f64>,
}

impl RsaGrads {
    /// Parameters in canonical order followed by `"x"`.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = crate::rsa::params::PARAM_NAMES
            .iter()
            .zip([
                &self.e_q,
                &self.e_k,
                &self.e_v,
                &self.p1,
                &self.h1,
                &self.h2,
                &self.g_ctx,
            ])
            .map(|(n, m)| NamedTensor::from_matrix(n, m))
            .collect();
        out.push(NamedTensor::from_map("x", &self.input));
        out
    }
}

/// Partial sums over one block of targets.
struct Block {
    dq: Vec<f64>,
    dk_ctx: Vec<f64>,
    dv_ctx: Vec<f64>,
    d_pos: Vec<f64>,
    d_proj: Vec<f64>,
    d_g: Vec<f64>,
}

/// Reverse-mode pass through embedding, normalisation, unfolding, both
/// kernels, both contexts and their product.
pub fn rsa_backward(x: &FeatureMap<f64>, p: &RsaParams<f64>, upstream: &FeatureMap<f64>) -> Result<RsaGrads> {
    crate::rsa::embed_rows(x, p)?; // validates shapes
    let shape = x.shape();
    if upstream.shape() != shape {
        return Err(Error::shape(format!(
            "upstream {:?} vs input {:?}",
            upstream.shape(),
            shape
        )));
    }
    let cfg = p.config;
    let (c, cq, l, m, g) = (
        cfg.channels,
        cfg.query_channels(),
        cfg.queries,
        cfg.window_size(),
        cfg.groups,
    );
    let width = cq / g;
    let rows = shape.batch * shape.positions();

    let mut q = project(x.data(), &p.e_q);
    let mut k = project(x.data(), &p.e_k);
    let mut v = project(x.data(), &p.e_v);
    let norms = cfg.normalize.then(|| {
        (
            normalize_rows_saving(&mut q, cq),
            normalize_rows_saving(&mut k, cq),
            normalize_rows_saving(&mut v, cq),
        )
    });

    let table = NeighborTable::new(&shape, &cfg.window)?;
    let derived = Derived::new(p);
    let dy = upstream.data();

    let n_blocks = rows.div_ceil(par::BLOCK);
    let blocks: Vec<Block> = par::map_indices(n_blocks, |blk| {
        let start = blk * par::BLOCK;
        let end = (start + par::BLOCK).min(rows);
        let count = end - start;
        let mut out = Block {
            dq: vec![0.0; count * c],
            dk_ctx: vec![0.0; count * m * cq],
            dv_ctx: vec![0.0; count * m * cq],
            d_pos: vec![0.0; m * cq],
            d_proj: vec![0.0; m * g * m],
            d_g: vec![0.0; m * cq],
        };
        let mut t = Terms::new(p);
        let mut ctx = vec![0.0; m * cq];
        let mut d_ctx = vec![0.0; m * cq];
        let mut d_s = vec![0.0; m * m];
        let mut d_kappa = vec![0.0; m];
        let mut d_corr = vec![0.0; m * g];
        for (j, i) in (start..end).enumerate() {
            t.fill(p, &derived, &table, &q, &k, &v, i);
            for ((cx, vv), xr) in ctx.iter_mut().zip(&t.values).zip(&t.xr) {
                *cx = vv + xr;
            }
            let dk = &mut out.dk_ctx[j * m * cq..(j + 1) * m * cq];
            let dq = &mut out.dq[j * c..(j + 1) * c];
            d_ctx.iter_mut().for_each(|x| *x = 0.0);

            for ql in 0..l {
                let dy_l = &dy[i * c + ql * cq..i * c + (ql + 1) * cq];
                let q_l = &q[i * c + ql * cq..i * c + (ql + 1) * cq];
                let kv = &t.kv[ql * m..(ql + 1) * m];
                let kr = &t.kr[ql * m..(ql + 1) * m];
                let corr = &t.corr[ql * m * g..(ql + 1) * m * g];
                for (r, dk) in d_kappa.iter_mut().enumerate() {
                    *dk = dot(&ctx[r * cq..(r + 1) * cq], dy_l);
                    axpy(kv[r] + kr[r], dy_l, &mut d_ctx[r * cq..(r + 1) * cq]);
                }
                let dq_l = &mut dq[ql * cq..(ql + 1) * cq];
                // κᵛ = q Pᵀ
                for (r, &dk) in d_kappa.iter().enumerate() {
                    axpy(dk, derived.pos.row(r), dq_l);
                    axpy(dk, q_l, &mut out.d_pos[r * cq..(r + 1) * cq]);
                }
                // κᴿ = corr · H
                for (jj, dc) in d_corr.iter_mut().enumerate() {
                    *dc = dot(derived.proj.row(jj), &d_kappa);
                    axpy(corr[jj], &d_kappa, &mut out.d_proj[jj * m..(jj + 1) * m]);
                }
                // corr[r, grp] = Σ_{c ∈ grp} q_c K[r, c]
                for r in 0..m {
                    let kr_row = &t.keys[r * cq..(r + 1) * cq];
                    let dk_row = &mut dk[r * cq..(r + 1) * cq];
                    for ch in 0..cq {
                        let dcorr = d_corr[r * g + ch / width];
                        dq_l[ch] += dcorr * kr_row[ch];
                        dk_row[ch] += dcorr * q_l[ch];
                    }
                }
            }

            // context = V + (V Vᵀ) G
            let dv = &mut out.dv_ctx[j * m * cq..(j + 1) * m * cq];
            dv.copy_from_slice(&d_ctx);
            for a in 0..m {
                let dxr_a = &d_ctx[a * cq..(a + 1) * cq];
                for b in 0..m {
                    axpy(t.gram[a * m + b], dxr_a, &mut out.d_g[b * cq..(b + 1) * cq]);
                    d_s[a * m + b] = dot(dxr_a, p.g_ctx.row(b));
                }
            }
            for a in 0..m {
                for b in 0..m {
                    let s = d_s[a * m + b] + d_s[b * m + a];
                    axpy(s, &t.values[b * cq..(b + 1) * cq], &mut dv[a * cq..(a + 1) * cq]);
                }
            }
        }
        out
    });

    // deterministic reduction in block order
    let mut dq = Vec::with_capacity(rows * c);
    let mut d_pos = vec![0.0; m * cq];
    let mut d_proj = vec![0.0; m * g * m];
    let mut d_g = vec![0.0; m * cq];
    let mut dk = vec![0.0; rows * cq];
    let mut dv = vec![0.0; rows * cq];
    let n = shape.positions();
    for (blk, b) in blocks.iter().enumerate() {
        dq.extend_from_slice(&b.dq);
        for (acc, part) in [(&mut d_pos, &b.d_pos), (&mut d_proj, &b.d_proj), (&mut d_g, &b.d_g)] {
            acc.iter_mut().zip(part.iter()).for_each(|(a, x)| *a += x);
        }
        for j in 0..b.dq.len() / c {
            let i = blk * par::BLOCK + j;
            let (bb, pos) = (i / n, i % n);
            let rows_b = bb * n * cq..(bb + 1) * n * cq;
            let ctx = j * m * cq..(j + 1) * m * cq;
            table.scatter_add(&b.dk_ctx[ctx.clone()], cq, pos, &mut dk[rows_b.clone()]);
            table.scatter_add(&b.dv_ctx[ctx], cq, pos, &mut dv[rows_b]);
        }
    }

    if let Some((nq, nk, nv)) = &norms {
        normalize_rows_backward(&q, nq, cq, &mut dq);
        normalize_rows_backward(&k, nk, cq, &mut dk);
        normalize_rows_backward(&v, nv, cq, &mut dv);
    }

    // P = H₂ P₁, H = H₁ H₂ᵀ
    let d_pos = Matrix::new(m, cq, d_pos)?;
    let d_proj = Matrix::new(m * g, m, d_proj)?;
    let p1 = p.h2.transpose().matmul(&d_pos)?;
    let mut h2 = d_pos.matmul_t(&p.p1)?;
    let h2_from_proj = d_proj.transpose().matmul(&p.h1)?;
    h2.data_mut()
        .iter_mut()
        .zip(h2_from_proj.data())
        .for_each(|(a, b)| *a += b);
    let h1 = d_proj.matmul(&p.h2)?;

    // embeddings and input
    let xs = x.data();
    let mut dx = vec![0.0; xs.len()];
    let mut e_grads = Vec::with_capacity(3);
    for (e, d) in [(&p.e_q, &dq), (&p.e_k, &dk), (&p.e_v, &dv)] {
        e_grads.push(embed_backward(xs, e, d, &mut dx));
    }
    let e_v = e_grads.pop().unwrap();
    let e_k = e_grads.pop().unwrap();
    let e_q = e_grads.pop().unwrap();

    Ok(RsaGrads {
        e_q,
        e_k,
        e_v,
        p1,
        h1,
        h2,
        g_ctx: Matrix::new(m, cq, d_g)?,
        input: FeatureMap::new(shape, dx)?,
    })
}
