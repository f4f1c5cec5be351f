use super::norm::{normalize_rows_backward, normalize_rows_saving};
use crate::baselines::{attention_kernel, project, InvolutionParams, SaParams};
use crate::tensor::matrix::{axpy, dot};
use crate::tensor::{FeatureMap, Matrix, NeighborTable, NeighborhoodSpec};
use crate::{par, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SaGrads {
    pub e_q: Matrix<f64>,
    pub e_k: Matrix<f64>,
    pub e_v: Matrix<f64>,
    pub pos: Matrix<f64>,
    pub input: FeatureMap<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvolutionGrads {
    pub pos: Matrix<f64>,
    pub input: FeatureMap<f64>,
}

struct SaBlock {
    dq: Vec<f64>,
    dk_ctx: Vec<f64>,
    dv_ctx: Vec<f64>,
    d_pos: Vec<f64>,
}

/// Gradients of `⟨upstream, self_attention(x)⟩`.
pub fn sa_backward(
    x: &FeatureMap<f64>,
    spec: &NeighborhoodSpec,
    p: &SaParams<f64>,
    upstream: &FeatureMap<f64>,
) -> Result<SaGrads> {
    // forward validates shapes and flags
    crate::baselines::self_attention(x, spec, p)?;
    let shape = x.shape();
    if upstream.shape() != shape {
        return Err(Error::shape("upstream does not match input"));
    }
    let (c, m) = (shape.channels, spec.size());
    let rows = shape.batch * shape.positions();
    let n = shape.positions();
    let flags = p.flags;
    let content = if flags.use_content { 1.0 } else { 0.0 };
    let position = if flags.use_position { 1.0 } else { 0.0 };

    let mut q = project(x.data(), &p.e_q);
    let mut k = project(x.data(), &p.e_k);
    let mut v = project(x.data(), &p.e_v);
    let norms = flags.normalize.then(|| {
        (
            normalize_rows_saving(&mut q, c),
            normalize_rows_saving(&mut k, c),
            normalize_rows_saving(&mut v, c),
        )
    });
    let table = NeighborTable::new(&shape, spec)?;
    let dy = upstream.data();

    let blocks: Vec<SaBlock> = par::map_indices(rows.div_ceil(par::BLOCK), |blk| {
        let start = blk * par::BLOCK;
        let end = (start + par::BLOCK).min(rows);
        let mut out = SaBlock {
            dq: vec![0.0; (end - start) * c],
            dk_ctx: vec![0.0; (end - start) * m * c],
            dv_ctx: vec![0.0; (end - start) * m * c],
            d_pos: vec![0.0; m * c],
        };
        let mut keys = vec![0.0; m * c];
        let mut vals = vec![0.0; m * c];
        let mut a = vec![0.0; m];
        let mut ds = vec![0.0; m];
        for (j, i) in (start..end).enumerate() {
            let (b, pos) = (i / n, i % n);
            table.gather(&k[b * n * c..(b + 1) * n * c], c, pos, &mut keys);
            table.gather(&v[b * n * c..(b + 1) * n * c], c, pos, &mut vals);
            let qi = &q[i * c..(i + 1) * c];
            let dyi = &dy[i * c..(i + 1) * c];
            attention_kernel(qi, &keys, &p.pos, flags, &mut a);
            let dvc = &mut out.dv_ctx[j * m * c..(j + 1) * m * c];
            for r in 0..m {
                ds[r] = dot(dyi, &vals[r * c..(r + 1) * c]);
                axpy(a[r], dyi, &mut dvc[r * c..(r + 1) * c]);
            }
            if flags.use_softmax {
                let mean: f64 = a.iter().zip(&ds).map(|(x, y)| x * y).sum();
                for (d, &ar) in ds.iter_mut().zip(&a) {
                    *d = ar * (*d - mean);
                }
            }
            let dq = &mut out.dq[j * c..(j + 1) * c];
            let dkc = &mut out.dk_ctx[j * m * c..(j + 1) * m * c];
            for r in 0..m {
                if flags.use_content {
                    axpy(content * ds[r], &keys[r * c..(r + 1) * c], dq);
                    axpy(content * ds[r], qi, &mut dkc[r * c..(r + 1) * c]);
                }
                if flags.use_position {
                    axpy(position * ds[r], p.pos.row(r), dq);
                    axpy(position * ds[r], qi, &mut out.d_pos[r * c..(r + 1) * c]);
                }
            }
        }
        out
    });

    let mut dq = Vec::with_capacity(rows * c);
    let mut dk = vec![0.0; rows * c];
    let mut dv = vec![0.0; rows * c];
    let mut d_pos = vec![0.0; m * c];
    for (blk, b) in blocks.iter().enumerate() {
        dq.extend_from_slice(&b.dq);
        d_pos.iter_mut().zip(&b.d_pos).for_each(|(a, x)| *a += x);
        for j in 0..b.dq.len() / c {
            let i = blk * par::BLOCK + j;
            let (bb, pos) = (i / n, i % n);
            let ctx = j * m * c..(j + 1) * m * c;
            let rb = bb * n * c..(bb + 1) * n * c;
            table.scatter_add(&b.dk_ctx[ctx.clone()], c, pos, &mut dk[rb.clone()]);
            table.scatter_add(&b.dv_ctx[ctx], c, pos, &mut dv[rb]);
        }
    }
    if let Some((nq, nk, nv)) = &norms {
        normalize_rows_backward(&q, nq, c, &mut dq);
        normalize_rows_backward(&k, nk, c, &mut dk);
        normalize_rows_backward(&v, nv, c, &mut dv);
    }

    let xs = x.data();
    let mut dx = vec![0.0; xs.len()];
    let mut grads = Vec::with_capacity(3);
    for (e, d) in [(&p.e_q, &dq), (&p.e_k, &dk), (&p.e_v, &dv)] {
        grads.push(embed_backward(xs, e, d, &mut dx));
    }
    let e_v = grads.pop().unwrap();
    let e_k = grads.pop().unwrap();
    let e_q = grads.pop().unwrap();
    Ok(SaGrads {
        e_q,
        e_k,
        e_v,
        pos: Matrix::new(m, c, d_pos)?,
        input: FeatureMap::new(shape, dx)?,
    })
}

/// For `y = x E`: returns `dE = xᵀ dy` and adds `dy Eᵀ` into `dx`.
pub(crate) fn embed_backward(xs: &[f64], e: &Matrix<f64>, dy: &[f64], dx: &mut [f64]) -> Matrix<f64> {
    let (cin, cout) = e.dims();
    let mut de = Matrix::zeros(cin, cout);
    for (xi, (di, dxi)) in xs
        .chunks_exact(cin)
        .zip(dy.chunks_exact(cout).zip(dx.chunks_exact_mut(cin)))
    {
        for (a, &xa) in xi.iter().enumerate() {
            axpy(xa, di, &mut de.data_mut()[a * cout..(a + 1) * cout]);
            dxi[a] += dot(e.row(a), di);
        }
    }
    de
}

/// Gradients of `⟨upstream, involution(x)⟩`.
pub fn involution_backward(
    x: &FeatureMap<f64>,
    spec: &NeighborhoodSpec,
    p: &InvolutionParams<f64>,
    upstream: &FeatureMap<f64>,
) -> Result<InvolutionGrads> {
    crate::baselines::involution(x, spec, p)?;
    let shape = x.shape();
    if upstream.shape() != shape {
        return Err(Error::shape("upstream does not match input"));
    }
    let (c, m, n) = (shape.channels, spec.size(), shape.positions());
    let rows = shape.batch * n;
    let table = NeighborTable::new(&shape, spec)?;
    let xs = x.data();
    let dy = upstream.data();

    // (d_target, d_ctx, d_pos) per block
    let blocks: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = par::map_indices(rows.div_ceil(par::BLOCK), |blk| {
        let start = blk * par::BLOCK;
        let end = (start + par::BLOCK).min(rows);
        let mut dt = vec![0.0; (end - start) * c];
        let mut dctx = vec![0.0; (end - start) * m * c];
        let mut d_pos = vec![0.0; m * c];
        let mut ctx = vec![0.0; m * c];
        for (j, i) in (start..end).enumerate() {
            let (b, pos) = (i / n, i % n);
            table.gather(&xs[b * n * c..(b + 1) * n * c], c, pos, &mut ctx);
            let xi = &xs[i * c..(i + 1) * c];
            let dyi = &dy[i * c..(i + 1) * c];
            for r in 0..m {
                let kappa = dot(xi, p.pos.row(r));
                let dk = dot(dyi, &ctx[r * c..(r + 1) * c]);
                axpy(kappa, dyi, &mut dctx[(j * m + r) * c..(j * m + r + 1) * c]);
                axpy(dk, p.pos.row(r), &mut dt[j * c..(j + 1) * c]);
                axpy(dk, xi, &mut d_pos[r * c..(r + 1) * c]);
            }
        }
        (dt, dctx, d_pos)
    });

    let mut dx = Vec::with_capacity(rows * c);
    let mut d_pos = vec![0.0; m * c];
    for (dt, _, dp) in &blocks {
        dx.extend_from_slice(dt);
        d_pos.iter_mut().zip(dp).for_each(|(a, x)| *a += x);
    }
    for (blk, (dt, dctx, _)) in blocks.iter().enumerate() {
        for j in 0..dt.len() / c {
            let i = blk * par::BLOCK + j;
            let (b, pos) = (i / n, i % n);
            table.scatter_add(
                &dctx[j * m * c..(j + 1) * m * c],
                c,
                pos,
                &mut dx[b * n * c..(b + 1) * n * c],
            );
        }
    }
    Ok(InvolutionGrads {
        pos: Matrix::new(m, c, d_pos)?,
        input: FeatureMap::new(shape, dx)?,
    })
}
