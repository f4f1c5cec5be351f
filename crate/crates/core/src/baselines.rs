//! Comparison transforms over unfolded contexts: convolution, self-attention
//! (with content/position/softmax/normalisation switches), involution and
//! lambda convolution.
//!
//! Each transform has a map-level entry point that embeds targets before
//! gathering contexts, and a `*_context` variant over an explicit
//! [`ContextTensor`] so hand-built contexts of any size can be checked.

use serde::{Deserialize, Serialize};

use crate::tensor::matrix::{axpy, dot};
use crate::tensor::{
    l2_normalize, seeded, softmax_in_place, unfold, ContextTensor, FeatureMap, Matrix, NeighborTable, NeighborhoodSpec,
};
use crate::{par, Error, Real, Result};

/// Static kernel `W ∈ R^{M·C_in × C_out}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Matrix<T>,
}

/// Switches selecting one of the self-attention variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaFlags {
    pub use_content: bool,
    pub use_position: bool,
    pub use_softmax: bool,
    pub normalize: bool,
}

impl SaFlags {
    /// Softmax attention over query–key products only.
    pub const CONTENT: SaFlags = SaFlags {
        use_content: true,
        use_position: false,
        use_softmax: true,
        normalize: true,
    };
    /// Softmax attention with both interaction terms.
    pub const FULL: SaFlags = SaFlags {
        use_content: true,
        use_position: true,
        use_softmax: true,
        normalize: true,
    };

    pub fn validate(&self) -> Result<()> {
        if !self.use_content && !self.use_position {
            return Err(Error::config("self-attention needs content or position interaction"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaParams<T> {
    pub e_q: Matrix<T>,
    pub e_k: Matrix<T>,
    pub e_v: Matrix<T>,
    /// Relative-position embedding `P ∈ R^{M×C}`.
    pub pos: Matrix<T>,
    pub flags: SaFlags,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvolutionParams<T> {
    pub pos: Matrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaParams<T> {
    pub e_q: Matrix<T>,
    pub e_v: Matrix<T>,
    pub pos: Matrix<T>,
}

impl<T: Real> ConvParams<T> {
    /// He-normal weights for `M·C_in` inputs.
    pub fn random(c_in: usize, c_out: usize, window: usize, seed: u64) -> Self {
        let std = (2.0 / (window * c_in) as f64).sqrt();
        ConvParams {
            weight: Matrix::random_normal(window * c_in, c_out, std, &mut seeded(seed)),
        }
    }
}

impl<T: Real> SaParams<T> {
    /// Normal embeddings with `std = 1/√C` and `U(±1/√C)` position rows.
    pub fn random(c: usize, window: usize, flags: SaFlags, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let std = 1.0 / (c as f64).sqrt();
        SaParams {
            e_q: Matrix::random_normal(c, c, std, &mut rng),
            e_k: Matrix::random_normal(c, c, std, &mut rng),
            e_v: Matrix::random_normal(c, c, std, &mut rng),
            pos: Matrix::random_uniform(window, c, std, &mut rng),
            flags,
        }
    }
}

impl<T: Real> InvolutionParams<T> {
    pub fn random(c: usize, window: usize, seed: u64) -> Self {
        InvolutionParams {
            pos: Matrix::random_uniform(window, c, 1.0 / (c as f64).sqrt(), &mut seeded(seed)),
        }
    }
}

impl<T: Real> LambdaParams<T> {
    pub fn random(c: usize, window: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let std = 1.0 / (c as f64).sqrt();
        LambdaParams {
            e_q: Matrix::random_normal(c, c, std, &mut rng),
            e_v: Matrix::random_normal(c, c, std, &mut rng),
            pos: Matrix::random_uniform(window, c, std, &mut rng),
        }
    }
}

/// `rows · e` for a stack of length-`e.rows()` rows.
pub(crate) fn project<T: Real>(rows: &[T], e: &Matrix<T>) -> Vec<T> {
    let (cin, cout) = e.dims();
    let count = rows.len() / cin;
    let mut out = vec![T::zero(); count * cout];
    par::for_each_chunk(&mut out, cout * 64, |i, chunk| {
        for (j, dst) in chunk.chunks_exact_mut(cout).enumerate() {
            let r = i * 64 + j;
            for (k, &a) in rows[r * cin..(r + 1) * cin].iter().enumerate() {
                axpy(a, e.row(k), dst);
            }
        }
    });
    out
}

pub(crate) fn normalize_rows<T: Real>(rows: &mut [T], c: usize) {
    let eps = T::lit(crate::tensor::NORM_EPS);
    rows.chunks_exact_mut(c).for_each(|r| {
        l2_normalize(r, eps);
    });
}

fn check_rows(what: &str, m: &Matrix<impl Real>, rows: usize, cols: usize) -> Result<()> {
    if m.dims() != (rows, cols) {
        return Err(Error::shape(format!(
            "{what} is {:?}, expected ({rows}, {cols})",
            m.dims()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- convolution

/// `y_n = Wᵀ vec(X_n)` with `vec` taken row-major over `[M, C_in]`.
pub fn convolution<T: Real>(x: &FeatureMap<T>, spec: &NeighborhoodSpec, p: &ConvParams<T>) -> Result<FeatureMap<T>> {
    let ctx = unfold(x, spec)?;
    let out = convolution_context(&ctx, p)?;
    Ok(FeatureMap::from_parts(
        x.shape().with_channels(out.cols()),
        out.into_data(),
    ))
}

pub fn convolution_context<T: Real>(ctx: &ContextTensor<T>, p: &ConvParams<T>) -> Result<Matrix<T>> {
    let k = ctx.window() * ctx.channels();
    if p.weight.rows() != k {
        return Err(Error::shape(format!(
            "conv weight has {} rows, context needs {k}",
            p.weight.rows()
        )));
    }
    let cout = p.weight.cols();
    let rows = ctx.batch() * ctx.positions();
    let mut out = vec![T::zero(); rows * cout];
    par::for_each_chunk(&mut out, cout, |i, dst| {
        let (b, n) = (i / ctx.positions(), i % ctx.positions());
        for (j, &a) in ctx.context(b, n).iter().enumerate() {
            axpy(a, p.weight.row(j), dst);
        }
    });
    Matrix::new(rows, cout, out)
}

// ------------------------------------------------------------- self-attention

/// Attention logits or weights for one target: `act(c·q Kᵀ + p·q Pᵀ)`.
pub fn attention_kernel<T: Real>(q: &[T], keys: &[T], pos: &Matrix<T>, flags: SaFlags, out: &mut [T]) {
    let c = q.len();
    for (m, o) in out.iter_mut().enumerate() {
        let mut s = T::zero();
        if flags.use_content {
            s = s + dot(q, &keys[m * c..(m + 1) * c]);
        }
        if flags.use_position {
            s = s + dot(q, pos.row(m));
        }
        *o = s;
    }
    if flags.use_softmax {
        softmax_in_place(out);
    }
}

fn aggregate<T: Real>(kernel: &[T], values: &[T], out: &mut [T]) {
    let c = out.len();
    out.iter_mut().for_each(|v| *v = T::zero());
    for (m, &k) in kernel.iter().enumerate() {
        axpy(k, &values[m * c..(m + 1) * c], out);
    }
}

fn check_sa<T: Real>(p: &SaParams<T>, c: usize, m: usize) -> Result<()> {
    p.flags.validate()?;
    check_rows("E_Q", &p.e_q, c, c)?;
    check_rows("E_K", &p.e_k, c, c)?;
    check_rows("E_V", &p.e_v, c, c)?;
    check_rows("P", &p.pos, m, c)
}

pub fn self_attention<T: Real>(x: &FeatureMap<T>, spec: &NeighborhoodSpec, p: &SaParams<T>) -> Result<FeatureMap<T>> {
    let shape = x.shape();
    let (c, m) = (shape.channels, spec.size());
    check_sa(p, c, m)?;
    let table = NeighborTable::new(&shape, spec)?;
    let mut q = project(x.data(), &p.e_q);
    let mut k = project(x.data(), &p.e_k);
    let mut v = project(x.data(), &p.e_v);
    if p.flags.normalize {
        for rows in [&mut q, &mut k, &mut v] {
            normalize_rows(rows, c);
        }
    }
    let n = shape.positions();
    let mut out = vec![T::zero(); x.data().len()];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, pos) = (i / n, i % n);
        let base = b * n * c;
        let mut keys = vec![T::zero(); m * c];
        let mut vals = vec![T::zero(); m * c];
        let mut kern = vec![T::zero(); m];
        table.gather(&k[base..base + n * c], c, pos, &mut keys);
        table.gather(&v[base..base + n * c], c, pos, &mut vals);
        attention_kernel(&q[i * c..(i + 1) * c], &keys, &p.pos, p.flags, &mut kern);
        aggregate(&kern, &vals, dst);
    });
    Ok(FeatureMap::from_parts(shape, out))
}

/// Attention weights of target `(b, n)`, one per context row.
pub fn sa_kernel_at<T: Real>(
    x: &FeatureMap<T>,
    spec: &NeighborhoodSpec,
    p: &SaParams<T>,
    b: usize,
    n: usize,
) -> Result<Vec<T>> {
    let shape = x.shape();
    let (c, m) = (shape.channels, spec.size());
    check_sa(p, c, m)?;
    check_target(&shape, b, n)?;
    let table = NeighborTable::new(&shape, spec)?;
    let np = shape.positions();
    let batch = &x.data()[b * np * c..(b + 1) * np * c];
    let mut q = project(x.row(b, n), &p.e_q);
    let mut k = project(batch, &p.e_k);
    if p.flags.normalize {
        normalize_rows(&mut q, c);
        normalize_rows(&mut k, c);
    }
    let mut keys = vec![T::zero(); m * c];
    table.gather(&k, c, n, &mut keys);
    let mut kern = vec![T::zero(); m];
    attention_kernel(&q, &keys, &p.pos, p.flags, &mut kern);
    Ok(kern)
}

fn check_target(shape: &crate::tensor::GridShape, b: usize, n: usize) -> Result<()> {
    if b >= shape.batch || n >= shape.positions() {
        return Err(Error::shape(format!("target ({b}, {n}) outside {shape:?}")));
    }
    Ok(())
}

/// Self-attention over explicit targets `[B·N, C]` and raw contexts.
pub fn self_attention_context<T: Real>(targets: &[T], ctx: &ContextTensor<T>, p: &SaParams<T>) -> Result<Matrix<T>> {
    let (c, m) = (ctx.channels(), ctx.window());
    check_sa(p, c, m)?;
    let rows = ctx.batch() * ctx.positions();
    if targets.len() != rows * c {
        return Err(Error::shape("targets do not match context batch"));
    }
    let mut q = project(targets, &p.e_q);
    if p.flags.normalize {
        normalize_rows(&mut q, c);
    }
    let mut out = vec![T::zero(); rows * c];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, n) = (i / ctx.positions(), i % ctx.positions());
        let raw = ctx.context(b, n);
        let mut keys = project(raw, &p.e_k);
        let mut vals = project(raw, &p.e_v);
        if p.flags.normalize {
            normalize_rows(&mut keys, c);
            normalize_rows(&mut vals, c);
        }
        let mut kern = vec![T::zero(); m];
        attention_kernel(&q[i * c..(i + 1) * c], &keys, &p.pos, p.flags, &mut kern);
        aggregate(&kern, &vals, dst);
    });
    Matrix::new(rows, c, out)
}

// ------------------------------------------------------------------ involution

/// `y_n = x_n Pᵀ X_n`.
pub fn involution<T: Real>(
    x: &FeatureMap<T>,
    spec: &NeighborhoodSpec,
    p: &InvolutionParams<T>,
) -> Result<FeatureMap<T>> {
    let shape = x.shape();
    let (c, m) = (shape.channels, spec.size());
    check_rows("P", &p.pos, m, c)?;
    let table = NeighborTable::new(&shape, spec)?;
    let n = shape.positions();
    let mut out = vec![T::zero(); x.data().len()];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, pos) = (i / n, i % n);
        let base = b * n * c;
        let mut ctx = vec![T::zero(); m * c];
        table.gather(&x.data()[base..base + n * c], c, pos, &mut ctx);
        let target = &x.data()[i * c..(i + 1) * c];
        let kern: Vec<T> = (0..m).map(|j| dot(target, p.pos.row(j))).collect();
        aggregate(&kern, &ctx, dst);
    });
    Ok(FeatureMap::from_parts(shape, out))
}

/// Involution weights `x_n Pᵀ` of target `(b, n)`.
pub fn involution_kernel_at<T: Real>(x: &FeatureMap<T>, p: &InvolutionParams<T>, b: usize, n: usize) -> Result<Vec<T>> {
    let shape = x.shape();
    check_rows("P", &p.pos, p.pos.rows(), shape.channels)?;
    check_target(&shape, b, n)?;
    let target = x.row(b, n);
    Ok((0..p.pos.rows()).map(|j| dot(target, p.pos.row(j))).collect())
}

pub fn involution_context<T: Real>(
    targets: &[T],
    ctx: &ContextTensor<T>,
    p: &InvolutionParams<T>,
) -> Result<Matrix<T>> {
    let (c, m) = (ctx.channels(), ctx.window());
    check_rows("P", &p.pos, m, c)?;
    let rows = ctx.batch() * ctx.positions();
    if targets.len() != rows * c {
        return Err(Error::shape("targets do not match context batch"));
    }
    let mut out = vec![T::zero(); rows * c];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, n) = (i / ctx.positions(), i % ctx.positions());
        let target = &targets[i * c..(i + 1) * c];
        let kern: Vec<T> = (0..m).map(|j| dot(target, p.pos.row(j))).collect();
        aggregate(&kern, ctx.context(b, n), dst);
    });
    Matrix::new(rows, c, out)
}

// ------------------------------------------------------------------ lambda conv

/// `y_n = x_nᵠ λ_n` with the position lambda `λ_n = Pᵀ X_nⱽ`.
pub fn lambda_conv<T: Real>(x: &FeatureMap<T>, spec: &NeighborhoodSpec, p: &LambdaParams<T>) -> Result<FeatureMap<T>> {
    let shape = x.shape();
    let (c, m) = (shape.channels, spec.size());
    check_rows("E_Q", &p.e_q, c, c)?;
    check_rows("E_V", &p.e_v, c, c)?;
    check_rows("P", &p.pos, m, c)?;
    let table = NeighborTable::new(&shape, spec)?;
    let q = project(x.data(), &p.e_q);
    let v = project(x.data(), &p.e_v);
    let n = shape.positions();
    let mut out = vec![T::zero(); x.data().len()];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, pos) = (i / n, i % n);
        let base = b * n * c;
        let mut vals = vec![T::zero(); m * c];
        table.gather(&v[base..base + n * c], c, pos, &mut vals);
        lambda_position(&q[i * c..(i + 1) * c], &vals, &p.pos, dst);
    });
    Ok(FeatureMap::from_parts(shape, out))
}

/// Lambda step for one target. `λ[c', c] = Σ_m P[m, c'] V[m, c]`.
fn lambda_position<T: Real>(q: &[T], vals: &[T], pos: &Matrix<T>, out: &mut [T]) {
    let c = q.len();
    let mut lambda = vec![T::zero(); c * c];
    for m in 0..pos.rows() {
        let v = &vals[m * c..(m + 1) * c];
        for (ci, &pw) in pos.row(m).iter().enumerate() {
            axpy(pw, v, &mut lambda[ci * c..(ci + 1) * c]);
        }
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    for (ci, &qc) in q.iter().enumerate() {
        axpy(qc, &lambda[ci * c..(ci + 1) * c], out);
    }
}

pub fn lambda_context<T: Real>(targets: &[T], ctx: &ContextTensor<T>, p: &LambdaParams<T>) -> Result<Matrix<T>> {
    let (c, m) = (ctx.channels(), ctx.window());
    check_rows("P", &p.pos, m, c)?;
    let rows = ctx.batch() * ctx.positions();
    if targets.len() != rows * c {
        return Err(Error::shape("targets do not match context batch"));
    }
    let q = project(targets, &p.e_q);
    let mut out = vec![T::zero(); rows * c];
    par::for_each_chunk(&mut out, c, |i, dst| {
        let (b, n) = (i / ctx.positions(), i % ctx.positions());
        let vals = project(ctx.context(b, n), &p.e_v);
        lambda_position(&q[i * c..(i + 1) * c], &vals, &p.pos, dst);
    });
    Matrix::new(rows, c, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx1(m: usize, c: usize, data: &[f64]) -> ContextTensor<f64> {
        ContextTensor::from_raw(1, 1, m, c, data.to_vec()).unwrap()
    }

    fn plain(c: usize, m: usize, flags: SaFlags) -> SaParams<f64> {
        SaParams {
            e_q: Matrix::identity(c),
            e_k: Matrix::identity(c),
            e_v: Matrix::identity(c),
            pos: Matrix::zeros(m, c),
            flags,
        }
    }

    #[test]
    fn conv_difference_kernel() {
        // M = 2, C = 1, W = [[1], [-1]] on [a, b] → a - b
        let p = ConvParams {
            weight: Matrix::from_rows(&[&[1.0], &[-1.0]]).unwrap(),
        };
        let out = convolution_context(&ctx1(2, 1, &[5.0, 3.5]), &p).unwrap();
        assert_eq!(out.data(), &[1.5]);
    }

    #[test]
    fn conv_zero_weight_gives_zero() {
        let spec = NeighborhoodSpec::new(3, 3, 3).unwrap();
        let x = FeatureMap::<f64>::from_fn(crate::tensor::GridShape::new(1, 3, 3, 3, 2), |_, t, h, w, c| {
            (t + h * w + c) as f64
        })
        .unwrap();
        let p = ConvParams {
            weight: Matrix::zeros(27 * 2, 3),
        };
        let y = convolution(&x, &spec, &p).unwrap();
        assert_eq!(y.shape().channels, 3);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_wrong_weight_rows() {
        let p = ConvParams {
            weight: Matrix::zeros(3, 1),
        };
        assert!(convolution_context(&ctx1(2, 1, &[1.0, 2.0]), &p).is_err());
    }

    #[test]
    fn content_softmax_example() {
        let p = plain(
            2,
            2,
            SaFlags {
                normalize: false,
                ..SaFlags::CONTENT
            },
        );
        let keys = [1.0, 0.0, 0.0, 1.0];
        let mut kern = [0.0; 2];
        attention_kernel(&[1.0, 0.0], &keys, &p.pos, p.flags, &mut kern);
        let vals = [2.0, 0.0, 0.0, 2.0];
        let mut y = [0.0; 2];
        aggregate(&kern, &vals, &mut y);
        assert!((y[0] - 1.462117).abs() < 1e-6 && (y[1] - 0.537883).abs() < 1e-6);
        // swapping context rows leaves y unchanged
        let mut kern2 = [0.0; 2];
        attention_kernel(&[1.0, 0.0], &[0.0, 1.0, 1.0, 0.0], &p.pos, p.flags, &mut kern2);
        let mut y2 = [0.0; 2];
        aggregate(&kern2, &[0.0, 2.0, 2.0, 0.0], &mut y2);
        assert!((y[0] - y2[0]).abs() < 1e-15 && (y[1] - y2[1]).abs() < 1e-15);
    }

    #[test]
    fn context_entry_point_matches_example() {
        // E = identity, context rows double as K and V after embedding; use
        // E_V = 2·I so that V = [[2,0],[0,2]] while K = I.
        let mut p = plain(
            2,
            2,
            SaFlags {
                normalize: false,
                ..SaFlags::CONTENT
            },
        );
        p.e_v.scale(2.0);
        let y = self_attention_context(&[1.0, 0.0], &ctx1(2, 2, &[1.0, 0.0, 0.0, 1.0]), &p).unwrap();
        assert!((y.get(0, 0) - 1.462117).abs() < 1e-6);
    }

    #[test]
    fn both_interactions_off_is_rejected() {
        let p = plain(
            2,
            2,
            SaFlags {
                use_content: false,
                use_position: false,
                use_softmax: true,
                normalize: false,
            },
        );
        assert!(self_attention_context(&[1.0, 0.0], &ctx1(2, 2, &[0.0; 4]), &p).is_err());
    }

    #[test]
    fn involution_hand_example() {
        // x = [1,0], P = [[1,2],[3,4]], X = [[1,1],[2,2]] → kernel [1,3], y = [7,7]
        let p = InvolutionParams {
            pos: Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
        };
        let y = involution_context(&[1.0, 0.0], &ctx1(2, 2, &[1.0, 1.0, 2.0, 2.0]), &p).unwrap();
        assert_eq!(y.data(), &[7.0, 7.0]);
        let zero = InvolutionParams {
            pos: Matrix::zeros(2, 2),
        };
        assert_eq!(
            involution_context(&[1.0, 0.0], &ctx1(2, 2, &[1.0, 1.0, 2.0, 2.0]), &zero)
                .unwrap()
                .data(),
            &[0.0, 0.0]
        );
        assert_eq!(
            involution_context(&[0.0, 0.0], &ctx1(2, 2, &[1.0, 1.0, 2.0, 2.0]), &p)
                .unwrap()
                .data(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn lambda_with_zero_position_is_zero() {
        let p = LambdaParams {
            e_q: Matrix::identity(2),
            e_v: Matrix::identity(2),
            pos: Matrix::zeros(2, 2),
        };
        let y = lambda_context(&[1.0, 2.0], &ctx1(2, 2, &[1.0, 1.0, 2.0, 2.0]), &p).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }
}
