mod common;

use common::{max_abs, random_map, random_matrix, spec};
use proptest::prelude::*;
use rsa_core::baselines::*;
use rsa_core::tensor::{softmax, unfold, ContextTensor, GridShape, Matrix};

fn grid(c: usize) -> GridShape {
    GridShape::new(1, 3, 4, 4, c)
}

#[test]
fn delta_kernel_convolution_is_identity() {
    let s = spec(3, 3, 3);
    let (m, c) = (s.size(), 3);
    let mut w = Matrix::zeros(m * c, c);
    for ch in 0..c {
        w.set(s.center() * c + ch, ch, 1.0);
    }
    let x = random_map(grid(c), 1);
    let y = convolution(&x, &s, &ConvParams { weight: w }).unwrap();
    assert_eq!(y.data(), x.data());
    let zero = convolution(
        &x,
        &s,
        &ConvParams {
            weight: Matrix::zeros(m * c, 2),
        },
    )
    .unwrap();
    assert_eq!(zero.shape().channels, 2);
    assert!(zero.data().iter().all(|&v| v == 0.0));
}

#[test]
fn convolution_rejects_bad_weight() {
    let x = random_map(grid(2), 0);
    assert!(convolution(
        &x,
        &spec(3, 3, 3),
        &ConvParams {
            weight: Matrix::zeros(5, 2)
        }
    )
    .is_err());
}

#[test]
fn position_only_attention_without_softmax_is_involution_on_embeddings() {
    let s = spec(3, 3, 3);
    let c = 3;
    let x = random_map(grid(c), 2);
    let flags = SaFlags {
        use_content: false,
        use_position: true,
        use_softmax: false,
        normalize: false,
    };
    let mut p = SaParams::random(c, s.size(), flags, 4);
    p.e_q = Matrix::identity(c);
    let sa = self_attention(&x, &s, &p).unwrap();
    let inv = involution(&x, &s, &InvolutionParams { pos: p.pos.clone() }).unwrap();
    let ev = &p.e_v;
    let rows = inv
        .data()
        .chunks(c)
        .flat_map(|r| (0..c).map(move |j| (0..c).map(|k| r[k] * ev.get(k, j)).sum::<f64>()));
    let expected: Vec<f64> = rows.collect();
    assert!(max_abs(sa.data(), &expected) <= 1e-12);
}

#[test]
fn both_flags_off_is_rejected() {
    let flags = SaFlags {
        use_content: false,
        use_position: false,
        use_softmax: true,
        normalize: false,
    };
    let p = SaParams::random(2, 27, flags, 0);
    assert!(self_attention(&random_map(grid(2), 0), &spec(3, 3, 3), &p).is_err());
}

#[test]
fn involution_zero_cases() {
    let s = spec(3, 3, 3);
    let x = random_map(grid(2), 3);
    let y = involution(
        &x,
        &s,
        &InvolutionParams {
            pos: Matrix::zeros(27, 2),
        },
    )
    .unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
    let targets = vec![0.0; 2];
    let ctx = ContextTensor::from_raw(1, 1, 2, 2, vec![1.0, 1.0, 2.0, 2.0]).unwrap();
    let p = InvolutionParams {
        pos: Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
    };
    assert_eq!(involution_context(&targets, &ctx, &p).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn lambda_with_identity_embeddings_is_involution() {
    let s = spec(3, 3, 3);
    let c = 3;
    let x = random_map(grid(c), 5);
    let pos = random_matrix(s.size(), c, 6);
    let lp = LambdaParams {
        e_q: Matrix::identity(c),
        e_v: Matrix::identity(c),
        pos: pos.clone(),
    };
    let a = lambda_conv(&x, &s, &lp).unwrap();
    let b = involution(&x, &s, &InvolutionParams { pos }).unwrap();
    assert!(max_abs(a.data(), b.data()) <= 1e-12);
    let zero = LambdaParams {
        pos: Matrix::zeros(s.size(), c),
        ..lp
    };
    assert!(lambda_conv(&x, &s, &zero).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn lambda_association_orders_agree() {
    let s = spec(3, 1, 3);
    let c = 4;
    let x = random_map(grid(c), 7);
    let p = LambdaParams::random(c, s.size(), 8);
    let y = lambda_conv(&x, &s, &p).unwrap();
    let ctx = unfold(&x, &s).unwrap();
    let ev = &p.e_v;
    for n in 0..x.shape().positions() {
        let q: Vec<f64> = (0..c)
            .map(|j| (0..c).map(|k| x.row(0, n)[k] * p.e_q.get(k, j)).sum())
            .collect();
        let raw = ctx.context(0, n);
        let v: Vec<f64> = raw
            .chunks(c)
            .flat_map(|r| (0..c).map(move |j| (0..c).map(|k| r[k] * ev.get(k, j)).sum::<f64>()))
            .collect();
        let kern: Vec<f64> = (0..s.size())
            .map(|m| (0..c).map(|k| q[k] * p.pos.get(m, k)).sum())
            .collect();
        let first: Vec<f64> = (0..c)
            .map(|j| (0..s.size()).map(|m| kern[m] * v[m * c + j]).sum())
            .collect();
        assert!(max_abs(&first, y.row(0, n)) <= 1e-12);
    }
}

#[test]
fn superposition_in_context_for_fixed_kernels() {
    let (m, c) = (3, 2);
    let targets = vec![0.3, -1.1];
    let a = ContextTensor::from_raw(1, 1, m, c, vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap();
    let b = ContextTensor::from_raw(1, 1, m, c, vec![0.0, -2.0, 4.0, 1.5, -3.0, 2.0]).unwrap();
    let sum = ContextTensor::from_raw(1, 1, m, c, a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
    let inv = InvolutionParams {
        pos: random_matrix(m, c, 1),
    };
    let conv = ConvParams {
        weight: random_matrix(m * c, c, 2),
    };
    let ia = involution_context(&targets, &a, &inv).unwrap();
    let ib = involution_context(&targets, &b, &inv).unwrap();
    let is = involution_context(&targets, &sum, &inv).unwrap();
    let ca = convolution_context(&a, &conv).unwrap();
    let cb = convolution_context(&b, &conv).unwrap();
    let cs = convolution_context(&sum, &conv).unwrap();
    for k in 0..c {
        assert!((ia.data()[k] + ib.data()[k] - is.data()[k]).abs() <= 1e-12);
        assert!((ca.data()[k] + cb.data()[k] - cs.data()[k]).abs() <= 1e-12);
    }
}

fn permuted(ctx: &ContextTensor<f64>, perm: &[usize]) -> ContextTensor<f64> {
    let c = ctx.channels();
    let rows: Vec<f64> = perm
        .iter()
        .flat_map(|&r| ctx.context(0, 0)[r * c..(r + 1) * c].to_vec())
        .collect();
    ContextTensor::from_raw(1, 1, ctx.window(), c, rows).unwrap()
}

#[test]
fn position_term_breaks_permutation_symmetry() {
    let (m, c) = (5, 3);
    let ctx = ContextTensor::from_raw(1, 1, m, c, random_matrix(m, c, 3).into_data()).unwrap();
    let targets = random_matrix(1, c, 4).into_data();
    let p = SaParams::random(c, m, SaFlags::FULL, 5);
    let a = self_attention_context(&targets, &ctx, &p).unwrap();
    let b = self_attention_context(&targets, &permuted(&ctx, &[4, 3, 2, 1, 0]), &p).unwrap();
    assert!(max_abs(a.data(), b.data()) > 1e-6);
}

#[test]
fn softmax_kernels_positive_and_normalised_raw_kernels_signed() {
    let (m, c) = (6, 4);
    let q = random_matrix(1, c, 1).into_data();
    let keys = random_matrix(m, c, 2).into_data();
    let pos = random_matrix(m, c, 3);
    let mut k = vec![0.0; m];
    attention_kernel(&q, &keys, &pos, SaFlags::FULL, &mut k);
    assert!(k.iter().all(|&v| v > 0.0));
    assert!((k.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let raw = SaFlags {
        use_softmax: false,
        ..SaFlags::FULL
    };
    attention_kernel(&q, &keys, &pos, raw, &mut k);
    assert!(k.iter().any(|&v| v < 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn content_only_attention_is_permutation_invariant(seed in 0u64..10_000, shift in 1usize..7) {
        let (m, c) = (7, 3);
        let ctx = ContextTensor::from_raw(1, 1, m, c, random_matrix(m, c, seed).into_data()).unwrap();
        let targets = random_matrix(1, c, seed + 1).into_data();
        let p = SaParams::random(c, m, SaFlags::CONTENT, seed + 2);
        let perm: Vec<usize> = (0..m).map(|i| (i * 3 + shift) % m).collect();
        let a = self_attention_context(&targets, &ctx, &p).unwrap();
        let b = self_attention_context(&targets, &permuted(&ctx, &perm), &p).unwrap();
        prop_assert!(max_abs(a.data(), b.data()) <= 1e-12);
    }

    #[test]
    fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
        let s = softmax(&v);
        prop_assert!(s.iter().all(|&x| x >= 0.0));
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
