use crate::tensor::NORM_EPS;

/// Pulls `d_out` back through `r = u / max(‖u‖, eps)` for one row, given the
/// normalised row `r` and the pre-normalisation norm.
///
/// Above the floor the Jacobian is `(I − r rᵀ) / ‖u‖`, so the result is
/// orthogonal to `r`.
#[inline]
pub fn normalize_backward(r: &[f64], norm: f64, d_out: &[f64], d_in: &mut [f64]) {
    if norm > NORM_EPS {
        let proj: f64 = r.iter().zip(d_out).map(|(a, b)| a * b).sum();
        for ((di, &dr), &ri) in d_in.iter_mut().zip(d_out).zip(r) {
            *di = (dr - ri * proj) / norm;
        }
    } else {
        for (di, &dr) in d_in.iter_mut().zip(d_out) {
            *di = dr / NORM_EPS;
        }
    }
}

/// Normalises rows of width `c` in place and returns their original norms.
pub(crate) fn normalize_rows_saving(rows: &mut [f64], c: usize) -> Vec<f64> {
    rows.chunks_exact_mut(c)
        .map(|r| crate::tensor::l2_normalize(r, NORM_EPS))
        .collect()
}

/// Row-wise [`normalize_backward`] over a stack of rows.
pub(crate) fn normalize_rows_backward(normed: &[f64], norms: &[f64], c: usize, grad: &mut [f64]) {
    let mut tmp = vec![0.0; c];
    for ((r, &n), g) in normed.chunks_exact(c).zip(norms).zip(grad.chunks_exact_mut(c)) {
        normalize_backward(r, n, g, &mut tmp);
        g.copy_from_slice(&tmp);
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::tensor::l2_normalize;

    proptest! {
        #[test]
        fn gradient_is_orthogonal_to_the_row(
            u in proptest::collection::vec(-3.0f64..3.0, 2..9),
            seed in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let mut r = u.clone();
            let norm = l2_normalize(&mut r, NORM_EPS);
            prop_assume!(norm > 1e-3);
            let d_out = &seed[..u.len()];
            let mut d_in = vec![0.0; u.len()];
            normalize_backward(&r, norm, d_out, &mut d_in);
            let along: f64 = d_in.iter().zip(&r).map(|(a, b)| a * b).sum();
            prop_assert!(along.abs() <= 1e-10);
        }

        #[test]
        fn matches_central_differences(u in proptest::collection::vec(0.2f64..2.0, 3), w in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let f = |v: &[f64]| {
                let mut r = v.to_vec();
                l2_normalize(&mut r, NORM_EPS);
                r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut r = u.clone();
            let norm = l2_normalize(&mut r, NORM_EPS);
            let mut d_in = vec![0.0; 3];
            normalize_backward(&r, norm, &w, &mut d_in);
            for i in 0..3 {
                let (mut a, mut b) = (u.clone(), u.clone());
                a[i] += 1e-6;
                b[i] -= 1e-6;
                let fd = (f(&a) - f(&b)) / 2e-6;
                prop_assert!((fd - d_in[i]).abs() < 1e-7);
            }
        }
    }
}
