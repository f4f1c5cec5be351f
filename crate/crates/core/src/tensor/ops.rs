use crate::Real;

/// Floor on the row norm used by L2 normalisation.
pub const NORM_EPS: f64 = 1e-12;

/// Scales `row` by `1 / max(‖row‖₂, eps)` in place and returns the norm.
#[inline]
pub fn l2_normalize<T: Real>(row: &mut [T], eps: T) -> T {
    let norm = row.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt();
    let denom = norm.max(eps);
    row.iter_mut().for_each(|v| *v = *v / denom);
    norm
}

/// Normalises every length-`c` row of `a`.
pub fn l2_normalize_rows<T: Real>(a: &[T], c: usize, eps: T) -> Vec<T> {
    assert!(
        c > 0 && a.len().is_multiple_of(c),
        "row length {c} does not divide {}",
        a.len()
    );
    let mut out = a.to_vec();
    out.chunks_exact_mut(c).for_each(|row| {
        l2_normalize(row, eps);
    });
    out
}

/// Max-shifted softmax in place.
#[inline]
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    v.iter_mut().for_each(|x| *x = *x * inv);
}

pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    out
}
