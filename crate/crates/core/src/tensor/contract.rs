//! Einstein-summation contraction of two dense tensors.

use crate::{Error, Real, Result};

/// Row-major dense tensor of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "tensor {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }
}

struct Spec {
    a: Vec<u8>,
    b: Vec<u8>,
    out: Vec<u8>,
}

fn parse(spec: &str) -> Result<Spec> {
    let bad = || Error::shape(format!("bad contraction spec {spec:?}"));
    let (lhs, out) = spec.split_once("->").ok_or_else(bad)?;
    let (a, b) = lhs.split_once(',').ok_or_else(bad)?;
    let labels = |s: &str| -> Result<Vec<u8>> {
        let s = s.trim();
        if s.bytes().all(|c| c.is_ascii_alphabetic()) {
            Ok(s.bytes().collect())
        } else {
            Err(bad())
        }
    };
    let (a, b, out) = (labels(a)?, labels(b)?, labels(out)?);
    for &l in &out {
        if !a.contains(&l) && !b.contains(&l) {
            return Err(Error::shape(format!("output label {:?} absent from inputs", l as char)));
        }
        if out.iter().filter(|&&o| o == l).count() > 1 {
            return Err(bad());
        }
    }
    Ok(Spec { a, b, out })
}

/// Contracts `a` and `b` according to an einsum spec such as `"ij,jk->ik"`.
///
/// Labels absent from the output are summed. Summation visits the contracted
/// labels in first-appearance order with the last one fastest, so a given
/// build always produces the same bits.
pub fn contract<T: Real>(a: &Tensor<T>, b: &Tensor<T>, spec: &str) -> Result<Tensor<T>> {
    let spec = parse(spec)?;
    if spec.a.len() != a.shape.len() || spec.b.len() != b.shape.len() {
        return Err(Error::shape("contraction spec rank does not match operands"));
    }

    // label -> extent, checking agreement
    let mut labels: Vec<u8> = Vec::new();
    let mut extent: Vec<usize> = Vec::new();
    for (l, d) in spec.a.iter().zip(&a.shape).chain(spec.b.iter().zip(&b.shape)) {
        match labels.iter().position(|x| x == l) {
            Some(i) if extent[i] != *d => {
                return Err(Error::shape(format!(
                    "label {:?} has extents {} and {}",
                    *l as char, extent[i], d
                )))
            }
            Some(_) => {}
            None => {
                labels.push(*l);
                extent.push(*d);
            }
        }
    }
    let summed: Vec<usize> = (0..labels.len()).filter(|&i| !spec.out.contains(&labels[i])).collect();
    let free: Vec<usize> = spec
        .out
        .iter()
        .map(|l| labels.iter().position(|x| x == l).unwrap())
        .collect();

    let strides = |ls: &[u8], shape: &[usize]| -> Vec<usize> {
        // stride of each global label inside this operand (sum for repeated labels)
        let mut own = vec![0usize; shape.len()];
        let mut s = 1;
        for i in (0..shape.len()).rev() {
            own[i] = s;
            s *= shape[i];
        }
        labels
            .iter()
            .map(|g| ls.iter().zip(&own).filter(|(l, _)| *l == g).map(|(_, s)| *s).sum())
            .collect()
    };
    let sa = strides(&spec.a, &a.shape);
    let sb = strides(&spec.b, &b.shape);

    let out_shape: Vec<usize> = free.iter().map(|&i| extent[i]).collect();
    let out_len: usize = out_shape.iter().product();
    let sum_len: usize = summed.iter().map(|&i| extent[i]).product();
    let mut out = Vec::with_capacity(out_len);

    let mut free_idx = vec![0usize; free.len()];
    let mut sum_idx = vec![0usize; summed.len()];
    for _ in 0..out_len {
        let base_a: usize = free.iter().zip(&free_idx).map(|(&l, &i)| sa[l] * i).sum();
        let base_b: usize = free.iter().zip(&free_idx).map(|(&l, &i)| sb[l] * i).sum();
        let mut acc = T::zero();
        sum_idx.iter_mut().for_each(|v| *v = 0);
        for _ in 0..sum_len {
            let oa: usize = summed.iter().zip(&sum_idx).map(|(&l, &i)| sa[l] * i).sum();
            let ob: usize = summed.iter().zip(&sum_idx).map(|(&l, &i)| sb[l] * i).sum();
            acc = acc + a.data[base_a + oa] * b.data[base_b + ob];
            odometer(&mut sum_idx, summed.iter().map(|&l| extent[l]));
        }
        out.push(acc);
        odometer(&mut free_idx, free.iter().map(|&l| extent[l]));
    }
    Tensor::new(out_shape, out)
}

fn odometer(idx: &mut [usize], extents: impl DoubleEndedIterator<Item = usize> + ExactSizeIterator) {
    for (i, e) in idx.iter_mut().zip(extents).rev() {
        *i += 1;
        if *i < e {
            return;
        }
        *i = 0;
    }
}
