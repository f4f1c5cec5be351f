use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rsa::rsa_backward;
use crate::rsa::params::PARAM_NAMES;
use crate::rsa::{multi_query_forward, rsa_forward_fast, rsa_forward_reference, RsaConfig, RsaParams};
use crate::tensor::{derive_seed, seeded, FeatureMap, GridShape, Matrix, NeighborhoodSpec};
use crate::{par, Error, Result};

/// A named flat `f64` buffer with its logical shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        NamedTensor {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn from_matrix(name: &str, m: &Matrix<f64>) -> Self {
        NamedTensor::new(name, vec![m.rows(), m.cols()], m.data().to_vec())
    }

    pub fn from_map(name: &str, x: &FeatureMap<f64>) -> Self {
        let s = x.shape();
        NamedTensor::new(
            name,
            vec![s.batch, s.time, s.height, s.width, s.channels],
            x.data().to_vec(),
        )
    }

    pub fn to_matrix(&self) -> Result<Matrix<f64>> {
        match self.shape[..] {
            [r, c] => Matrix::new(r, c, self.data.clone()),
            _ => Err(Error::shape(format!("{} is not a matrix: {:?}", self.name, self.shape))),
        }
    }

    pub fn to_map(&self) -> Result<FeatureMap<f64>> {
        match self.shape[..] {
            [b, t, h, w, c] => FeatureMap::new(GridShape::new(b, t, h, w, c), self.data.clone()),
            _ => Err(Error::shape(format!(
                "{} is not a feature map: {:?}",
                self.name, self.shape
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Central-difference step, within `[1e-7, 1e-3]`.
    pub eps: f64,
    /// Coordinates checked per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-5,
            coords_per_tensor: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub coords: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub eps: f64,
    pub params: Vec<ParamReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= tol)
    }

    pub fn get(&self, name: &str) -> Option<&ParamReport> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Compares `analytic` against central differences of the scalar `f`.
///
/// For each tensor the checked coordinates are the entry with the largest
/// analytic magnitude plus a seeded random subsample. Relative error uses
/// `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn finite_diff_check<F>(
    f: F,
    params: &[NamedTensor],
    analytic: &[NamedTensor],
    opts: &CheckOptions,
) -> Result<GradReport>
where
    F: Fn(&[NamedTensor]) -> Result<f64> + Sync,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::config(format!("eps {} outside [1e-7, 1e-3]", opts.eps)));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape("parameter and gradient lists differ in length"));
    }
    let mut jobs = Vec::new();
    for (t, (p, a)) in params.iter().zip(analytic).enumerate() {
        if p.data.len() != a.data.len() {
            return Err(Error::shape(format!("gradient for {} has wrong size", p.name)));
        }
        let len = p.data.len();
        let mut coords: Vec<usize> = if len <= opts.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut rng = seeded(derive_seed(opts.seed, t as u64));
            sample(&mut rng, len, opts.coords_per_tensor).into_vec()
        };
        if let Some(top) = (0..len).max_by(|&i, &j| a.data[i].abs().total_cmp(&a.data[j].abs())) {
            if !coords.contains(&top) {
                coords.push(top);
            }
        }
        coords.sort_unstable();
        jobs.extend(coords.into_iter().map(|i| (t, i)));
    }

    let eval = |t: usize, i: usize, delta: f64| -> Result<f64> {
        let mut shifted = params.to_vec();
        shifted[t].data[i] += delta;
        let v = f(&shifted)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective at {}[{i}]", params[t].name)));
        }
        Ok(v)
    };
    let numeric: Vec<Result<f64>> = par::map_indices(jobs.len(), |j| {
        let (t, i) = jobs[j];
        Ok((eval(t, i, opts.eps)? - eval(t, i, -opts.eps)?) / (2.0 * opts.eps))
    });

    let mut reports: Vec<ParamReport> = params
        .iter()
        .map(|p| ParamReport {
            name: p.name.clone(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            coords: 0,
        })
        .collect();
    for (&(t, i), num) in jobs.iter().zip(numeric) {
        let num = num?;
        let ana = analytic[t].data[i];
        let abs = (ana - num).abs();
        let rel = abs / ana.abs().max(num.abs()).max(1e-8);
        let r = &mut reports[t];
        r.max_abs_err = r.max_abs_err.max(abs);
        r.max_rel_err = r.max_rel_err.max(rel);
        r.coords += 1;
    }
    Ok(GradReport {
        eps: opts.eps,
        params: reports,
    })
}

/// Forward implementation differentiated numerically in a gradient check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardPath {
    #[default]
    Reference,
    Fast,
    MultiQuery,
}

impl std::str::FromStr for ForwardPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(ForwardPath::Reference),
            "fast" => Ok(ForwardPath::Fast),
            "multi-query" => Ok(ForwardPath::MultiQuery),
            _ => Err(Error::config(format!("unknown forward path {s:?}"))),
        }
    }
}

/// A seeded RSA gradient-check problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsaGradCase {
    pub config: RsaConfig,
    pub grid: GridShape,
    pub seed: u64,
}

impl Default for RsaGradCase {
    /// `C=6, L=2, D=2, M=3×1×1` on a `3×3×3` grid with Hadamard correlation.
    fn default() -> Self {
        RsaGradCase {
            config: RsaConfig {
                channels: 6,
                queries: 2,
                latent: 2,
                groups: 3,
                normalize: true,
                window: NeighborhoodSpec::new(3, 1, 1).unwrap(),
            },
            grid: GridShape::new(1, 3, 3, 3, 6),
            seed: 0,
        }
    }
}

/// Smallest norm over every embedded row that gets L2-normalised.
fn min_embedded_norm(x: &FeatureMap<f64>, p: &RsaParams<f64>) -> f64 {
    let cq = p.config.query_channels();
    let mut min = f64::INFINITY;
    for (e, width) in [(&p.e_q, cq), (&p.e_k, cq), (&p.e_v, cq)] {
        let rows = crate::baselines::project(x.data(), e);
        for r in rows.chunks_exact(width) {
            min = min.min(r.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    min
}

impl RsaGradCase {
    /// Parameters, input and upstream cotangent. The input is redrawn until
    /// every normalised row has norm at least 0.1.
    pub fn instance(&self) -> Result<(RsaParams<f64>, FeatureMap<f64>, FeatureMap<f64>)> {
        let grid = self.grid.with_channels(self.config.channels);
        let p = RsaParams::random(self.config, derive_seed(self.seed, 1))?;
        let draw = |seed: u64| {
            let mut rng = seeded(seed);
            let data = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            FeatureMap::new(grid, data)
        };
        let mut attempt = 0;
        let x = loop {
            let x = draw(derive_seed(self.seed, 100 + attempt))?;
            if !self.config.normalize || min_embedded_norm(&x, &p) >= 0.1 {
                break x;
            }
            attempt += 1;
            if attempt > 1000 {
                return Err(Error::config("could not draw an input bounded away from zero norm"));
            }
        };
        let upstream = draw(derive_seed(self.seed, 2))?;
        Ok((p, x, upstream))
    }
}

fn unpack(config: RsaConfig, named: &[NamedTensor]) -> Result<(RsaParams<f64>, FeatureMap<f64>)> {
    let mut p = RsaParams::zeros(config)?;
    for (m, t) in p.matrices_mut().into_iter().zip(named) {
        *m = t.to_matrix()?;
    }
    p.validate()?;
    Ok((p, named[PARAM_NAMES.len()].to_map()?))
}

/// Checks [`rsa_backward`] against central differences of `path`.
///
/// With `corrupt` set, the largest-magnitude entry of the analytic `E_Q`
/// gradient is sign-flipped first; the report must then fail.
pub fn rsa_gradcheck(case: &RsaGradCase, path: ForwardPath, opts: &CheckOptions, corrupt: bool) -> Result<GradReport> {
    let (p, x, upstream) = case.instance()?;
    let mut analytic = rsa_backward(&x, &p, &upstream)?.to_named();
    if corrupt {
        let eq = &mut analytic[0].data;
        let top = (0..eq.len())
            .max_by(|&i, &j| eq[i].abs().total_cmp(&eq[j].abs()))
            .unwrap();
        eq[top] = -eq[top];
    }
    let mut params: Vec<NamedTensor> = PARAM_NAMES
        .iter()
        .zip(p.matrices())
        .map(|(n, m)| NamedTensor::from_matrix(n, m))
        .collect();
    params.push(NamedTensor::from_map("x", &x));
    let objective = |named: &[NamedTensor]| -> Result<f64> {
        let (p, x) = unpack(case.config, named)?;
        let y = match path {
            ForwardPath::Reference => rsa_forward_reference(&x, &p)?,
            ForwardPath::Fast => rsa_forward_fast(&x, &p)?,
            ForwardPath::MultiQuery => multi_query_forward(&x, &p)?,
        };
        Ok(y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
    };
    finite_diff_check(objective, &params, &analytic, opts)
}
