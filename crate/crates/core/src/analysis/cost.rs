use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rsa::RsaConfig;
use crate::{par, Error, Result};

/// Problem size for the cost model. `window` is the context size `M`
/// itself, so sizes without an odd-extent factorisation can be counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub batch: usize,
    pub time: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub queries: usize,
    pub latent: usize,
    pub groups: usize,
    pub window: usize,
    pub normalize: bool,
}

impl Dims {
    pub fn from_config(batch: usize, time: usize, height: usize, width: usize, cfg: &RsaConfig) -> Self {
        Dims {
            batch,
            time,
            height,
            width,
            channels: cfg.channels,
            queries: cfg.queries,
            latent: cfg.latent,
            groups: cfg.groups,
            window: cfg.window.size(),
            normalize: cfg.normalize,
        }
    }

    pub fn positions(&self) -> usize {
        self.time * self.height * self.width
    }

    pub fn query_channels(&self) -> usize {
        self.channels / self.queries.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("batch", self.batch),
            ("time", self.time),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("queries", self.queries),
            ("latent", self.latent),
            ("groups", self.groups),
            ("window", self.window),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.channels.is_multiple_of(self.queries) {
            return Err(Error::config(format!(
                "{} channels not divisible by {} queries",
                self.channels, self.queries
            )));
        }
        if !self.query_channels().is_multiple_of(self.groups) {
            return Err(Error::config(format!(
                "{} query channels not divisible by {} groups",
                self.query_channels(),
                self.groups
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Impl {
    #[serde(rename = "reference")]
    Reference,
    #[serde(rename = "efficient")]
    Efficient,
    #[serde(rename = "efficient+multiquery")]
    MultiQuery,
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "self-attention")]
    SelfAttention,
    #[serde(rename = "involution")]
    Involution,
    #[serde(rename = "lambda")]
    Lambda,
}

impl Impl {
    pub const ALL: [Impl; 7] = [
        Impl::Reference,
        Impl::Efficient,
        Impl::MultiQuery,
        Impl::Conv,
        Impl::SelfAttention,
        Impl::Involution,
        Impl::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Impl::Reference => "reference",
            Impl::Efficient => "efficient",
            Impl::MultiQuery => "efficient+multiquery",
            Impl::Conv => "conv",
            Impl::SelfAttention => "self-attention",
            Impl::Involution => "involution",
            Impl::Lambda => "lambda",
        }
    }

    pub fn is_rsa(self) -> bool {
        matches!(self, Impl::Reference | Impl::Efficient | Impl::MultiQuery)
    }
}

impl fmt::Display for Impl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Impl {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Impl::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::config(format!("unknown impl {s:?}")))
    }
}

/// Counted cost of one forward evaluation.
///
/// One multiply-add is 2 FLOPs; each softmax exponential and division is 4.
/// `leading_flops` keeps only the terms of highest degree in `M`.
/// `workset` counts elements of every intermediate materialised over the
/// whole batch, excluding inputs, outputs and parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops: u64,
    pub leading_flops: u64,
    pub params: u64,
    pub workset: u64,
}

/// Exact counters for the contraction sequence each implementation runs.
pub fn cost_report(dims: &Dims, imp: Impl) -> Result<CostReport> {
    let (b, n, c, m) = (
        dims.batch as u64,
        dims.positions() as u64,
        dims.channels as u64,
        dims.window as u64,
    );
    if imp.is_rsa() {
        dims.validate()?;
    } else if [b, n, c, m].contains(&0) {
        return Err(Error::config("dims must be positive"));
    }
    let bn = b * n;
    let (l, q, d, g) = (
        dims.queries as u64,
        dims.query_channels() as u64,
        dims.latent as u64,
        dims.groups as u64,
    );
    // sum of squares plus one division per element
    let norm = |len: u64| if dims.normalize { 3 * len } else { 0 };
    let rsa_embed = bn * (2 * c * c + 4 * c * q) + norm(bn * (c + 2 * q));
    let rsa_params = c * c + 2 * c * q + d * q + m * g * d + m * d + m * q;
    let embedded = bn * (c + 2 * q);

    let report = match imp {
        Impl::Reference => {
            let derived = 2 * m * d * q + 2 * m * g * d * m;
            let per_target = 4 * m * m * q + m * q + l * (6 * m * q + 2 * m * m * g + m);
            CostReport {
                flops: rsa_embed + derived + bn * per_target,
                leading_flops: bn * (4 * m * m * q + 2 * l * m * m * g) + 2 * m * m * g * d,
                params: rsa_params,
                workset: embedded
                    + 2 * bn * m * q
                    + bn * m * m
                    + 2 * bn * m * q
                    + bn * l * (3 * m + m * g)
                    + m * q
                    + m * m * g,
            }
        }
        Impl::Efficient | Impl::MultiQuery => {
            let builds = if imp == Impl::MultiQuery { 1 } else { l };
            let factors = 4 * m * q * d + 2 * m * q * q;
            let per_query = 4 * q * d + 2 * q * q;
            CostReport {
                flops: rsa_embed + bn * (builds * factors + l * per_query),
                leading_flops: bn * builds * factors,
                params: rsa_params,
                workset: embedded + bn * builds * (2 * q * d + q * q) + bn * l * (d + q),
            }
        }
        Impl::Conv => CostReport {
            flops: 2 * bn * m * c * c,
            leading_flops: 2 * bn * m * c * c,
            params: m * c * c,
            workset: bn * m * c,
        },
        Impl::SelfAttention => {
            let per_target = 6 * m * c + 8 * m;
            CostReport {
                flops: 6 * bn * c * c + norm(3 * bn * c) + bn * per_target,
                leading_flops: bn * per_target,
                params: 3 * c * c + m * c,
                workset: 3 * bn * c + 2 * bn * m * c + bn * m,
            }
        }
        Impl::Involution => CostReport {
            flops: 4 * bn * m * c,
            leading_flops: 4 * bn * m * c,
            params: m * c,
            workset: bn * m * c + bn * m,
        },
        Impl::Lambda => CostReport {
            flops: 4 * bn * c * c + bn * (2 * m * c * c + 2 * c * c),
            leading_flops: 2 * bn * m * c * c,
            params: 2 * c * c + m * c,
            workset: 2 * bn * c + bn * m * c + bn * c * c,
        },
    };
    Ok(report)
}

/// Counter evaluation over many configurations, in parallel.
pub fn cost_sweep(cases: &[(Dims, Impl)]) -> Vec<Result<CostReport>> {
    par::map_indices(cases.len(), |i| cost_report(&cases[i].0, cases[i].1))
}
