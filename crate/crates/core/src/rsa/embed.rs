use super::RsaParams;
use crate::baselines::{normalize_rows, project};
use crate::tensor::{unfold_with, ContextTensor, FeatureMap, NeighborTable};
use crate::{Error, Real, Result};

/// Per-position embeddings before unfolding.
#[derive(Clone, Debug)]
pub struct EmbeddedRows<T> {
    /// `[B·N, L, C_Q]`: `x_n E_Q` split into `L` contiguous sub-queries.
    pub queries: Vec<T>,
    /// `[B·N, C_Q]`
    pub keys: Vec<T>,
    /// `[B·N, C_Q]`
    pub values: Vec<T>,
}

/// Queries plus unfolded key/value contexts.
#[derive(Clone, Debug)]
pub struct Embedded<T> {
    /// `[B, N, L, C_Q]`
    pub queries: Vec<T>,
    /// `[B, N, M, C_Q]`
    pub keys: ContextTensor<T>,
    /// `[B, N, M, C_Q]`
    pub values: ContextTensor<T>,
}

pub(crate) fn check_input<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<()> {
    p.validate()?;
    if x.shape().channels != p.config.channels {
        return Err(Error::shape(format!(
            "input has {} channels, RSA layer expects {}",
            x.shape().channels,
            p.config.channels
        )));
    }
    p.config.window.check_grid(&x.shape())
}

/// Embeds every position. Unfolding commutes with the row-wise embedding
/// and normalisation (padding rows are zero either way), so keys and values
/// are embedded once per position rather than once per context row.
pub fn embed_rows<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<EmbeddedRows<T>> {
    check_input(x, p)?;
    let cq = p.config.query_channels();
    let mut queries = project(x.data(), &p.e_q);
    let mut keys = project(x.data(), &p.e_k);
    let mut values = project(x.data(), &p.e_v);
    if p.config.normalize {
        normalize_rows(&mut queries, cq);
        normalize_rows(&mut keys, cq);
        normalize_rows(&mut values, cq);
    }
    Ok(EmbeddedRows { queries, keys, values })
}

pub fn embed<T: Real>(x: &FeatureMap<T>, p: &RsaParams<T>) -> Result<Embedded<T>> {
    let rows = embed_rows(x, p)?;
    let table = NeighborTable::new(&x.shape(), &p.config.window)?;
    let (b, cq) = (x.shape().batch, p.config.query_channels());
    Ok(Embedded {
        keys: unfold_with(&rows.keys, b, cq, &table),
        values: unfold_with(&rows.values, b, cq, &table),
        queries: rows.queries,
    })
}
