//! Relational self-attention.
//!
//! Both evaluation paths share [`RsaParams`] and the embedding step:
//!
//! * [`reference`] multiplies the factors out (`P = H₂P₁`, `H = H₁H₂ᵀ`) and
//!   evaluates `(κᵛ + κᴿ)(Xᵛ + Xᴿ)` literally, which costs `O(M²)` per target.
//! * [`efficient`] keeps the factors apart and reorders the contractions to
//!   `q (P₁ᵀ + Xᴷ ⊛ r(H₁)) (H₂ᵀ Xᵛ) (I + Xᵛᵀ G)`, which is linear in `M`.

pub mod efficient;
mod embed;
pub(crate) mod params;
pub mod reference;

pub use efficient::{kernel_fast, multi_query_forward, rsa_forward_fast, ReshapedH1};
pub use embed::{embed, embed_rows, Embedded, EmbeddedRows};
pub use params::{RsaConfig, RsaParams};
pub use reference::{
    basic_kernel, kernels_at, relational_context, relational_kernel, rsa_forward_reference, rsa_subtransforms,
    KernelPair, SubTransforms,
};
