//! Reverse-mode gradients and central-difference verification.
//!
//! Gradients are `f64` only. The RSA backward differentiates the literal
//! computation graph; the factorised forward is value-equal to it, so the
//! same gradients serve both paths.

mod attention;
mod check;
mod norm;
mod rsa;

pub(crate) use attention::embed_backward;
pub use attention::{involution_backward, sa_backward, InvolutionGrads, SaGrads};
pub use check::{
    finite_diff_check, rsa_gradcheck, CheckOptions, ForwardPath, GradReport, NamedTensor, ParamReport, RsaGradCase,
};
pub use norm::normalize_backward;
pub use rsa::{rsa_backward, RsaGrads};
