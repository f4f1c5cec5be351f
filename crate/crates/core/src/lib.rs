//! Relational self-attention (RSA) laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense feature maps, neighbourhood unfolding, normalisation,
//!   softmax and a small einsum-style contraction.
//! * [`baselines`]: convolution, self-attention, involution and lambda
//!   convolution over the same unfolded-context abstraction.
//! * [`rsa`]: the literal RSA forward pass ([`rsa::reference`]) and the
//!   factorised, order-switched path ([`rsa::efficient`]).
//! * [`grad`]: analytic reverse-mode gradients and a central-difference checker.
//! * [`analysis`]: exact FLOP / parameter / working-set counters and a timing harness.
//! * [`probe`]: a synthetic moving-bar task that separates order-aware and
//!   order-blind transforms.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results are
//! bitwise identical in both modes.

pub mod analysis;
pub mod baselines;
mod error;
pub mod grad;
pub mod par;
pub mod probe;
mod real;
pub mod rsa;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
