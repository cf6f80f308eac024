//! Reverse-mode differentiation over dense matrix expressions, plus Adam.
//!
//! The tape is eager: every operation computes its value when recorded, and
//! [`Tape::gradient`] sweeps the recorded nodes backwards. Parameters live in
//! model structs implementing [`Parameterized`] and are bound to the tape by
//! name.

mod adam;
pub mod gradcheck;
pub mod linalg;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use tape::{softplus, Bindings, Gradients, NamedGradients, Parameterized, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("parameter `{0}` is not bound on this tape")]
    UnboundParameter(String),
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { node: usize, op: &'static str },
    #[error("output has shape {0:?}, expected a scalar")]
    NotScalar((usize, usize)),
    #[error("gradient requested before the output was evaluated")]
    BackwardBeforeForward,
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("Cholesky factorization of a {size}x{size} matrix failed at maximum jitter")]
    Cholesky { size: usize },
}

/// Stable checksum over parameter values (bit patterns), optionally
/// restricted to names accepted by `filter`.
pub fn param_checksum(p: &dyn Parameterized, filter: impl Fn(&str) -> bool) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    p.visit_params(&mut |name, v| {
        if filter(name) {
            name.hash(&mut h);
            v.shape().hash(&mut h);
            for x in v.iter() {
                x.to_bits().hash(&mut h);
            }
        }
    });
    h.finish()
}
