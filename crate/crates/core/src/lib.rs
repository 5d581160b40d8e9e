//! Sample-based incremental detectability (i-IOSS) of discrete-time systems.
//!
//! The crate checks, falsifies and synthesizes bounds of the form
//! `|Δx(t)| ≤ β(|Δx₀|, t) ⊕ γ₁(sup |Δw|) ⊕ γ₂(sup |Δy|)` where the output
//! supremum may run over an irregular set of sampling instants.

pub mod certify;
pub mod compfn;
pub mod error;
pub mod sampling;
pub mod synth;
pub mod sysmodel;

pub use error::{Error, Result};
