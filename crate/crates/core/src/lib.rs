//! Simulation and numerical verification toolkit for the anisotropic stable
//! JCIR process
//!
//! ```text
//! dX_k = (b_k + Σ_j β_kj X_j) dt + (σ_k X_k)^{1/α_k} dZ_k + dJ_k
//! ```
//!
//! where `Z_k` are independent spectrally positive α_k-stable processes and
//! `J` is a subordinator on the nonnegative orthant.

// `!(x > 0.0)` guards deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod ergodic;
pub mod error;
pub mod exec;
pub mod levy_rng;
pub mod model;
pub mod numerics;
pub mod riccati;
pub mod simulator;

pub use error::{Error, Result};
pub use exec::Exec;
