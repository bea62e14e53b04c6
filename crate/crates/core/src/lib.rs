//! Hybrid residual-CNN / variational-quantum-circuit image classifier.
//!
//! The pipeline is `image → residual CNN → f (d features) → linear projection
//! → z (n angles) → π·tanh → data re-uploading circuit on n simulated qubits →
//! q = ⟨Z_i⟩ → linear head on [f, q] → logit`. Everything, including the
//! statevector simulator and the autodiff tape, lives in this crate.

pub mod autodiff;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod oracle;
pub mod params;
pub mod pqc;
pub mod qsim;
pub mod rng;
pub mod run;
pub mod selfcheck;
pub mod train;

pub use error::{Error, Result};
