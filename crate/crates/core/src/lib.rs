//! Quasimodes, spectral flow and scarring diagnostics for small Fourier
//! perturbations of integrable Hamiltonians on `T² × D`.

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diophantine;
pub mod error;
pub mod exec;
pub mod hamiltonian;
pub mod montecarlo;
pub mod normal_form;
pub mod pipeline;
pub mod poly;
pub mod quantize;
pub mod scarring;
pub mod spectral_flow;

pub use error::{Error, Result};
pub use hamiltonian::{Domain, FourierPolyHamiltonian, FourierPolySymbol, Wave};
