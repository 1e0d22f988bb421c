//! Numerical tools for one-dimensional disordered quantum wires.
//!
//! The crate is organised bottom-up:
//!
//! - [`xfer`]: continuous transfer matrices, scattering amplitudes and their
//!   composition rules.
//! - [`canonical`]: the three-term canonical recursion
//!   `Ψ_{j+1} = J Ψ_j − (K_j/K_{j−1}) Ψ_{j−1}`, its phase/radius map and the
//!   spectral gap criterion.
//! - [`models`]: concrete potential families (tight-binding, delta chains).
//! - [`chain`]: disorder sequences and finite-chain propagation engines.
//! - [`observables`]: Lyapunov exponents, IPR and node-counting DOS on finite
//!   chains.
//! - [`tlsolver`]: per-species phase distribution functions in the
//!   thermodynamic limit, and the localization length and DOS derived from them.

pub mod canonical;
pub mod chain;
mod error;
pub mod models;
pub mod observables;
pub mod tlsolver;
pub mod xfer;

pub use error::{Error, Result};
