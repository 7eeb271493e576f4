//! Transient circuit simulation with exponential Rosenbrock-Euler integration.
//!
//! The engine assembles a modified-nodal-analysis system `C x' = -G x + F(x) + B u(t)`
//! and marches it in time with either
//!
//! - **ER / ER-C**: exponential Rosenbrock-Euler steps whose matrix exponentials are
//!   evaluated in an *invert* Krylov subspace built from `-G^{-1} C`, so only `G` is
//!   ever factorized (once per step) and `C` may be singular, or
//! - **BENR**: backward Euler solved by Newton-Raphson, refactorizing `C/h + G`
//!   every iteration.
//!
//! The crate is `no_std` and only needs `alloc`. Parsing, file formats and the
//! command line live in the companion `exprb` crate.
#![no_std]

extern crate alloc;

pub mod circuit;
pub mod dense;
pub mod devices;
mod error;
pub mod integrate;
pub mod krylov;
pub mod lu;
pub(crate) mod math;
pub mod sparse;

pub use circuit::{Circuit, Element, MnaSystem, SimOptions, SourceWaveform};
pub use dense::DenseMatrix;
pub use devices::Linearization;
pub use error::{Error, Result};
pub use integrate::{Method, StepControl, StepRecord, TransientResult};
pub use krylov::{KrylovBasis, MevpConfig};
pub use lu::Factorization;
pub use sparse::CsrMatrix;
