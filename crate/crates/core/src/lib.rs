//! Maximum-entropy (Ruelle-Bowen) random walks on strongly connected
//! directed graphs.
//!
//! The crate builds the discrete-time walk `P = (1/λ) diag(φ)⁻¹ A diag(φ)`
//! and its continuous-time counterpart `Q = diag(φ)⁻¹ A diag(φ) − λI`,
//! evaluates the entropy-rate functionals of both, simulates the jump
//! process, and provides numerical certificates for the optimality and
//! path-equalization properties of the construction.
//!
//! ```
//! use rbwalk::{fixtures, spectral, chain};
//!
//! let g = fixtures::complete(3);
//! let perron = spectral::perron(&g, &spectral::PerronOptions::default()).unwrap();
//! let q = chain::build_rb_generator(&perron, &g).unwrap();
//! let h = chain::differential_entropy_rate(&q, &chain::EntropyConfig::default());
//! assert!((h - 2.0).abs() < 1e-10);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the matrix formulas.
#![allow(clippy::needless_range_loop)]

pub mod chain;
pub mod cli;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod graph;
pub mod jump;
pub mod output;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use chain::{DiscreteChain, EntropyConfig, Generator};
pub use error::{Error, Result};
pub use exec::Execution;
pub use graph::{DirectedGraph, GraphMode, ValidationReport};
pub use jump::{EmbeddedChain, Trajectory};
pub use spectral::PerronData;
