//! Consensus-on-only-measurement distributed filtering (COMDF) over directed
//! sensor networks.
//!
//! Each sensor runs a Kalman-style update driven by its own consensus estimate
//! of the network's stacked measurement vector. Only measurement estimates are
//! exchanged between neighbours; the gain `K` is computed once, offline.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense kernel (Kronecker products, spectra, DARE/DLE solvers)
//! - [`graph`]: directed topology, Laplacian, connectivity checks
//! - [`model`]: plant and sensor suite
//! - [`consensus`]: consensus gains, fusion matrix `G`, the fusion rounds, `l0`
//! - [`filter`]: the online distributed filter bank and the centralized filter
//! - [`analysis`]: closed-loop error system, covariance recursions, gap sweeps
//! - [`sim`]: seeded trajectories and Monte Carlo MSE
//! - [`scenario`]: the JSON scenario file format

pub mod analysis;
pub mod consensus;
mod error;
pub mod filter;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
