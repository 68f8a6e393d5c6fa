//! Hypercubic quantization hashing.
//!
//! Points are centered, projected onto a `c`-dimensional principal subspace
//! (batch PCA or an OPAST tracker), rotated, and quantized to signs:
//! `b = sign(R W (x − μ))`. The rotation balances the projected variances
//! ([`rotation::unifdiag_fit`], [`rotation::isohash_fit`]) or minimizes
//! quantization loss ([`rotation::itq_fit`]).
//!
//! [`hashing`] builds and persists models, [`eval`] runs retrieval
//! experiments, [`theory`] checks the sketch bounds by Monte-Carlo and
//! [`data`] loads and synthesizes datasets.

pub mod code;
pub mod covariance;
pub mod data;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod rotation;
pub mod seed;
pub mod subspace;
pub mod theory;
