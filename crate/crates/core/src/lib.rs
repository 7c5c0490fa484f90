//! Tensor product representations (TPRs) and their continuous relaxation,
//! the Soft TPR.
//!
//! The crate is `no_std` and only needs an allocator. It contains the whole
//! algorithmic pipeline:
//!
//! - [`linalg`]: dense vectors and matrices, the role-major tensor product,
//!   semi-orthogonal initialization and left inverses.
//! - [`tpr`]: role spaces, filler codebooks, explicit TPR composition,
//!   unbinding and filler swapping.
//! - [`soft`]: greedy and brute-force quantization of Soft TPRs and the
//!   VQ codebook/commitment loss.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices, Adam and a
//!   finite-difference gradient checker.
//! - [`model`]: the Soft TPR autoencoder and its unsupervised and weakly
//!   supervised objectives.
//! - [`dataset`]: a synthetic compositional data generator with a
//!   match-pair sampler.
//! - [`metrics`]: FactorVAE, DCI, BetaVAE and MIG scores on quantized
//!   filler indices.
//! - [`probe`]: downstream regression probes, R² and sample efficiency.
//!
//! File formats, configuration parsing and the command line live in the
//! `softtpr` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod dataset;
mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod rng;
pub mod soft;
pub mod tpr;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use rng::SeededRng;
