//! Differentiable architecture search at desk scale.
//!
//! The crate trains weight-sharing supernets over a small cell search space and
//! compares two ways of turning the trained supernet into a discrete
//! architecture: picking the operation with the largest architecture weight
//! (magnitude selection) and picking the operation whose removal hurts the
//! supernet most (perturbation selection). An exhaustive benchmark of every
//! architecture in the space serves as the ground truth.
//!
//! Module map:
//!
//! - [`autodiff`]: dense tensors, a reverse-mode tape, gradient checking and optimizers.
//! - [`searchspace`]: cell DAGs, operation pools, genotypes and their enumeration.
//! - [`supernet`]: the continuously relaxed network plus masking, discretization and pruning.
//! - [`trainer`]: datasets, bilevel training, fine-tuning and from-scratch training.
//! - [`selection`]: magnitude, perturbation and hybrid selection backends.
//! - [`analysis`]: variance-optimal mixing weights and the diagnostic experiments.
//! - [`bench`]: the exhaustive ground-truth database.
//! - [`toy`]: the default small setup used by the CLI and the tests.

pub mod analysis;
pub mod autodiff;
pub mod bench;
pub mod error;
pub mod rng;
pub mod searchspace;
pub mod selection;
pub mod supernet;
pub mod toy;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

/// First 16 hex digits of the SHA-256 of `text`.
pub fn hash_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}
