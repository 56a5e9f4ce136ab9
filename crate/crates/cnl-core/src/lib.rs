//! Algorithmic core for cooperative network learning.
//!
//! Everything in this crate is pure computation over owned values: graph
//! construction and partitioning, contagion simulators, a dense-matrix
//! neural-network engine with hand-written backward passes, Paillier
//! additively homomorphic encryption with a signed fixed-point codec, and
//! the three-level (local / global / integrated) embedding pipeline.
//!
//! The crate is `no_std` (with `alloc`); networking, file formats, and the
//! CLI live in the companion `cnl-node` crate. All randomized routines take
//! an explicit RNG so that fixed seeds reproduce results bit for bit.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod crypto;
pub mod error;
pub mod graph;
pub mod learning;
pub mod matrix;
pub mod nn;

mod fp;

pub use error::CoreError;
pub use matrix::DenseMatrix;

/// Deterministic RNG used throughout the crate.
///
/// Every operation that needs randomness takes `&mut impl rand::RngCore`;
/// callers that want reproducibility seed one of these.
pub type SeedRng = rand_chacha::ChaCha20Rng;

/// Convenience constructor for the crate-wide deterministic RNG.
pub fn seed_rng(seed: u64) -> SeedRng {
    use rand::SeedableRng;
    SeedRng::seed_from_u64(seed)
}
