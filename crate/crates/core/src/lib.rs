//! Ansatz-based quantum convolutional neural networks (QCNNs) and a
//! quantum-to-quantum transfer-learning harness.
//!
//! The crate is organised bottom-up:
//!
//! * [`statevec`] dense statevector simulation (up to 16 qubits),
//! * [`ansatz`] two-qubit building blocks and full QCNN layouts,
//! * [`dataio`] IDX loading, PCA reduction and angle encoding,
//! * [`train`] BCE objective, parameter-shift gradients and Adam,
//! * [`readout`] Bloch-vector SVM readout and alignment rotation,
//! * [`baseline`] classical comparison networks,
//! * [`metrics`] accuracy drop, RPR and aggregation,
//! * [`harness`] tasks, sweeps, caching and reports.
//!
//! The guide under `book/` walks through each stage; its code listings are
//! compiled as doc-tests of this crate.

pub mod ansatz;
pub mod baseline;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod readout;
pub mod selftest;
pub mod statevec;
pub mod train;

pub use error::{Error, Result};

/// Derives an independent 64-bit stream seed from a run seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Numerical tolerances shared across the crate.
pub mod tol {
    /// Allowed drift of the squared norm of a state.
    pub const NORM: f64 = 1e-10;
    /// Threshold above which a supplied gate is rejected as non-unitary.
    pub const UNITARY_CHECK: f64 = 1e-8;
    /// Probability clamp used inside the binary cross-entropy.
    pub const PROB_CLAMP: f64 = 1e-12;
    /// Orthonormality tolerance for PCA bases.
    pub const BASIS: f64 = 1e-8;
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/ansatz.md")]
    mod ansatz {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
