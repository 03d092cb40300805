//! Deterministic simulator of a blockchain-secured federated-learning (B-FL)
//! edge network.
//!
//! The crate models one edge cell with `M` servers and `K` devices. Each
//! training round runs eight steps: local SGD on every device, signed model
//! upload, secure aggregation at a rotating primary server, a four-phase PBFT
//! exchange (pre-prepare / prepare / commit / reply) that validates the
//! aggregate, and global-model download. Round latency is priced by a
//! closed-form model over a Gauss-Markov fading channel, and a from-scratch
//! TD3 learner allocates bandwidth and transmit power to minimize the
//! long-term average round latency under a running power budget.
//!
//! Modules mirror the subsystem split:
//!
//! - [`channel`]: path loss, correlated small-scale fading, rates, packet latency
//! - [`latency`]: per-step communication/computation latency of one round
//! - [`aggregation`]: multi-Krum and FedAvg plus the Gaussian attack model
//! - [`fltrain`]: desk-scale logistic-regression FL core on synthetic data
//! - [`consensus`]: PBFT round engine and the hash-linked block ledger
//! - [`mod@env`]: the MDP environment (state, action decoding, reward, budget)
//! - [`td3`]: twin-critic actor-critic learner with analytic gradients
//! - [`allocator`]: random / average / Monte-Carlo / learned policies
//! - [`config`]: resolved scenario configuration shared by the CLI
//!
//! Everything is seed-deterministic: the same scenario seed reproduces the
//! same topology, fading, training trajectory, and ledger bytes.

pub mod aggregation;
pub mod allocator;
pub mod channel;
pub mod config;
pub mod consensus;
pub mod env;
pub mod fltrain;
pub mod latency;
pub mod rand_util;
pub mod td3;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or protocol parameter violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An operation was called with arguments outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A checkpoint or export payload failed to parse.
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
