//! Deterministic in-process simulator of federated co-distillation over a
//! distributed three-player GAN.
//!
//! `feddtg-core` is the algorithmic half of the project: a small dense
//! neural-network engine with verifiable gradients, the per-client
//! generator/discriminator/classifier triplet, non-iid data partitioning,
//! the server round loop with synchronized-noise distillation, and the
//! comparison baselines (FedAvg, FedProx, local-only) plus ablations.
//!
//! Everything in this crate is a pure function of its inputs and the seeds
//! in the configuration: re-running any experiment reproduces bit-identical
//! parameter trajectories and metrics. There is no file or network IO here;
//! the companion `feddtg` crate carries configs, IDX files, metrics
//! emission, and the CLI.
//!
//! The crate is `no_std` (with `alloc`); the default `std` feature only
//! forwards to the RNG dependencies. The optional `parallel` feature fans
//! client-local work out across threads without changing any result.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gan;
pub mod loss;
mod math;
pub mod net;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
