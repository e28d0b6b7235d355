//! Sequential Monte Carlo, conditional SMC / particle Gibbs, and tools to
//! compute and estimate the minorization constants of the particle Gibbs kernel.

pub mod csmc;
pub mod error;
pub mod experiment;
pub mod minorization;
pub mod models;
pub mod smc;
pub mod rng;
pub mod ssm;
pub mod stats;

pub use error::{Error, Result};
pub use rng::StreamKey;
pub use ssm::{make_bootstrap, make_fully_adapted, make_proposal, Proposal, ProposalKind, StateSpaceModel};
