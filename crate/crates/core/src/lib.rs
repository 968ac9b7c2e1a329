//! Asymptotic variance-to-mean ratio of the departure process of finite
//! birth–death queues.
//!
//! The crate is organised by layer:
//!
//! - [`chain`]: finite birth–death chains, their stationary law, and the exact
//!   limiting ratio `D = lim var(N(0,t]) / E N(0,t]` of the death-counting process.
//! - [`special`]: normal and Poisson kernels used by the many-server limits, plus
//!   measured diagnostics of the Poisson normal approximation.
//! - [`quadrature`]: adaptive Gauss–Kronrod integration.
//! - [`qed`]: Halfin–Whitt limits of the ratio for `M/M/s/K` with `K ~ η√s`.
//! - [`sim`]: continuous-time Markov chain simulation with batch-means output
//!   analysis, independent of every closed form above.
//! - [`verify`]: the self-verification checks run by `bravo verify` and by the
//!   acceptance test target.

pub mod chain;
pub mod error;
pub mod quadrature;
pub mod qed;
pub mod sim;
pub mod special;
pub mod verify;

pub use chain::{
    BirthDeathChain, MarkedNormalization, MarkedRatio, MmskParams, OutputRatioResult,
    StationaryDistribution,
};
pub use error::{Error, Result};
pub use qed::{Branch, QedEvaluation, QedParams, QuadratureConfig};
pub use sim::{InitialState, SimConfig, SimEstimate};


