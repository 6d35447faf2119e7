//! Semi-blind multi-user MIMO channel estimation.
//!
//! The library fits a complex Gaussian mixture prior to channel data, blends
//! it with a blind maximum-likelihood subspace estimated from received data
//! symbols, and benchmarks the resulting estimators against classical
//! baselines via Monte-Carlo NMSE sweeps.
//!
//! Modules:
//! - [`scenarios`]: synthetic URA channel generator and the CVD1 dataset file
//! - [`gmm`]: complex Gaussian mixture fitting (EM) and the GMM1 model file
//! - [`subspace`]: receive sample covariance, dominant eigenbasis, projector
//! - [`estimators`]: the eight channel estimators behind one interface
//! - [`simulator`]: coherence-block simulation, NMSE sweeps, timing runs
//! - [`cli`]: config-file driven front end used by the `semiblind` binary

pub mod cli;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod linalg;
pub mod scenarios;
pub mod simulator;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::{C64, CMatrix, CVector};
