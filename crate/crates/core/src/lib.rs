//! Correlation Impact Ratio (CIR) feature attribution.
//!
//! The crate is organised around the pipeline it supports:
//!
//! * [`data_io`] loads evaluation matrices and writes versioned JSON reports.
//! * [`cir`] scores single features (mid-mean and correlation forms), with a
//!   one-pass moment accumulator for large inputs.
//! * [`cca`] provides the covariance / whitening / canonical-pair substrate.
//! * [`group`] builds block, class-conditioned and multi-output scores on top.
//! * [`lightweight`] subsamples rows and decides, through similarity gates
//!   and sample-size bounds, whether the reduced set can stand in for the full one.
//! * [`stability`] and [`eval`] implement the rank-stability and faithfulness
//!   protocol, and [`synth`] regenerates the synthetic benchmark families.
//!
//! All variances use the population (`1/n`) convention.
//!
//! Data-parallel loops (bootstrap replicates, permutation tests, per-feature
//! scoring, Monte-Carlo draws) run on rayon when the default `parallel`
//! feature is on and sequentially otherwise. Every randomized routine derives
//! one RNG stream per replicate from the caller's seed, so results do not
//! depend on the number of threads.

pub mod cca;
pub mod cir;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod group;
pub mod lightweight;
pub mod par;
pub mod stability;
pub mod synth;

pub use cir::{CirMode, CirScore};
pub use data_io::{DataMatrix, OutputBlock, OutputKind};
pub use error::{ExcirError, Result};
