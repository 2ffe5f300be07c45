//! Kernel log-rank tests for right-censored survival data in factorial
//! designs, calibrated by a wild bootstrap, with a multiple-contrast
//! post-hoc procedure and a simulation harness.

pub mod bootstrap;
pub mod cli;
pub mod contrasts;
pub mod engine;
pub mod error;
pub mod io;
pub mod kernels;
pub mod multiple;
pub mod simulate;
pub mod teststat;

pub use bootstrap::{single_test, wild_draws, TestConfig, TestResult, WeightLaw};
pub use contrasts::{build_hypothesis, null_space_basis, split_rows, ContrastMatrix, FactorialDesign, HypothesisKind, NullBasis};
pub use engine::SurvivalSample;
pub use error::{Error, Result};
pub use kernels::KernelSpec;
pub use multiple::{mctest, MCTestResult};
pub use teststat::{gram, statistic, GramMatrix};
