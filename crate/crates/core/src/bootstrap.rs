//! Wild bootstrap calibration of a single kernel log-rank test.
//!
//! Replicate `ℓ` draws its weights from a ChaCha8 stream selected by
//! `(seed, ℓ)`, so draw values do not depend on scheduling or thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrasts::{null_space_basis, ContrastMatrix};
use crate::engine::SurvivalSample;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::teststat::{gram, statistic, GramMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightLaw {
    #[default]
    Rademacher,
    Normal,
}

impl FromStr for WeightLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rademacher" => Ok(WeightLaw::Rademacher),
            "normal" | "gaussian" => Ok(WeightLaw::Normal),
            other => Err(Error::InvalidArgument(format!("unknown weight law {other:?}"))),
        }
    }
}

impl fmt::Display for WeightLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightLaw::Rademacher => "rademacher",
            WeightLaw::Normal => "normal",
        })
    }
}

/// Weight vector of replicate `replicate`.
pub fn replicate_weights(seed: u64, replicate: u64, n: usize, law: WeightLaw) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    match law {
        WeightLaw::Rademacher => (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        WeightLaw::Normal => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    }
}

/// `WᵀGW / n`.
pub fn draw_with_weights(g: &GramMatrix, w: &[f64]) -> f64 {
    g.quad_form(w) / g.n() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub values: Vec<f64>,
    pub seed: u64,
    pub weight_law: WeightLaw,
}

pub fn wild_draws(g: &GramMatrix, reps: usize, seed: u64, law: WeightLaw) -> BootstrapDraws {
    let values = (0..reps)
        .into_par_iter()
        .map(|l| draw_with_weights(g, &replicate_weights(seed, l as u64, g.n(), law)))
        .collect();
    BootstrapDraws { values, seed, weight_law: law }
}

/// 1-based index `⌈level·M⌉` clamped to `[1, M]`; products within 1e-9 of
/// an integer are treated as that integer.
pub fn quantile_index(level: f64, m: usize) -> usize {
    let x = level * m as f64;
    let r = x.round();
    let idx = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (idx.max(1.0) as usize).min(m)
}

/// Order statistic at [`quantile_index`] of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    sorted[quantile_index(level, sorted.len()) - 1]
}

pub fn empirical_quantile(draws: &[f64], level: f64) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, level)
}

/// `(1 + #{draws ≥ stat}) / (M + 1)`.
pub fn p_value(draws: &[f64], stat: f64) -> f64 {
    let c = draws.iter().filter(|&&d| d >= stat).count();
    (1 + c) as f64 / (draws.len() + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub kernel: KernelSpec,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weights: WeightLaw,
}

impl TestConfig {
    pub fn new(kernel: KernelSpec, reps: usize, alpha: f64, seed: u64) -> Self {
        Self { kernel, reps, alpha, seed, weights: WeightLaw::Rademacher }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidArgument("number of bootstrap replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub hypothesis: String,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Decision from a precomputed Gram matrix.
pub fn test_gram(g: &GramMatrix, label: &str, config: &TestConfig) -> Result<TestResult> {
    config.validate()?;
    let stat = statistic(g);
    let draws = wild_draws(g, config.reps, config.seed, config.weights);
    let crit = empirical_quantile(&draws.values, 1.0 - config.alpha);
    Ok(TestResult {
        hypothesis: label.to_string(),
        statistic: stat,
        critical_value: crit,
        p_value: p_value(&draws.values, stat),
        reject: stat > crit,
        reps: config.reps,
        alpha: config.alpha,
        seed: config.seed,
    })
}

pub fn single_test(sample: &SurvivalSample, c: &ContrastMatrix, config: &TestConfig) -> Result<TestResult> {
    config.validate()?;
    if sample.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    if c.k() != sample.k() {
        return Err(Error::Mismatch(format!("contrast has {} columns but the sample has {} groups", c.k(), sample.k())));
    }
    let g = gram(sample, &null_space_basis(c), &config.kernel);
    test_gram(&g, c.label(), config)
}
