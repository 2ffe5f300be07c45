//! Multiple-contrast testing with a shared wild bootstrap.
//!
//! Every replicate applies one weight vector to all `b` Gram matrices, so the
//! joint law of the local statistics is preserved. The common level `β̂` is
//! the largest grid point `j/M` at which the familywise exceedance frequency
//! of the per-hypothesis `(1−β)`-quantiles stays at or below `α`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{p_value, replicate_weights, TestConfig, WeightLaw};
use crate::contrasts::{null_space_basis, ContrastMatrix};
use crate::engine::SurvivalSample;
use crate::error::{Error, Result};
use crate::teststat::{gram, statistic, GramMatrix};

/// `M×b` bootstrap draws, row-major by replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    reps: usize,
    b: usize,
    values: Vec<f64>,
}

impl DrawMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let b = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || b == 0 || rows.iter().any(|r| r.len() != b) {
            return Err(Error::InvalidArgument("draw matrix must be non-empty and rectangular".into()));
        }
        Ok(Self { reps: rows.len(), b, values: rows.concat() })
    }

    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn hypotheses(&self) -> usize {
        self.b
    }

    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.values[l * self.b + i]
    }

    pub fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.b..(l + 1) * self.b]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.reps).map(|l| self.get(l, i)).collect()
    }

    fn sorted_columns(&self) -> Vec<Vec<f64>> {
        (0..self.b)
            .map(|i| {
                let mut c = self.column(i);
                c.sort_by(f64::total_cmp);
                c
            })
            .collect()
    }
}

pub fn joint_wild_draws(grams: &[GramMatrix], reps: usize, seed: u64, law: WeightLaw) -> Result<DrawMatrix> {
    let n = grams.first().ok_or_else(|| Error::InvalidArgument("no hypotheses".into()))?.n();
    if grams.iter().any(|g| g.n() != n) {
        return Err(Error::Mismatch("Gram matrices come from samples of different sizes".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("number of bootstrap replicates must be at least 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|l| {
            let w = replicate_weights(seed, l as u64, n, law);
            grams.iter().map(|g| g.quad_form(&w) / n as f64).collect()
        })
        .collect();
    Ok(DrawMatrix { reps, b: grams.len(), values: rows.concat() })
}

/// Number of replicates in which some draw strictly exceeds its column's
/// quantile at grid point `β = j/M`.
fn exceedances(draws: &DrawMatrix, sorted: &[Vec<f64>], j: usize) -> usize {
    let m = draws.reps;
    let idx = m.saturating_sub(j).max(1) - 1;
    let q: Vec<f64> = sorted.iter().map(|c| c[idx]).collect();
    (0..m).filter(|&l| draws.row(l).iter().zip(&q).any(|(d, q)| d > q)).count()
}

fn feasible(count: usize, m: usize, alpha: f64) -> bool {
    count as f64 / m as f64 <= alpha
}

/// Grid index `j` of `β̂ = j/M`, found by bisection on the monotone
/// exceedance count.
pub fn beta_hat_index(draws: &DrawMatrix, alpha: f64) -> usize {
    let m = draws.reps;
    let sorted = draws.sorted_columns();
    let (mut lo, mut hi) = (0usize, m);
    if feasible(exceedances(draws, &sorted, hi), m, alpha) {
        return hi;
    }
    // invariant: lo feasible, hi infeasible
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible(exceedances(draws, &sorted, mid), m, alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn beta_hat_search(draws: &DrawMatrix, alpha: f64) -> f64 {
    beta_hat_index(draws, alpha) as f64 / draws.reps as f64
}

/// Linear scan over every grid point; reference for [`beta_hat_index`].
pub fn beta_hat_index_exhaustive(draws: &DrawMatrix, alpha: f64) -> usize {
    let sorted = draws.sorted_columns();
    (0..=draws.reps)
        .filter(|&j| feasible(exceedances(draws, &sorted, j), draws.reps, alpha))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub hypothesis: String,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCTestResult {
    pub local: Vec<LocalResult>,
    pub beta_hat: f64,
    pub global_reject: bool,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Decisions from precomputed Gram matrices, one per local hypothesis.
pub fn mctest_grams(grams: &[GramMatrix], labels: &[String], config: &TestConfig) -> Result<MCTestResult> {
    config.validate()?;
    if labels.len() != grams.len() {
        return Err(Error::Mismatch(format!("{} labels for {} hypotheses", labels.len(), grams.len())));
    }
    let draws = joint_wild_draws(grams, config.reps, config.seed, config.weights)?;
    let j = beta_hat_index(&draws, config.alpha);
    let m = draws.reps;
    let idx = m.saturating_sub(j).max(1) - 1;
    let sorted = draws.sorted_columns();
    let local: Vec<LocalResult> = grams
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (g, label))| {
            let stat = statistic(g);
            let crit = sorted[i][idx];
            LocalResult {
                hypothesis: label.clone(),
                statistic: stat,
                critical_value: crit,
                p_value: p_value(&sorted[i], stat),
                // A zero statistic carries no evidence; without the guard the
                // `≥` rule would fire on an all-zero Gram matrix.
                reject: stat >= crit && stat > 0.0,
            }
        })
        .collect();
    Ok(MCTestResult {
        global_reject: local.iter().any(|r| r.reject),
        local,
        beta_hat: j as f64 / m as f64,
        reps: config.reps,
        alpha: config.alpha,
        seed: config.seed,
    })
}

pub fn mctest(sample: &SurvivalSample, contrasts: &[ContrastMatrix], config: &TestConfig) -> Result<MCTestResult> {
    config.validate()?;
    if contrasts.is_empty() {
        return Err(Error::InvalidArgument("no local hypotheses given".into()));
    }
    if sample.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    if let Some(c) = contrasts.iter().find(|c| c.k() != sample.k()) {
        return Err(Error::Mismatch(format!(
            "contrast {:?} has {} columns but the sample has {} groups",
            c.label(),
            c.k(),
            sample.k()
        )));
    }
    let grams: Vec<GramMatrix> = contrasts.iter().map(|c| gram(sample, &null_space_basis(c), &config.kernel)).collect();
    let labels: Vec<String> = contrasts.iter().map(|c| c.label().to_string()).collect();
    mctest_grams(&grams, &labels, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn column(vals: &[f64]) -> DrawMatrix {
        DrawMatrix::from_rows(&vals.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_column_beta() {
        let vals: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64 + 0.5).collect();
        let d = column(&vals);
        assert_eq!(beta_hat_index(&d, 0.05), 1);
        assert_eq!(beta_hat_index(&d, 0.2), 4);
        assert_eq!(beta_hat_index(&d, 0.049), 0);
        assert_eq!(beta_hat_index_exhaustive(&d, 0.2), 4);
    }

    #[test]
    fn duplicated_column_same_beta() {
        let vals: Vec<f64> = (0..40).map(|i| ((i * 13) % 40) as f64).collect();
        let one = column(&vals);
        let two = DrawMatrix::from_rows(&vals.iter().map(|&v| vec![v, v]).collect::<Vec<_>>()).unwrap();
        assert_eq!(beta_hat_index(&one, 0.1), beta_hat_index(&two, 0.1));
    }

    #[test]
    fn shared_weights() {
        let d = DMatrix::from_row_slice(3, 3, &[0.3, -0.1, 0.05, -0.1, 0.2, 0.0, 0.05, 0.0, 0.4]);
        let g = GramMatrix::from_dense(&d);
        let dm = joint_wild_draws(&[g.clone(), g.clone()], 30, 11, WeightLaw::Normal).unwrap();
        for l in 0..30 {
            assert_eq!(dm.get(l, 0), dm.get(l, 1));
        }
        let other = GramMatrix::from_dense(&DMatrix::zeros(4, 4));
        assert!(joint_wild_draws(&[g, other], 5, 1, WeightLaw::Rademacher).is_err());
    }

    #[test]
    fn zero_statistics_reject_nothing() {
        let g = GramMatrix::from_dense(&DMatrix::zeros(3, 3));
        let cfg = TestConfig::new(crate::kernels::KernelSpec::preset(1).unwrap(), 20, 0.05, 1);
        let r = mctest_grams(&[g.clone(), g], &["a".into(), "b".into()], &cfg).unwrap();
        assert!(r.local.iter().all(|l| l.statistic == 0.0 && !l.reject));
        assert!(!r.global_reject);
    }
}
