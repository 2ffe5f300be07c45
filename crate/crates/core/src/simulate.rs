//! Synthetic survival data for the A/B/C scenarios and Monte Carlo power
//! studies over them.
//!
//! Design A and B are 2×3 factorials, design C is 3×3; groups are ordered
//! lexicographically, `(1,1), (1,2), …`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{test_gram, TestConfig, WeightLaw};
use crate::contrasts::{build_hypothesis, null_space_basis, split_rows, Factor, FactorialDesign, HypothesisKind};
use crate::engine::SurvivalSample;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::multiple::mctest_grams;
use crate::teststat::gram;

const ROOT_TOL: f64 = 1e-10;
const ROOT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum HazardSpec {
    Constant { rate: f64 },
    /// Hazard `cos²(2t)`.
    Cos2,
    /// Hazard `sin²(2t)`.
    Sin2,
    /// Cumulative hazard `(rate·t)^shape`.
    Weibull { shape: f64, rate: f64 },
    /// Additive design-C hazard of cell `(i, j)` (1-based levels).
    DataC { i: usize, j: usize, theta: f64 },
}

impl HazardSpec {
    pub fn data_c(i: usize, j: usize, theta: f64) -> Result<Self> {
        if !(theta >= -1.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!("theta must be finite and at least -1, got {theta}")));
        }
        if !(1..=3).contains(&i) || !(1..=3).contains(&j) {
            return Err(Error::InvalidArgument(format!("design C has no cell ({i},{j})")));
        }
        Ok(HazardSpec::DataC { i, j, theta })
    }

    /// Linear coefficient and the `ln(1+t²)` coefficient of a design-C cell.
    fn data_c_parts(i: usize, j: usize, theta: f64) -> (f64, f64) {
        let (phi, log_coef) = match i {
            1 => (-5.0 / 24.0, 0.75),
            2 => (13.0 / 24.0, -0.75),
            _ => (-8.0 / 24.0, 0.0),
        };
        let psi = [-0.5, 0.0, 0.5][j - 1];
        let sigma = if (i, j) == (1, 2) { theta } else { 0.0 };
        (29.0 / 24.0 + phi + psi + sigma, log_coef)
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            HazardSpec::Constant { rate } => rate,
            HazardSpec::Cos2 => (2.0 * t).cos().powi(2),
            HazardSpec::Sin2 => (2.0 * t).sin().powi(2),
            HazardSpec::Weibull { shape, rate } => shape * rate * (rate * t).powf(shape - 1.0),
            HazardSpec::DataC { i, j, theta } => {
                let (lin, log_coef) = Self::data_c_parts(i, j, theta);
                lin + log_coef * 2.0 * t / (1.0 + t * t)
            }
        }
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        match *self {
            HazardSpec::Constant { rate } => rate * t,
            HazardSpec::Cos2 => t / 2.0 + (4.0 * t).sin() / 8.0,
            HazardSpec::Sin2 => t / 2.0 - (4.0 * t).sin() / 8.0,
            HazardSpec::Weibull { shape, rate } => (rate * t).powf(shape),
            HazardSpec::DataC { i, j, theta } => {
                let (lin, log_coef) = Self::data_c_parts(i, j, theta);
                lin * t + log_coef * t.mul_add(t, 1.0).ln()
            }
        }
    }

    /// Solve `Λ(t) = e` by bracket doubling and bisection.
    pub fn invert(&self, e: f64) -> Result<f64> {
        if e <= 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut iter = 0;
        while self.cumulative_hazard(hi) < e {
            lo = hi;
            hi *= 2.0;
            iter += 1;
            if iter >= ROOT_MAX_ITER {
                return Err(Error::RootFinding { iterations: iter, target: e });
            }
        }
        while hi - lo > ROOT_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cumulative_hazard(mid) < e {
                lo = mid;
            } else {
                hi = mid;
            }
            iter += 1;
            if iter >= ROOT_MAX_ITER {
                return Err(Error::RootFinding { iterations: iter, target: e });
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Inverse-transform draw: `Λ⁻¹(E)` with `E ~ Exp(1)`.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let e: f64 = rng.sample(Exp1);
        self.invert(e)
    }
}

impl fmt::Display for HazardSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HazardSpec::Constant { rate } => write!(f, "constant({rate})"),
            HazardSpec::Cos2 => f.write_str("cos^2(2t)"),
            HazardSpec::Sin2 => f.write_str("sin^2(2t)"),
            HazardSpec::Weibull { shape, rate } => write!(f, "weibull(shape={shape}, rate={rate})"),
            HazardSpec::DataC { i, j, theta } => write!(f, "data-c({i},{j}; theta={theta})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "UPPERCASE")]
pub enum Design {
    A,
    B,
    C { theta: f64 },
}

impl Design {
    pub fn factorial(&self) -> FactorialDesign {
        let levels = match self {
            Design::A | Design::B => 2,
            Design::C { .. } => 3,
        };
        FactorialDesign::new(vec![Factor::new("I", levels), Factor::new("J", 3)]).expect("valid built-in design")
    }

    pub fn k(&self) -> usize {
        self.factorial().k()
    }

    /// Event-time hazards in group order.
    pub fn hazards(&self) -> Result<Vec<HazardSpec>> {
        use HazardSpec::*;
        Ok(match *self {
            Design::A => vec![
                Constant { rate: 1.0 },
                Constant { rate: 2.0 },
                Constant { rate: 1.0 },
                Constant { rate: 2.0 },
                Constant { rate: 1.0 },
                Constant { rate: 1.0 },
            ],
            Design::B => vec![Cos2, Sin2, Constant { rate: 1.0 }, Sin2, Cos2, Constant { rate: 1.0 }],
            Design::C { theta } => {
                let mut v = Vec::with_capacity(9);
                for i in 1..=3 {
                    for j in 1..=3 {
                        v.push(HazardSpec::data_c(i, j, theta)?);
                    }
                }
                v
            }
        })
    }

    /// Censoring hazards in group order.
    pub fn censoring(&self, regime: Censoring) -> Vec<HazardSpec> {
        let idx = regime as usize;
        match self {
            Design::A => vec![HazardSpec::Constant { rate: [0.1, 0.5, 2.0][idx] }; 6],
            Design::B => vec![HazardSpec::Constant { rate: [0.1, 0.3, 0.6][idx] }; 6],
            Design::C { .. } => {
                let rate = [0.1, 0.5, 1.0][idx];
                let first = [
                    HazardSpec::Constant { rate },
                    HazardSpec::Weibull { shape: 0.5, rate },
                    HazardSpec::Weibull { shape: 1.5, rate },
                ];
                first.iter().flat_map(|h| std::iter::repeat_n(*h, 3)).collect()
            }
        }
    }

    /// Unscaled unbalanced sizes in group order.
    pub fn unbalanced_base(&self) -> Vec<usize> {
        match self {
            Design::A | Design::B => vec![15, 5, 7, 9, 9, 6],
            Design::C { .. } => vec![15, 9, 8, 9, 7, 5, 5, 6, 11],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Design::A => "A",
            Design::B => "B",
            Design::C { .. } => "C",
        }
    }
}

impl FromStr for Design {
    type Err = Error;
    /// `A`, `B`, `C` (θ = 0) or `C:<θ>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Design::A),
            "B" => Ok(Design::B),
            "C" => Ok(Design::C { theta: 0.0 }),
            _ => {
                let theta = s
                    .strip_prefix(['C', 'c'])
                    .and_then(|r| r.strip_prefix(':'))
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown design {s:?}")))?;
                HazardSpec::data_c(1, 1, theta)?;
                Ok(Design::C { theta })
            }
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::C { theta } => write!(f, "C:{theta}"),
            d => f.write_str(d.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Censoring {
    Low = 0,
    Medium = 1,
    High = 2,
}

impl FromStr for Censoring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Censoring::Low),
            "medium" => Ok(Censoring::Medium),
            "high" => Ok(Censoring::High),
            other => Err(Error::InvalidArgument(format!("unknown censoring regime {other:?}"))),
        }
    }
}

impl fmt::Display for Censoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Censoring::Low => "low",
            Censoring::Medium => "medium",
            Censoring::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sizes {
    Balanced(usize),
    /// Unbalanced base sizes times a multiplier, floored.
    Unbalanced(f64),
    List(Vec<usize>),
}

impl FromStr for Sizes {
    type Err = Error;
    /// `balanced:<n>`, `unbalanced:<multiplier>` or a comma-separated list.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse group sizes {s:?}"));
        if let Some(n) = s.strip_prefix("balanced:") {
            return Ok(Sizes::Balanced(n.trim().parse().map_err(|_| bad())?));
        }
        if let Some(m) = s.strip_prefix("unbalanced:") {
            return Ok(Sizes::Unbalanced(m.trim().parse().map_err(|_| bad())?));
        }
        let v: std::result::Result<Vec<usize>, _> = s.split(',').map(|x| x.trim().parse()).collect();
        Ok(Sizes::List(v.map_err(|_| bad())?))
    }
}

impl fmt::Display for Sizes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sizes::Balanced(n) => write!(f, "balanced:{n}"),
            Sizes::Unbalanced(m) => write!(f, "unbalanced:{m}"),
            Sizes::List(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub design: Design,
    pub sizes: Sizes,
    pub censoring: Censoring,
}

impl ScenarioConfig {
    pub fn new(design: Design, sizes: Sizes, censoring: Censoring) -> Self {
        Self { design, sizes, censoring }
    }

    pub fn group_sizes(&self) -> Result<Vec<usize>> {
        let k = self.design.k();
        let sizes = match &self.sizes {
            Sizes::Balanced(n) => vec![*n; k],
            Sizes::Unbalanced(mult) => {
                if !(*mult >= 1.0 && mult.is_finite()) {
                    return Err(Error::InvalidArgument(format!("size multiplier must be at least 1, got {mult}")));
                }
                self.design.unbalanced_base().iter().map(|&b| (b as f64 * mult).floor() as usize).collect()
            }
            Sizes::List(v) => {
                if v.len() != k {
                    return Err(Error::InvalidArgument(format!("design {} needs {k} group sizes, got {}", self.design, v.len())));
                }
                v.clone()
            }
        };
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("every group needs at least one subject".into()));
        }
        Ok(sizes)
    }
}

/// Survival and censoring times per subject, groups in order.
pub fn generate_dataset<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<SurvivalSample> {
    let sizes = config.group_sizes()?;
    let hazards = config.design.hazards()?;
    let cens = config.design.censoring(config.censoring);
    let total: usize = sizes.iter().sum();
    let (mut times, mut status, mut groups) =
        (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
    for (g, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let z = hazards[g].sample_time(rng)?;
            let c = cens[g].sample_time(rng)?;
            // A zero draw only occurs for E underflowing to 0; nudge it positive.
            times.push(z.min(c).max(f64::MIN_POSITIVE));
            status.push(z <= c);
            groups.push(g);
        }
    }
    SurvivalSample::new(times, status, groups, config.design.k())?.with_kernel_labels(config.design.factorial().kernel_labels())
}

/// RNG of replicate `rep` in grid cell `cell`.
pub fn replicate_rng(master: u64, cell: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream((cell << 32) | (rep & 0xffff_ffff));
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub label: String,
    pub kernel: KernelSpec,
    /// Multiple-contrast procedure over the rows of the hypothesis.
    pub multiple: bool,
}

impl Method {
    pub fn single(label: impl Into<String>, kernel: KernelSpec) -> Self {
        Self { label: label.into(), kernel, multiple: false }
    }

    pub fn multiple(label: impl Into<String>, kernel: KernelSpec) -> Self {
        Self { label: label.into(), kernel, multiple: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudy {
    pub scenarios: Vec<ScenarioConfig>,
    pub hypothesis: HypothesisKind,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub boot: usize,
    pub alpha: f64,
    pub seed: u64,
    pub weights: WeightLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub design: String,
    pub censoring: String,
    pub size_multiplier: String,
    pub kernel: String,
    pub rejections: usize,
    pub reps: usize,
    pub rejection_rate: f64,
    pub mc_se: f64,
}

/// Rejection decisions of every method on one replicate dataset.
fn replicate_decisions(study: &PowerStudy, scenario: &ScenarioConfig, cell: usize, rep: usize) -> Result<Vec<bool>> {
    let mut rng = replicate_rng(study.seed, cell as u64, rep as u64);
    let sample = generate_dataset(scenario, &mut rng)?;
    let boot_seed = rng.next_u64();
    let design = scenario.design.factorial();
    let c = build_hypothesis(&design, &study.hypothesis)?;
    let locals = split_rows(&c);
    let basis = null_space_basis(&c);
    let local_bases: Vec<_> = locals.iter().map(null_space_basis).collect();
    let labels: Vec<String> = locals.iter().map(|c| c.label().to_string()).collect();

    study
        .methods
        .iter()
        .map(|m| {
            let cfg = TestConfig { kernel: m.kernel, reps: study.boot, alpha: study.alpha, seed: boot_seed, weights: study.weights };
            if sample.event_count() == 0 {
                return Ok(false);
            }
            if m.multiple {
                let grams: Vec<_> = local_bases.iter().map(|b| gram(&sample, b, &m.kernel)).collect();
                Ok(mctest_grams(&grams, &labels, &cfg)?.global_reject)
            } else {
                Ok(test_gram(&gram(&sample, &basis, &m.kernel), c.label(), &cfg)?.reject)
            }
        })
        .collect()
}

pub fn power_study(study: &PowerStudy) -> Result<Vec<PowerRow>> {
    if study.scenarios.is_empty() || study.methods.is_empty() {
        return Err(Error::InvalidArgument("power study needs at least one scenario and one method".into()));
    }
    if study.reps == 0 {
        return Err(Error::InvalidArgument("power study needs at least one replication".into()));
    }
    let mut rows = Vec::new();
    for (cell, scenario) in study.scenarios.iter().enumerate() {
        let decisions: Vec<Vec<bool>> = (0..study.reps)
            .into_par_iter()
            .map(|rep| replicate_decisions(study, scenario, cell, rep))
            .collect::<Result<_>>()?;
        for (mi, m) in study.methods.iter().enumerate() {
            let rejections = decisions.iter().filter(|d| d[mi]).count();
            let rate = rejections as f64 / study.reps as f64;
            rows.push(PowerRow {
                design: scenario.design.to_string(),
                censoring: scenario.censoring.to_string(),
                size_multiplier: scenario.sizes.to_string(),
                kernel: m.label.clone(),
                rejections,
                reps: study.reps,
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / study.reps as f64).sqrt(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cumulative_hazards() {
        assert_eq!(HazardSpec::Constant { rate: 2.0 }.cumulative_hazard(1.0), 2.0);
        assert!((HazardSpec::Cos2.cumulative_hazard(PI / 4.0) - PI / 8.0).abs() < 1e-15);
        assert!((HazardSpec::Sin2.cumulative_hazard(PI / 4.0) - PI / 8.0).abs() < 1e-15);
        assert_eq!(HazardSpec::Weibull { shape: 0.5, rate: 4.0 }.cumulative_hazard(1.0), 2.0);
    }

    #[test]
    fn data_c_slope_at_zero() {
        let h = HazardSpec::data_c(1, 1, 0.0).unwrap();
        assert!((h.hazard(0.0) - 0.5).abs() < 1e-15);
        let eps = 1e-7;
        assert!((h.cumulative_hazard(eps) / eps - 0.5).abs() < 1e-6);
        assert!(HazardSpec::data_c(1, 2, -1.5).is_err());
        assert!(HazardSpec::data_c(4, 1, 0.0).is_err());
    }

    #[test]
    fn data_c_hazards_are_nonnegative() {
        for theta in [-1.0, 0.0, 2.0] {
            for h in (Design::C { theta }).hazards().unwrap() {
                for s in 0..400 {
                    assert!(h.hazard(s as f64 * 0.05) >= -1e-15, "{h} at {}", s as f64 * 0.05);
                }
            }
        }
    }

    #[test]
    fn data_c_has_no_interaction_iff_theta_zero() {
        // Λ_ij − Λ_i· − Λ_·j + Λ_·· at a fixed time.
        let t = 1.7;
        for (theta, zero) in [(0.0, true), (0.5, false)] {
            let h = (Design::C { theta }).hazards().unwrap();
            let l: Vec<f64> = h.iter().map(|x| x.cumulative_hazard(t)).collect();
            let cell = |i: usize, j: usize| l[3 * i + j];
            let row = |i: usize| (0..3).map(|j| cell(i, j)).sum::<f64>() / 3.0;
            let col = |j: usize| (0..3).map(|i| cell(i, j)).sum::<f64>() / 3.0;
            let all = l.iter().sum::<f64>() / 9.0;
            let max = (0..9).map(|g| (cell(g / 3, g % 3) - row(g / 3) - col(g % 3) + all).abs()).fold(0.0, f64::max);
            assert_eq!(max < 1e-12, zero);
        }
    }

    #[test]
    fn inversion() {
        let h = HazardSpec::Constant { rate: 1.0 };
        assert!((h.invert(0.7).unwrap() - 0.7).abs() < 1e-9);
        assert!((HazardSpec::Constant { rate: 2.0 }.invert(1.0).unwrap() - 0.5).abs() < 1e-9);
        for e in [0.01, 0.3, 1.0, 4.2, 25.0] {
            let t = HazardSpec::Cos2.invert(e).unwrap();
            assert!((t / 2.0 + (4.0 * t).sin() / 8.0 - e).abs() < 1e-9);
        }
        assert!(HazardSpec::Constant { rate: 0.0 }.invert(1.0).is_err());
    }

    #[test]
    fn sizes() {
        let c = ScenarioConfig::new(Design::A, Sizes::Unbalanced(1.5), Censoring::Low);
        assert_eq!(c.group_sizes().unwrap(), vec![22, 7, 10, 13, 13, 9]);
        let c = ScenarioConfig::new(Design::C { theta: 0.0 }, Sizes::Balanced(4), Censoring::Low);
        assert_eq!(c.group_sizes().unwrap(), vec![4; 9]);
        let c = ScenarioConfig::new(Design::A, Sizes::List(vec![1, 2]), Censoring::Low);
        assert!(c.group_sizes().is_err());
        assert!(ScenarioConfig::new(Design::A, Sizes::Unbalanced(0.5), Censoring::Low).group_sizes().is_err());
    }

    #[test]
    fn parsing() {
        assert_eq!("C:2".parse::<Design>().unwrap(), Design::C { theta: 2.0 });
        assert_eq!("b".parse::<Design>().unwrap(), Design::B);
        assert!("C:-3".parse::<Design>().is_err());
        assert_eq!("balanced:50".parse::<Sizes>().unwrap(), Sizes::Balanced(50));
        assert_eq!("1,2,3".parse::<Sizes>().unwrap(), Sizes::List(vec![1, 2, 3]));
        assert_eq!("High".parse::<Censoring>().unwrap(), Censoring::High);
    }

    #[test]
    fn datasets_are_reproducible() {
        let c = ScenarioConfig::new(Design::B, Sizes::Balanced(10), Censoring::Medium);
        let a = generate_dataset(&c, &mut replicate_rng(5, 0, 3)).unwrap();
        let b = generate_dataset(&c, &mut replicate_rng(5, 0, 3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(&c, &mut replicate_rng(5, 0, 4)).unwrap());
        assert_eq!(a.group_counts(), vec![10; 6]);
    }
}
