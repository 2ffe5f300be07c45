//! Product kernels `K((t,i),(s,j)) = L(t,s) · J(i,j)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeKernel {
    /// `exp(−(t−s)²/ℓ²)`, parameterised by `ℓ²`.
    SquaredExponential { length_sq: f64 },
    /// `exp(−|t−s|/σ)`.
    OrnsteinUhlenbeck { scale: f64 },
}

impl TimeKernel {
    #[inline]
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        match *self {
            TimeKernel::SquaredExponential { length_sq } => {
                let d = t - s;
                (-d * d / length_sq).exp()
            }
            TimeKernel::OrnsteinUhlenbeck { scale } => (-(t - s).abs() / scale).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GroupKernel {
    /// `(1 + d²/(2ab²))^(−a)` on integer labels.
    RationalQuadratic { a: f64, b: f64 },
    Identity,
}

impl GroupKernel {
    pub fn eval(&self, i: usize, j: usize) -> f64 {
        match *self {
            GroupKernel::RationalQuadratic { a, b } => {
                let d = i as f64 - j as f64;
                (1.0 + d * d / (2.0 * a * b * b)).powf(-a)
            }
            GroupKernel::Identity => {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |i, j| self.eval(i, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub time: TimeKernel,
    pub group: GroupKernel,
    /// Divide observation times by their maximum before evaluating `L`.
    pub rescale_times: bool,
}

/// `ℓ²` for the presets `K1..K5`.
pub const PRESET_LENGTH_SQ: [f64; 5] = [10.0, 1.0, 0.1, 0.05, 0.02];

impl KernelSpec {
    pub fn new(time: TimeKernel, group: GroupKernel, rescale_times: bool) -> Result<Self> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let ok_time = match time {
            TimeKernel::SquaredExponential { length_sq } => positive(length_sq),
            TimeKernel::OrnsteinUhlenbeck { scale } => positive(scale),
        };
        let ok_group = match group {
            GroupKernel::RationalQuadratic { a, b } => positive(a) && positive(b),
            GroupKernel::Identity => true,
        };
        if !ok_time || !ok_group {
            return Err(Error::InvalidKernel(format!("hyperparameters must be positive: {time:?}, {group:?}")));
        }
        Ok(Self { time, group, rescale_times })
    }

    /// SE(ℓ²) × RQ(2, 1), no rescaling.
    pub fn se_rq(length_sq: f64) -> Result<Self> {
        Self::new(
            TimeKernel::SquaredExponential { length_sq },
            GroupKernel::RationalQuadratic { a: 2.0, b: 1.0 },
            false,
        )
    }

    /// Preset `K1`..`K5`.
    pub fn preset(index: usize) -> Result<Self> {
        match index {
            1..=5 => Self::se_rq(PRESET_LENGTH_SQ[index - 1]),
            _ => Err(Error::InvalidKernel(format!("no preset K{index}"))),
        }
    }

    pub fn presets() -> Vec<(String, KernelSpec)> {
        (1..=5).map(|i| (format!("K{i}"), Self::preset(i).expect("valid preset"))).collect()
    }

    pub fn with_rescale(mut self, on: bool) -> Self {
        self.rescale_times = on;
        self
    }

    pub fn eval(&self, t: f64, i: usize, s: f64, j: usize) -> f64 {
        self.time.eval(t, s) * self.group.eval(i, j)
    }
}

/// Divide every time by the maximum time.
pub fn rescale(times: &[f64]) -> Vec<f64> {
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    times.iter().map(|t| t / max).collect()
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidKernel(format!("cannot parse {what} from {s:?}")))
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// `K1`..`K5`, or comma-separated parts `se:<ℓ²>` / `ou:<σ>` and
    /// `rq:<a>:<b>` / `id`. A missing group part defaults to `rq:2:1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix(['K', 'k']) {
            if let Ok(i) = rest.parse::<usize>() {
                return Self::preset(i);
            }
        }
        let mut time = None;
        let mut group = None;
        for part in s.split(',') {
            let fields: Vec<&str> = part.trim().split(':').collect();
            match fields.as_slice() {
                ["se", l] => time = Some(TimeKernel::SquaredExponential { length_sq: parse_num(l, "ℓ²")? }),
                ["ou", sg] => time = Some(TimeKernel::OrnsteinUhlenbeck { scale: parse_num(sg, "σ")? }),
                ["rq", a, b] => {
                    group = Some(GroupKernel::RationalQuadratic { a: parse_num(a, "a")?, b: parse_num(b, "b")? })
                }
                ["id"] => group = Some(GroupKernel::Identity),
                _ => return Err(Error::InvalidKernel(format!("unrecognised kernel component {part:?}"))),
            }
        }
        let time = time.ok_or_else(|| Error::InvalidKernel(format!("no time kernel in {s:?}")))?;
        let group = group.unwrap_or(GroupKernel::RationalQuadratic { a: 2.0, b: 1.0 });
        Self::new(time, group, false)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.time {
            TimeKernel::SquaredExponential { length_sq } => write!(f, "se:{length_sq}")?,
            TimeKernel::OrnsteinUhlenbeck { scale } => write!(f, "ou:{scale}")?,
        }
        match self.group {
            GroupKernel::RationalQuadratic { a, b } => write!(f, ",rq:{a}:{b}"),
            GroupKernel::Identity => write!(f, ",id"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_kernels() {
        let se = TimeKernel::SquaredExponential { length_sq: 1.0 };
        assert_eq!(se.eval(0.3, 0.3), 1.0);
        assert!((se.eval(1.0, 2.0) - (-1.0f64).exp()).abs() < 1e-15);
        let ou = TimeKernel::OrnsteinUhlenbeck { scale: 2.0 };
        assert!((ou.eval(5.0, 3.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(ou.eval(3.0, 5.0), ou.eval(5.0, 3.0));
    }

    #[test]
    fn rq_values() {
        let rq = GroupKernel::RationalQuadratic { a: 2.0, b: 1.0 };
        assert_eq!(rq.eval(3, 3), 1.0);
        assert!((rq.eval(0, 1) - 0.64).abs() < 1e-15);
        assert!((rq.eval(4, 2) - 0.25).abs() < 1e-15);
        let j = rq.matrix(4);
        assert_eq!(j, j.transpose());
        assert!(j.symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn rescaling() {
        assert_eq!(rescale(&[1.0, 2.0, 4.0]), vec![0.25, 0.5, 1.0]);
        assert_eq!(rescale(&[3.0, 3.0]), vec![1.0, 1.0]);
        assert_eq!(rescale(&[0.2, 1.0]), vec![0.2, 1.0]);
    }

    #[test]
    fn parsing() {
        let k: KernelSpec = "se:10,rq:2:1".parse().unwrap();
        assert_eq!(k, KernelSpec::preset(1).unwrap());
        assert_eq!("K3".parse::<KernelSpec>().unwrap(), KernelSpec::se_rq(0.1).unwrap());
        let k: KernelSpec = "ou:2,id".parse().unwrap();
        assert_eq!(k.group, GroupKernel::Identity);
        assert_eq!(k.to_string().parse::<KernelSpec>().unwrap(), k);
        assert!("se:-1".parse::<KernelSpec>().is_err());
        assert!("rq:2:1".parse::<KernelSpec>().is_err());
        assert!("K6".parse::<KernelSpec>().is_err());
        assert!("gauss:1".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn product_structure() {
        let k = KernelSpec::preset(3).unwrap();
        let v = k.eval(0.2, 1, 0.5, 3);
        assert_eq!(v, k.time.eval(0.2, 0.5) * k.group.eval(1, 3));
    }
}
