//! Independent reference implementations and fuzz generators shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use survtest::contrasts::{ContrastMatrix, NullBasis};
use survtest::engine::SurvivalSample;
use survtest::kernels::KernelSpec;

/// Risk vector by direct counting.
pub fn risk_vector(sample: &SurvivalSample, t: f64) -> Vec<f64> {
    let mut y = vec![0.0; sample.k()];
    for i in 0..sample.n() {
        if sample.times()[i] >= t {
            y[sample.groups()[i]] += 1.0;
        }
    }
    y
}

/// `Q̂` from the normal equations `I − X(XᵀX)⁻¹Xᵀ`, or `None` when rank deficient.
pub fn normal_equation_projection(y: &[f64], v: &DMatrix<f64>, n: usize) -> Option<DMatrix<f64>> {
    let k = v.nrows();
    let x = DMatrix::from_fn(k, v.ncols(), |i, j| y[i] * v[(i, j)] / n as f64);
    // Rank from the columns actually touched: X has full column rank iff the
    // rows of V for groups at risk span R^d.
    let at_risk: Vec<usize> = (0..k).filter(|&i| y[i] > 0.0).collect();
    let sub = DMatrix::from_fn(at_risk.len(), v.ncols(), |r, j| v[(at_risk[r], j)]);
    if sub.rank(1e-9) < v.ncols() {
        return None;
    }
    let xtx_inv = (x.transpose() * &x).try_inverse()?;
    Some(DMatrix::identity(k, k) - &x * xtx_inv * x.transpose())
}

/// Quadruple sum `(1/n) Σ_ij Δ_iΔ_j Σ_ℓℓ' Q_{ℓX_i}(T_i) L(T_i,T_j) J_ℓℓ' Q_{ℓ'X_j}(T_j)`.
pub fn brute_force_statistic(sample: &SurvivalSample, v: &DMatrix<f64>, spec: &KernelSpec) -> f64 {
    let n = sample.n();
    let k = sample.k();
    let tmax = sample.times().iter().cloned().fold(0.0, f64::max);
    let kt = |t: f64| if spec.rescale_times { t / tmax } else { t };
    let q: Vec<Option<DMatrix<f64>>> = (0..n)
        .map(|i| {
            if sample.status()[i] {
                normal_equation_projection(&risk_vector(sample, sample.times()[i]), v, n)
            } else {
                None
            }
        })
        .collect();
    let mut total = 0.0;
    for i in 0..n {
        let Some(qi) = &q[i] else { continue };
        for j in 0..n {
            let Some(qj) = &q[j] else { continue };
            let l = spec.time.eval(kt(sample.times()[i]), kt(sample.times()[j]));
            let (xi, xj) = (sample.groups()[i], sample.groups()[j]);
            let lab = sample.kernel_labels();
            let mut s = 0.0;
            for a in 0..k {
                for b in 0..k {
                    s += qi[(a, xi)] * spec.group.eval(lab[a], lab[b]) * qj[(b, xj)];
                }
            }
            total += l * s;
        }
    }
    total / n as f64
}

pub fn random_sample<R: Rng>(rng: &mut R, n: usize, k: usize) -> SurvivalSample {
    // Every group gets at least one subject; discretised times produce ties.
    let mut groups: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    groups.shuffle(rng);
    let discrete = rng.random_bool(0.3);
    let times: Vec<f64> = (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.01..3.0);
            if discrete {
                (t * 10.0).ceil() / 10.0
            } else {
                t
            }
        })
        .collect();
    let cens = rng.random_range(0.0..0.6);
    let mut status: Vec<bool> = (0..n).map(|_| !rng.random_bool(cens)).collect();
    status[0] = true;
    SurvivalSample::new(times, status, groups, k).unwrap()
}

/// Random sample whose group kernel sees a shuffled labelling.
pub fn random_labelled_sample<R: Rng>(rng: &mut R, n: usize, k: usize) -> SurvivalSample {
    let s = random_sample(rng, n, k);
    let mut labels: Vec<usize> = (0..k).collect();
    labels.shuffle(rng);
    s.with_kernel_labels(labels).unwrap()
}

/// Random integer contrast with `r` rows; rows sum to zero exactly.
pub fn random_contrast<R: Rng>(rng: &mut R, k: usize, r: usize) -> ContrastMatrix {
    let rows: Vec<Vec<f64>> = (0..r)
        .map(|_| loop {
            let mut row: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-3i32..=3) as f64).collect();
            let s: f64 = row.iter().sum();
            row.push(-s);
            if row.iter().any(|&x| x != 0.0) {
                break row;
            }
        })
        .collect();
    ContrastMatrix::from_rows(&rows, "random").unwrap()
}

pub fn random_invertible<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        let s = m.clone().svd(false, false).singular_values;
        if s.min() > 0.1 * s.max() {
            return m;
        }
    }
}

/// Another basis of the same null space.
pub fn random_rebasis<R: Rng>(rng: &mut R, v: &NullBasis) -> NullBasis {
    let r = random_invertible(rng, v.dim());
    NullBasis::from_matrix(v.matrix() * r).unwrap()
}

pub fn random_kernel<R: Rng>(rng: &mut R) -> KernelSpec {
    let s = match rng.random_range(0..4) {
        0 => format!("se:{},rq:{}:{}", rng.random_range(0.05..5.0), rng.random_range(0.5..3.0), rng.random_range(0.5..2.0)),
        1 => format!("ou:{},rq:2:1", rng.random_range(0.1..3.0)),
        2 => format!("se:{},id", rng.random_range(0.05..5.0)),
        _ => format!("K{}", rng.random_range(1..=5)),
    };
    s.parse::<KernelSpec>().unwrap().with_rescale(rng.random_bool(0.3))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
