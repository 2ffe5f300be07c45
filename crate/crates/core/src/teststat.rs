//! Gram matrix `G_ij = L(T_i,T_j) · a_iᵀ J a_j` and the statistic `Υ = 1ᵀG1/n`.
//!
//! Rows and columns of censored observations — and of events past the last
//! full-rank time — are identically zero, so only the `m` observations with
//! a nonzero residual are stored. `dense()` rebuilds the full `n×n` matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::contrasts::{null_space_basis, ContrastMatrix, NullBasis};
use crate::engine::{residual_vectors, SurvivalSample};
use crate::kernels::{rescale, KernelSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    support: Vec<usize>,
    /// Row-major `m×m` block over `support`.
    g: Vec<f64>,
}

impl GramMatrix {
    /// Build from a dense symmetric `n×n` matrix (zero rows are dropped).
    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let n = dense.nrows();
        assert_eq!(n, dense.ncols(), "Gram matrix must be square");
        let support: Vec<usize> = (0..n).filter(|&i| dense.row(i).iter().any(|&x| x != 0.0)).collect();
        let g = support.iter().flat_map(|&i| support.iter().map(move |&j| dense[(i, j)])).collect();
        Self { n, support, g }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Indices of observations with a nonzero row.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (Ok(a), Ok(b)) = (self.support.binary_search(&i), self.support.binary_search(&j)) else {
            return 0.0;
        };
        self.g[a * self.support.len() + b]
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.support.len();
        let mut d = DMatrix::zeros(self.n, self.n);
        for (a, &i) in self.support.iter().enumerate() {
            for (b, &j) in self.support.iter().enumerate() {
                d[(i, j)] = self.g[a * m + b];
            }
        }
        d
    }

    pub fn trace(&self) -> f64 {
        let m = self.support.len();
        (0..m).map(|a| self.g[a * m + a]).sum()
    }

    /// `wᵀGw` for a weight vector over all `n` observations.
    pub fn quad_form(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.n, "weight vector has wrong length");
        let ws: Vec<f64> = self.support.iter().map(|&i| w[i]).collect();
        self.quad_form_support(&ws)
    }

    /// `wᵀGw` with `w` already restricted to the support. Each row's inner
    /// product is a plain fixed-order sum over the upper triangle; rows are
    /// combined with compensated summation.
    pub fn quad_form_support(&self, ws: &[f64]) -> f64 {
        let m = self.support.len();
        debug_assert_eq!(ws.len(), m);
        let mut acc = Neumaier::default();
        for a in 0..m {
            let row = &self.g[a * m + a + 1..(a + 1) * m];
            let tail = &ws[a + 1..];
            let off: f64 = row.iter().zip(tail).map(|(g, w)| g * w).sum();
            acc.add(ws[a] * (self.g[a * m + a] * ws[a] + 2.0 * off));
        }
        acc.total()
    }
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Times as seen by the time kernel.
pub fn kernel_times(sample: &SurvivalSample, spec: &KernelSpec) -> Vec<f64> {
    if spec.rescale_times {
        rescale(sample.times())
    } else {
        sample.times().to_vec()
    }
}

pub fn gram(sample: &SurvivalSample, basis: &NullBasis, spec: &KernelSpec) -> GramMatrix {
    let res = residual_vectors(sample, basis);
    let a = res.matrix();
    let k = sample.k();
    let support: Vec<usize> = (0..sample.n()).filter(|&i| a.row(i).iter().any(|&x| x != 0.0)).collect();
    let m = support.len();
    let times = kernel_times(sample, spec);
    let t: Vec<f64> = support.iter().map(|&i| times[i]).collect();

    let lab = sample.kernel_labels();
    let jmat = DMatrix::from_fn(k, k, |x, y| spec.group.eval(lab[x], lab[y]));
    let av: Vec<DVector<f64>> = support.iter().map(|&i| a.row(i).transpose()).collect();
    let bv: Vec<DVector<f64>> = av.iter().map(|x| &jmat * x).collect();

    let mut g = vec![0.0; m * m];
    g.par_chunks_mut(m.max(1)).enumerate().for_each(|(r, row)| {
        if r >= m {
            return;
        }
        for c in 0..m {
            row[c] = spec.time.eval(t[r], t[c]) * av[r].dot(&bv[c]);
        }
    });
    // Symmetrise so that the upper-triangle quadratic form sees exactly G.
    for r in 0..m {
        for c in 0..r {
            let v = 0.5 * (g[r * m + c] + g[c * m + r]);
            g[r * m + c] = v;
            g[c * m + r] = v;
        }
    }
    GramMatrix { n: sample.n(), support, g }
}

pub fn gram_for_contrast(sample: &SurvivalSample, c: &ContrastMatrix, spec: &KernelSpec) -> GramMatrix {
    gram(sample, &null_space_basis(c), spec)
}

/// `Υ = (1/n) Σ_ij G_ij`.
pub fn statistic(g: &GramMatrix) -> f64 {
    let ones = vec![1.0; g.support.len()];
    g.quad_form_support(&ones) / g.n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GroupKernel, TimeKernel};

    fn ones_basis() -> NullBasis {
        NullBasis::from_matrix(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap()
    }

    fn id_spec() -> KernelSpec {
        KernelSpec::new(TimeKernel::SquaredExponential { length_sq: 1.0 }, GroupKernel::Identity, false).unwrap()
    }

    #[test]
    fn censored_sample_has_zero_gram() {
        let s = SurvivalSample::new(vec![1.0, 2.0], vec![false, false], vec![0, 1], 2).unwrap();
        let g = gram(&s, &ones_basis(), &id_spec());
        assert!(g.support().is_empty());
        assert_eq!(g.dense(), DMatrix::zeros(2, 2));
        assert_eq!(statistic(&g), 0.0);
    }

    #[test]
    fn single_event_diagonal() {
        let s = SurvivalSample::new(vec![1.0, 2.0], vec![true, false], vec![0, 1], 2).unwrap();
        let g = gram(&s, &ones_basis(), &id_spec());
        assert!((g.entry(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(g.entry(1, 1), 0.0);
    }

    #[test]
    fn tied_equal_residuals() {
        // Two group-1 events at t=1 with Y=(2,1): identical a vectors.
        let s = SurvivalSample::new(vec![1.0, 1.0, 3.0], vec![true, true, false], vec![0, 0, 1], 2).unwrap();
        let g = gram(&s, &ones_basis(), &KernelSpec::preset(1).unwrap());
        assert_eq!(g.entry(0, 1), g.entry(0, 0));
    }

    #[test]
    fn statistic_of_constant_block() {
        let d = DMatrix::from_element(2, 2, 0.5);
        assert_eq!(statistic(&GramMatrix::from_dense(&d)), 1.0);
    }

    #[test]
    fn quad_form_matches_dense() {
        let d = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let g = GramMatrix::from_dense(&d);
        assert_eq!(g.support(), &[0, 1]);
        let w = [1.0, -1.0, 7.0];
        let wv = DVector::from_column_slice(&w);
        let expect = (wv.transpose() * &d * &wv)[0];
        assert!((g.quad_form(&w) - expect).abs() < 1e-14);
        assert_eq!(g.dense(), d);
        assert_eq!(g.trace(), 3.0);
    }
}
