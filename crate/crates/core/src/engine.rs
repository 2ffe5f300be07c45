//! Counting-process machinery: risk sets, the projection `Q̂(t)`, residual
//! vectors `a_i`, the constrained cumulative hazard and the weighted log-rank
//! statistic.
//!
//! Risk sets use the `T_i >= t` convention, so every subject failing at `t`
//! (including tied failures) is at risk at `t`. Events are ordered by time,
//! ties by original index.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrasts::{NullBasis, RANK_TOL};
use crate::error::{Error, Result};

/// Right-censored observations with group labels `0..k`.
///
/// `kernel_labels[g]` is the integer at which the group kernel sees group
/// `g`. It defaults to `g`; factorial data usually carry
/// [`FactorialDesign::kernel_labels`](crate::contrasts::FactorialDesign::kernel_labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    times: Vec<f64>,
    status: Vec<bool>,
    groups: Vec<usize>,
    k: usize,
    kernel_labels: Vec<usize>,
}

impl SurvivalSample {
    pub fn new(times: Vec<f64>, status: Vec<bool>, groups: Vec<usize>, k: usize) -> Result<Self> {
        let n = times.len();
        if status.len() != n || groups.len() != n {
            return Err(Error::InvalidSample(format!(
                "length mismatch: {} times, {} statuses, {} groups",
                n,
                status.len(),
                groups.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidSample("no observations".into()));
        }
        if k < 2 {
            return Err(Error::InvalidSample(format!("need at least two groups, got k = {k}")));
        }
        if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidSample(format!("observation {i}: time {} is not a positive finite number", times[i])));
        }
        if let Some(i) = groups.iter().position(|&g| g >= k) {
            return Err(Error::InvalidSample(format!("observation {i}: group {} outside 0..{k}", groups[i])));
        }
        Ok(Self { times, status, groups, k, kernel_labels: (0..k).collect() })
    }

    /// Replaces the group-kernel embedding; `labels` must be a permutation of `0..k`.
    pub fn with_kernel_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if labels.len() != self.k || !labels.iter().all(|&l| l < self.k && !std::mem::replace(&mut seen[l], true)) {
            return Err(Error::InvalidSample(format!("kernel labels {labels:?} are not a permutation of 0..{}", self.k)));
        }
        self.kernel_labels = labels;
        Ok(self)
    }

    pub fn kernel_labels(&self) -> &[usize] {
        &self.kernel_labels
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn event_count(&self) -> usize {
        self.status.iter().filter(|&&d| d).count()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &g in &self.groups {
            c[g] += 1;
        }
        c
    }

    /// `Y(t)`: per-group count of subjects with `T_i >= t`.
    pub fn at_risk(&self, t: f64) -> Vec<usize> {
        let mut y = vec![0; self.k];
        for (&ti, &g) in self.times.iter().zip(&self.groups) {
            if ti >= t {
                y[g] += 1;
            }
        }
        y
    }

    /// Same observations with replaced times.
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        Self::new(times, self.status.clone(), self.groups.clone(), self.k)?.with_kernel_labels(self.kernel_labels.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    /// Index of the observation in the sample.
    pub index: usize,
    pub time: f64,
    pub group: usize,
    pub at_risk: Vec<usize>,
}

/// Observed events in ascending time order, each with its risk vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTable {
    rows: Vec<EventRow>,
}

impl EventTable {
    pub fn rows(&self) -> &[EventRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn event_table(sample: &SurvivalSample) -> Result<EventTable> {
    if sample.event_count() == 0 {
        return Err(Error::NoEvents);
    }
    let rows = sweep_events(sample);
    Ok(EventTable { rows })
}

/// Sorted events with risk vectors; empty when there are no events.
fn sweep_events(sample: &SurvivalSample) -> Vec<EventRow> {
    let n = sample.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample.times[a].total_cmp(&sample.times[b]).then(a.cmp(&b)));

    let mut counts = vec![0usize; sample.k];
    let mut rows = Vec::with_capacity(sample.event_count());
    // Walk tie blocks from the largest time down, so counts hold #{T >= t}.
    let mut end = n;
    while end > 0 {
        let t = sample.times[order[end - 1]];
        let mut start = end - 1;
        while start > 0 && sample.times[order[start - 1]] == t {
            start -= 1;
        }
        for &i in &order[start..end] {
            counts[sample.groups[i]] += 1;
        }
        for &i in order[start..end].iter().rev() {
            if sample.status[i] {
                rows.push(EventRow { index: i, time: t, group: sample.groups[i], at_risk: counts.clone() });
            }
        }
        end = start;
    }
    rows.reverse();
    rows
}

/// `Q̂(t)` together with the full-rank indicator `Î_F(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionAt {
    pub q: DMatrix<f64>,
    pub full_rank: bool,
}

/// Thin SVD of `X̂ = diag(Y) V / n`, or `None` when `X̂` is rank deficient.
struct DesignSvd {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
}

fn design_svd(y: &[f64], basis: &NullBasis, n: usize) -> Option<DesignSvd> {
    let v = basis.matrix();
    let k = basis.k();
    assert_eq!(y.len(), k, "risk vector has wrong length");
    let scale = 1.0 / n as f64;
    let x = DMatrix::from_fn(k, basis.dim(), |i, j| y[i] * v[(i, j)] * scale);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if smax <= 0.0 || svd.singular_values.iter().any(|&s| s <= RANK_TOL * smax) {
        return None;
    }
    Some(DesignSvd {
        u: svd.u.expect("left vectors requested"),
        v_t: svd.v_t.expect("right vectors requested"),
        sigma: svd.singular_values,
    })
}

fn projection_from_u(u: &DMatrix<f64>) -> DMatrix<f64> {
    let k = u.nrows();
    let mut q = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..=i {
            let mut s = 0.0;
            for c in 0..u.ncols() {
                s += u[(i, c)] * u[(j, c)];
            }
            q[(i, j)] -= s;
            if i != j {
                q[(j, i)] = q[(i, j)];
            }
        }
    }
    q
}

/// `Q̂ = I − X̂ X̂⁺` for `X̂ = diag(Y) V / n`, computed from an orthonormal
/// basis of `range(X̂)`; zero when `X̂` is rank deficient.
pub fn projection_at(y: &[f64], basis: &NullBasis, n: usize) -> ProjectionAt {
    match design_svd(y, basis, n) {
        Some(svd) => ProjectionAt { q: projection_from_u(&svd.u), full_rank: true },
        None => ProjectionAt { q: DMatrix::zeros(basis.k(), basis.k()), full_rank: false },
    }
}

fn as_f64(y: &[usize]) -> Vec<f64> {
    y.iter().map(|&c| c as f64).collect()
}

/// Residual vectors `a_i = Δ_i Q̂(T_i) e_{X_i}`, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    a: DMatrix<f64>,
}

impl Residuals {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.a.row(i).iter().copied().collect()
    }
}

pub fn residual_vectors(sample: &SurvivalSample, basis: &NullBasis) -> Residuals {
    assert_eq!(sample.k(), basis.k(), "basis and sample disagree on k");
    let n = sample.n();
    let mut a = DMatrix::zeros(n, sample.k());
    let mut cached: Option<(Vec<usize>, ProjectionAt)> = None;
    for ev in sweep_events(sample) {
        let fresh = !matches!(&cached, Some((y, _)) if *y == ev.at_risk);
        if fresh {
            let p = projection_at(&as_f64(&ev.at_risk), basis, n);
            cached = Some((ev.at_risk.clone(), p));
        }
        let (_, p) = cached.as_ref().expect("projection cached above");
        if p.full_rank {
            for l in 0..sample.k() {
                a[(ev.index, l)] = p.q[(l, ev.group)];
            }
        }
    }
    Residuals { a }
}

/// `Û₀(w) = n^{-1/2} Σ_events Σ_ℓ w(T_i, ℓ) (a_i)_ℓ`, groups passed 0-based.
pub fn weighted_logrank<F>(sample: &SurvivalSample, basis: &NullBasis, w: F) -> f64
where
    F: Fn(f64, usize) -> f64,
{
    let res = residual_vectors(sample, basis);
    let mut acc = 0.0;
    for i in 0..sample.n() {
        if !sample.status()[i] {
            continue;
        }
        for l in 0..sample.k() {
            let a = res.a[(i, l)];
            if a != 0.0 {
                acc += w(sample.times()[i], l) * a;
            }
        }
    }
    acc / (sample.n() as f64).sqrt()
}

/// Right-continuous step function with vector values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    pub times: Vec<f64>,
    /// `values[m]` is the cumulative value on `[times[m], times[m+1])`.
    pub values: Vec<Vec<f64>>,
    pub k: usize,
}

impl CumulativeHazard {
    pub fn at(&self, t: f64) -> Vec<f64> {
        let m = self.times.partition_point(|&s| s <= t);
        if m == 0 {
            vec![0.0; self.k]
        } else {
            self.values[m - 1].clone()
        }
    }

    fn push_jump(&mut self, t: f64, jump: &[f64]) {
        let prev = self.values.last().cloned().unwrap_or_else(|| vec![0.0; self.k]);
        let next: Vec<f64> = prev.iter().zip(jump).map(|(p, j)| p + j).collect();
        if self.times.last() == Some(&t) {
            *self.values.last_mut().expect("nonempty") = next;
        } else {
            self.times.push(t);
            self.values.push(next);
        }
    }
}

/// Constrained OLS estimate of the cumulative hazards under `CΛ = 0`:
/// `dΛ̂ = n^{-1} Î_F V (X̂ᵀX̂)^{-1} X̂ᵀ dN`, with the pseudo-inverse
/// taken from the SVD of `X̂`.
pub fn constrained_cumhaz(sample: &SurvivalSample, basis: &NullBasis) -> CumulativeHazard {
    let n = sample.n();
    let k = sample.k();
    let v = basis.matrix();
    let mut out = CumulativeHazard { times: Vec::new(), values: Vec::new(), k };
    for ev in sweep_events(sample) {
        let Some(svd) = design_svd(&as_f64(&ev.at_risk), basis, n) else {
            continue;
        };
        // pinv(X̂) e_g = W Σ^{-1} Uᵀ e_g
        let d = basis.dim();
        let mut coef = DVector::zeros(d);
        for c in 0..d {
            let uc = svd.u[(ev.group, c)] / svd.sigma[c];
            for r in 0..d {
                coef[r] += svd.v_t[(c, r)] * uc;
            }
        }
        let jump: Vec<f64> = (0..k).map(|l| (v.row(l) * &coef)[0] / n as f64).collect();
        out.push_jump(ev.time, &jump);
    }
    out
}

/// Right-continuous scalar step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn at(&self, t: f64) -> f64 {
        let m = self.times.partition_point(|&s| s <= t);
        if m == 0 {
            0.0
        } else {
            self.values[m - 1]
        }
    }
}

/// Per-group Nelson–Aalen estimates.
pub fn nelson_aalen(sample: &SurvivalSample) -> Vec<StepFunction> {
    let mut out = vec![StepFunction { times: Vec::new(), values: Vec::new() }; sample.k()];
    for ev in sweep_events(sample) {
        let f = &mut out[ev.group];
        let jump = 1.0 / ev.at_risk[ev.group] as f64;
        let prev = f.values.last().copied().unwrap_or(0.0);
        if f.times.last() == Some(&ev.time) {
            *f.values.last_mut().expect("nonempty") = prev + jump;
        } else {
            f.times.push(ev.time);
            f.values.push(prev + jump);
        }
    }
    out
}

/// Last event time at which `diag(Y)V` has full rank, if any.
pub fn last_full_rank_time(sample: &SurvivalSample, basis: &NullBasis) -> Option<f64> {
    sweep_events(sample)
        .iter()
        .rev()
        .find(|ev| design_svd(&as_f64(&ev.at_risk), basis, sample.n()).is_some())
        .map(|ev| ev.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrasts::{null_space_basis, ContrastMatrix};

    fn three_point() -> SurvivalSample {
        SurvivalSample::new(vec![1.0, 2.0, 3.0], vec![true, true, true], vec![0, 0, 1], 2).unwrap()
    }

    fn ones_basis() -> NullBasis {
        NullBasis::from_matrix(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap()
    }

    #[test]
    fn risk_vectors() {
        let s = three_point();
        assert_eq!(s.at_risk(2.0), vec![1, 1]);
        assert_eq!(s.at_risk(0.5), vec![2, 1]);
        let t = event_table(&s).unwrap();
        assert_eq!(t.rows()[1].at_risk, vec![1, 1]);
    }

    #[test]
    fn single_late_event() {
        let s = SurvivalSample::new(vec![1.0, 2.0, 3.0], vec![false, false, true], vec![0, 0, 1], 2).unwrap();
        let t = event_table(&s).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows()[0].time, 3.0);
        assert_eq!(t.rows()[0].at_risk, vec![0, 1]);
    }

    #[test]
    fn kernel_labels_must_be_a_permutation() {
        let s = three_point();
        assert_eq!(s.kernel_labels(), &[0, 1]);
        assert!(s.clone().with_kernel_labels(vec![0, 0]).is_err());
        assert!(s.clone().with_kernel_labels(vec![0, 2]).is_err());
        let swapped = s.with_kernel_labels(vec![1, 0]).unwrap();
        assert_eq!(swapped.with_times(vec![4.0, 5.0, 6.0]).unwrap().kernel_labels(), &[1, 0]);
    }

    #[test]
    fn no_events_is_an_error() {
        let s = SurvivalSample::new(vec![1.0, 2.0], vec![false, false], vec![0, 1], 2).unwrap();
        assert!(matches!(event_table(&s), Err(Error::NoEvents)));
    }

    #[test]
    fn ties_are_all_at_risk() {
        let s = SurvivalSample::new(vec![2.0, 1.0, 2.0, 2.0], vec![true, true, true, false], vec![0, 1, 1, 0], 2).unwrap();
        let t = event_table(&s).unwrap();
        let idx: Vec<usize> = t.rows().iter().map(|r| r.index).collect();
        assert_eq!(idx, vec![1, 0, 2]);
        assert_eq!(t.rows()[1].at_risk, vec![2, 1]);
        assert_eq!(t.rows()[2].at_risk, vec![2, 1]);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(SurvivalSample::new(vec![0.0], vec![true], vec![0], 2).is_err());
        assert!(SurvivalSample::new(vec![f64::NAN], vec![true], vec![0], 2).is_err());
        assert!(SurvivalSample::new(vec![1.0], vec![true], vec![2], 2).is_err());
        assert!(SurvivalSample::new(vec![1.0, 2.0], vec![true], vec![0, 1], 2).is_err());
    }

    #[test]
    fn projection_examples() {
        let v = ones_basis();
        let p = projection_at(&[1.0, 1.0], &v, 2);
        assert!(p.full_rank);
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((p.q - expect).amax() < 1e-14);

        let p = projection_at(&[0.0, 0.0], &v, 2);
        assert!(!p.full_rank);
        assert_eq!(p.q, DMatrix::zeros(2, 2));

        let p = projection_at(&[3.0, 0.0], &v, 3);
        assert!(p.full_rank);
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!((p.q - expect).amax() < 1e-14);
    }

    #[test]
    fn residual_examples() {
        let s = SurvivalSample::new(vec![1.0, 2.0], vec![true, false], vec![0, 1], 2).unwrap();
        let r = residual_vectors(&s, &ones_basis());
        let a0 = r.row(0);
        assert!((a0[0] - 0.5).abs() < 1e-14 && (a0[1] + 0.5).abs() < 1e-14);
        assert_eq!(r.row(1), vec![0.0, 0.0]);
    }

    #[test]
    fn event_after_rank_loss_has_zero_residual() {
        // N(C) = span{(1,1,0), (0,0,1)}; once groups 1 and 2 are both empty
        // diag(Y)V has rank one.
        let c = ContrastMatrix::from_rows(&[vec![1.0, -1.0, 0.0]], "g1=g2").unwrap();
        let v = null_space_basis(&c);
        let s = SurvivalSample::new(vec![1.0, 2.0, 3.0], vec![true, true, true], vec![0, 2, 2], 3).unwrap();
        let r = residual_vectors(&s, &v);
        // After t=1 group 3 (index 2) alone is at risk while e_3 is in N(C): rank deficient.
        assert_eq!(r.row(1), vec![0.0; 3]);
        assert_eq!(r.row(2), vec![0.0; 3]);
    }

    #[test]
    fn logrank_examples() {
        let s = three_point();
        let v = ones_basis();
        assert_eq!(weighted_logrank(&s, &v, |_, _| 0.0), 0.0);
        // Q̂ e_g is orthogonal to Y(t), not to 1: a constant weight leaves
        // only the t=1 event (Y=(2,1), a=(0.2,−0.4)) contributing.
        let u = weighted_logrank(&s, &v, |_, _| 2.5);
        assert!((u - 2.5 * -0.2 / 3f64.sqrt()).abs() < 1e-14);
        // Weighting by the risk set annihilates every residual.
        let u = weighted_logrank(&s, &v, |t, g| s.at_risk(t)[g] as f64);
        assert!(u.abs() < 1e-14);

        let one = SurvivalSample::new(vec![1.0], vec![true], vec![0], 2).unwrap();
        let u = weighted_logrank(&one, &v, |_, g| if g == 1 { 1.0 } else { 0.0 });
        assert_eq!(u, 0.0);
    }

    #[test]
    fn constrained_cumhaz_examples() {
        let v = ones_basis();
        let none = SurvivalSample::new(vec![1.0, 2.0], vec![false, false], vec![0, 1], 2).unwrap();
        assert_eq!(constrained_cumhaz(&none, &v).at(10.0), vec![0.0, 0.0]);

        let s = SurvivalSample::new(vec![1.0, 2.0], vec![true, false], vec![0, 1], 2).unwrap();
        let h = constrained_cumhaz(&s, &v);
        let at = h.at(1.0);
        assert!((at[0] - 0.5).abs() < 1e-14 && (at[1] - 0.5).abs() < 1e-14);
        assert_eq!(h.at(0.5), vec![0.0, 0.0]);
    }

    #[test]
    fn nelson_aalen_examples() {
        let s = SurvivalSample::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![true, false, false, false, false], vec![0, 0, 0, 0, 1], 2).unwrap();
        let na = nelson_aalen(&s);
        assert_eq!(na[0].at(1.0), 0.25);
        assert_eq!(na[1].at(100.0), 0.0);

        let s = SurvivalSample::new(vec![1.0, 2.0, 5.0], vec![true, true, false], vec![0, 0, 1], 2).unwrap();
        let na = nelson_aalen(&s);
        assert_eq!(na[0].at(1.0), 0.5);
        assert_eq!(na[0].at(2.0), 1.5);
    }

    #[test]
    fn full_rank_horizon() {
        let c = ContrastMatrix::from_rows(&[vec![1.0, -1.0, 0.0]], "g1=g2").unwrap();
        let v = null_space_basis(&c);
        let s = SurvivalSample::new(vec![1.0, 2.0, 3.0], vec![true, true, true], vec![0, 2, 2], 3).unwrap();
        assert_eq!(last_full_rank_time(&s, &v), Some(1.0));
    }
}
