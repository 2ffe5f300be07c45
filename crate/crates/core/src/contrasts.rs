//! Factorial designs, contrast matrices and null-space bases.
//!
//! Groups of a crossed design are numbered lexicographically over their level
//! tuples, the last factor varying fastest. For a 2x3 design the order is
//! `(1,1) (1,2) (1,3) (2,1) (2,2) (2,3)`. Levels are 1-based, group indices are
//! 0-based.
//!
//! Builders emit integer-valued rows, so `C·1 = 0` holds exactly in floating
//! point. A main-effect row is therefore `|J|·(Λ_1· − Λ_2·)` rather than the
//! averaged difference; the scale does not change `N(C)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: usize,
}

impl Factor {
    pub fn new(name: impl Into<String>, levels: usize) -> Self {
        Self { name: name.into(), levels }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorialDesign {
    factors: Vec<Factor>,
}

impl FactorialDesign {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidDesign("a design needs at least one factor".into()));
        }
        for f in &factors {
            if f.levels == 0 {
                return Err(Error::InvalidDesign(format!("factor `{}` has no levels", f.name)));
            }
        }
        for (i, f) in factors.iter().enumerate() {
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidDesign(format!("duplicate factor name `{}`", f.name)));
            }
        }
        let design = Self { factors };
        if design.k() < 2 {
            return Err(Error::InvalidDesign("a design needs at least two groups".into()));
        }
        Ok(design)
    }

    /// Single factor with `k` levels, named `group`.
    pub fn one_way(k: usize) -> Result<Self> {
        Self::new(vec![Factor::new("group", k)])
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn k(&self) -> usize {
        self.factors.iter().map(|f| f.levels).product()
    }

    /// Resolve a factor by name, or by 1-based position.
    pub fn factor_index(&self, id: &str) -> Result<usize> {
        if let Some(i) = self.factors.iter().position(|f| f.name == id) {
            return Ok(i);
        }
        match id.parse::<usize>() {
            Ok(p) if p >= 1 && p <= self.factors.len() => Ok(p - 1),
            _ => Err(Error::UnknownFactor(id.to_string())),
        }
    }

    /// Group index of a tuple of 1-based levels.
    pub fn group_index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.factors.len() {
            return Err(Error::InvalidDesign(format!(
                "expected {} levels, got {}",
                self.factors.len(),
                levels.len()
            )));
        }
        let mut g = 0;
        for (f, &l) in self.factors.iter().zip(levels) {
            if l == 0 || l > f.levels {
                return Err(Error::InvalidDesign(format!(
                    "level {l} out of range 1..={} for factor `{}`",
                    f.levels, f.name
                )));
            }
            g = g * f.levels + (l - 1);
        }
        Ok(g)
    }

    /// Inverse of [`group_index`](Self::group_index).
    pub fn level_tuple(&self, group: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        let mut rest = group;
        for (slot, f) in out.iter_mut().zip(&self.factors).rev() {
            *slot = rest % f.levels + 1;
            rest /= f.levels;
        }
        out
    }

    /// Position of each group when cells are enumerated with the first
    /// factor varying fastest, e.g. (1,1),(2,1),(1,2),(2,2),… for a 2×J
    /// design. This is the integer label the group kernel is evaluated on, so
    /// cells that differ only in the first factor are neighbours.
    pub fn kernel_labels(&self) -> Vec<usize> {
        (0..self.k())
            .map(|g| {
                let tuple = self.level_tuple(g);
                tuple.iter().zip(&self.factors).rev().fold(0, |acc, (l, f)| acc * f.levels + (l - 1))
            })
            .collect()
    }

    pub fn group_label(&self, group: usize) -> String {
        let parts: Vec<String> = self.level_tuple(group).iter().map(|l| l.to_string()).collect();
        format!("({})", parts.join(","))
    }
}

/// The hypotheses the builder knows how to encode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisKind {
    /// `Λ_{i·} = Λ_{i'·}` for all levels `i, i'` of the factor.
    MainEffect(String),
    /// `Λ_{ij} = Λ_{i'j}` for all `i, i'` and every level combination `j` of the other factors.
    Effect(String),
    /// Highest-order interaction of all factors, one row per cell.
    Interaction,
    /// Many-to-one comparisons of every group against group 1.
    Dunnett,
    /// All pairwise group comparisons.
    Tukey,
}

impl FromStr for HypothesisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let need_arg = |a: Option<&str>| {
            a.filter(|x| !x.is_empty())
                .map(str::to_string)
                .ok_or_else(|| Error::InvalidArgument(format!("hypothesis `{s}` needs a factor, e.g. `{head}:I`")))
        };
        match head {
            "main-effect" | "me" => Ok(Self::MainEffect(need_arg(arg)?)),
            "effect" | "e" => Ok(Self::Effect(need_arg(arg)?)),
            "interaction" if arg.is_none() => Ok(Self::Interaction),
            "dunnett" if arg.is_none() => Ok(Self::Dunnett),
            "tukey" if arg.is_none() => Ok(Self::Tukey),
            _ => Err(Error::InvalidArgument(format!("unknown hypothesis `{s}`"))),
        }
    }
}

impl fmt::Display for HypothesisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MainEffect(x) => write!(f, "main-effect:{x}"),
            Self::Effect(x) => write!(f, "effect:{x}"),
            Self::Interaction => f.write_str("interaction"),
            Self::Dunnett => f.write_str("dunnett"),
            Self::Tukey => f.write_str("tukey"),
        }
    }
}

/// An `r x k` matrix with zero row sums and no zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix {
    matrix: DMatrix<f64>,
    label: String,
    row_labels: Vec<String>,
}

impl ContrastMatrix {
    pub fn new(matrix: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        let row_labels = (1..=matrix.nrows()).map(|i| format!("row{i}")).collect();
        Self::with_row_labels(matrix, label, row_labels)
    }

    pub fn with_row_labels(
        matrix: DMatrix<f64>,
        label: impl Into<String>,
        row_labels: Vec<String>,
    ) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() < 2 {
            return Err(Error::InvalidContrast(format!(
                "need at least one row and two columns, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if row_labels.len() != matrix.nrows() {
            return Err(Error::InvalidContrast("one label per row required".into()));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidContrast(format!("row {} has non-finite entries", i + 1)));
            }
            let scale = row.amax();
            if scale == 0.0 {
                return Err(Error::InvalidContrast(format!("row {} is all zero", i + 1)));
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > 1e-12 * scale * row.len() as f64 {
                return Err(Error::InvalidContrast(format!("row {} sums to {sum}, not 0", i + 1)));
            }
        }
        Ok(Self { matrix, label: label.into(), row_labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidContrast("rows have different lengths".into()));
        }
        let m = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Self::new(m, label)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of groups `k`.
    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    /// Left-multiply by an invertible `D` (same null space).
    pub fn recombined(&self, d: &DMatrix<f64>) -> Result<Self> {
        if d.nrows() != d.ncols() || d.ncols() != self.rows() {
            return Err(Error::InvalidContrast("recombination matrix has wrong shape".into()));
        }
        Self::new(d * &self.matrix, format!("{} (recombined)", self.label))
    }
}

/// Columns form an orthonormal basis of `N(C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullBasis {
    v: DMatrix<f64>,
}

impl NullBasis {
    /// Use an explicit `k x d` basis. Columns must be linearly independent.
    pub fn from_matrix(v: DMatrix<f64>) -> Result<Self> {
        if v.ncols() == 0 || v.nrows() < v.ncols() {
            return Err(Error::InvalidContrast(format!("basis of shape {}x{} is not usable", v.nrows(), v.ncols())));
        }
        if numerical_rank(&v) != v.ncols() {
            return Err(Error::InvalidContrast("basis columns are linearly dependent".into()));
        }
        Ok(Self { v })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn k(&self) -> usize {
        self.v.nrows()
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }
}

/// Rank by singular values against `RANK_TOL * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Orthonormal basis of the null space of `C`, via SVD.
pub fn null_space_basis(c: &ContrastMatrix) -> NullBasis {
    let k = c.k();
    let r = c.rows();
    // Pad with zero rows so the SVD returns a full k x k right factor.
    let padded = if r < k {
        let mut m = DMatrix::zeros(k, k);
        m.view_mut((0, 0), (r, k)).copy_from(c.matrix());
        m
    } else {
        c.matrix().clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let null_rows: Vec<usize> = (0..v_t.nrows()).filter(|&i| sv[i] <= RANK_TOL * smax).collect();
    let mut v = DMatrix::zeros(k, null_rows.len());
    for (col, &i) in null_rows.iter().enumerate() {
        for j in 0..k {
            v[(j, col)] = v_t[(i, j)];
        }
    }
    NullBasis { v }
}

/// One single-row contrast per row of `C`.
pub fn split_rows(c: &ContrastMatrix) -> Vec<ContrastMatrix> {
    (0..c.rows())
        .map(|i| {
            let row = c.matrix().rows(i, 1).into_owned();
            let name = c.row_labels()[i].clone();
            ContrastMatrix { matrix: row, label: name.clone(), row_labels: vec![name] }
        })
        .collect()
}

/// Encode a hypothesis about `design` as a contrast matrix.
pub fn build_hypothesis(design: &FactorialDesign, kind: &HypothesisKind) -> Result<ContrastMatrix> {
    let k = design.k();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    match kind {
        HypothesisKind::MainEffect(id) => {
            let f = design.factor_index(id)?;
            let levels = require_levels(design, f)?;
            for l in 2..=levels {
                let row: Vec<f64> = (0..k)
                    .map(|g| {
                        let lv = design.level_tuple(g)[f];
                        f64::from(u8::from(lv == 1)) - f64::from(u8::from(lv == l))
                    })
                    .collect();
                rows.push(row);
                labels.push(format!("L{}=L{}", dotted(design, f, 1), dotted(design, f, l)));
            }
        }
        HypothesisKind::Effect(id) => {
            let f = design.factor_index(id)?;
            let levels = require_levels(design, f)?;
            // Outer loop over the other factors' level combinations, in group order.
            for g in 0..k {
                let tuple = design.level_tuple(g);
                if tuple[f] != 1 {
                    continue;
                }
                for l in 2..=levels {
                    let mut other = tuple.clone();
                    other[f] = l;
                    let h = design.group_index(&other)?;
                    let mut row = vec![0.0; k];
                    row[g] = 1.0;
                    row[h] = -1.0;
                    rows.push(row);
                    labels.push(format!("L{}=L{}", design.group_label(g), design.group_label(h)));
                }
            }
        }
        HypothesisKind::Interaction => {
            if design.factors().len() < 2 {
                return Err(Error::InvalidDesign("interaction needs at least two factors".into()));
            }
            for f in 0..design.factors().len() {
                require_levels(design, f)?;
            }
            // Row for cell g: prod_f (L_f * [lev_f(h) == lev_f(g)] - 1).
            for g in 0..k {
                let tg = design.level_tuple(g);
                let row: Vec<f64> = (0..k)
                    .map(|h| {
                        let th = design.level_tuple(h);
                        design
                            .factors()
                            .iter()
                            .enumerate()
                            .map(|(f, fac)| {
                                let same = if tg[f] == th[f] { fac.levels as f64 } else { 0.0 };
                                same - 1.0
                            })
                            .product()
                    })
                    .collect();
                rows.push(row);
                labels.push(format!("S{}=0", design.group_label(g)));
            }
        }
        HypothesisKind::Dunnett => {
            for j in 1..k {
                let mut row = vec![0.0; k];
                row[0] = -1.0;
                row[j] = 1.0;
                rows.push(row);
                labels.push(format!("L{}=L{}", design.group_label(0), design.group_label(j)));
            }
        }
        HypothesisKind::Tukey => {
            for i in 0..k {
                for j in i + 1..k {
                    let mut row = vec![0.0; k];
                    row[i] = -1.0;
                    row[j] = 1.0;
                    rows.push(row);
                    labels.push(format!("L{}=L{}", design.group_label(i), design.group_label(j)));
                }
            }
        }
    }
    let m = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    ContrastMatrix::with_row_labels(m, kind.to_string(), labels)
}

fn require_levels(design: &FactorialDesign, f: usize) -> Result<usize> {
    let fac = &design.factors()[f];
    if fac.levels < 2 {
        return Err(Error::InvalidDesign(format!("factor `{}` has a single level", fac.name)));
    }
    Ok(fac.levels)
}

/// `(l,.,.)` style label with `.` for averaged-out factors.
fn dotted(design: &FactorialDesign, f: usize, level: usize) -> String {
    let parts: Vec<String> = (0..design.factors().len())
        .map(|i| if i == f { level.to_string() } else { ".".to_string() })
        .collect();
    format!("({})", parts.join(","))
}
