//! Random matrix ensembles: sparse Erdős–Rényi, sparse matrices with a
//! variance profile, the GOE reference, and single-entry deformations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dense real symmetric matrix.
///
/// Only the upper triangle (diagonal included) is stored, so `get(i, j) ==
/// get(j, i)` holds by construction. Entries are kept as a centered part plus
/// a common entry mean; the mean is added back on access. For an ensemble
/// with rank-one mean `f|e><e|` the stored mean is `f / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    centered: Vec<f64>,
    mean: f64,
}

impl SymmetricMatrix {
    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix {
            n,
            centered: vec![0.0; n * (n + 1) / 2],
            mean: 0.0,
        }
    }

    /// Build from a function of the upper-triangle index pair `(i, j)`, `i <= j`.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut centered = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                centered.push(f(i, j));
            }
        }
        SymmetricMatrix {
            n,
            centered,
            mean: 0.0,
        }
    }

    /// Build from full rows; fails unless the input is square, finite and symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix rows must form a square array"));
        }
        for i in 0..n {
            for j in 0..n {
                if !rows[i][j].is_finite() {
                    return Err(Error::invalid(format!("entry ({i}, {j}) is not finite")));
                }
                if rows[i][j] != rows[j][i] {
                    return Err(Error::invalid(format!("entries ({i}, {j}) and ({j}, {i}) differ")));
                }
            }
        }
        Ok(Self::from_upper_fn(n, |i, j| rows[i][j]))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self::from_upper_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * (2 * self.n - i + 1) / 2 + (j - i)
    }

    /// Entry `(i, j)` of the materialized matrix.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.centered[self.index(i, j)] + self.mean
    }

    /// Entry `(i, j)` with the common mean removed.
    #[inline]
    pub fn centered(&self, i: usize, j: usize) -> f64 {
        self.centered[self.index(i, j)]
    }

    pub fn set_centered(&mut self, i: usize, j: usize, value: f64) {
        let k = self.index(i, j);
        self.centered[k] = value;
    }

    pub fn entry_mean(&self) -> f64 {
        self.mean
    }

    pub fn with_entry_mean(mut self, mean: f64) -> Self {
        self.mean = mean;
        self
    }

    /// Centered upper-triangle entries in row-major order.
    pub fn centered_upper(&self) -> &[f64] {
        &self.centered
    }

    /// Full row-major copy of the materialized matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.get(i, j);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.centered.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.n)
            .flat_map(|i| (i..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j).abs())
            .fold(0.0, f64::max)
    }

    /// `(row, col, value)` CSV of the upper triangle, for debugging dumps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for i in 0..self.n {
            for j in i..self.n {
                let _ = writeln!(out, "{},{},{:e}", i, j, self.get(i, j));
            }
        }
        out
    }
}

/// Admissible range for `N * s_ij` in a variance profile.
pub const PROFILE_LOWER: f64 = 0.1;
pub const PROFILE_UPPER: f64 = 10.0;

/// Entry variance profile, expressed through the order-one values `N * s_ij`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceProfile {
    /// `s_ij = 1/N` everywhere.
    #[default]
    Uniform,
    /// GOE profile: `s_ij = (1 + δ_ij) / N`.
    Goe,
    /// `N s_ij = low` when `i + j` is even and `high` otherwise.
    Alternating { low: f64, high: f64 },
    /// Explicit symmetric table of `N s_ij`.
    Explicit(Vec<Vec<f64>>),
}

impl VarianceProfile {
    /// `N * s_ij`.
    #[inline]
    pub fn scaled(&self, i: usize, j: usize) -> f64 {
        match self {
            VarianceProfile::Uniform => 1.0,
            VarianceProfile::Goe => {
                if i == j {
                    2.0
                } else {
                    1.0
                }
            }
            VarianceProfile::Alternating { low, high } => {
                if (i + j).is_multiple_of(2) {
                    *low
                } else {
                    *high
                }
            }
            VarianceProfile::Explicit(table) => table[i][j],
        }
    }

    /// `s_ij` for an `n`-dimensional matrix.
    pub fn variance(&self, i: usize, j: usize, n: usize) -> f64 {
        self.scaled(i, j) / n as f64
    }

    /// `r = min_{i<=j} N s_ij`.
    pub fn min_scaled(&self, n: usize) -> f64 {
        match self {
            VarianceProfile::Uniform | VarianceProfile::Goe => 1.0,
            VarianceProfile::Alternating { low, high } => {
                if n >= 2 {
                    low.min(*high)
                } else {
                    *low
                }
            }
            VarianceProfile::Explicit(table) => (0..n)
                .flat_map(|i| (i..n).map(move |j| (i, j)))
                .map(|(i, j)| table[i][j])
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn violations(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        let in_bounds = |v: f64| v.is_finite() && (PROFILE_LOWER..=PROFILE_UPPER).contains(&v);
        match self {
            VarianceProfile::Uniform | VarianceProfile::Goe => {}
            VarianceProfile::Alternating { low, high } => {
                for v in [*low, *high] {
                    if !in_bounds(v) {
                        out.push(format!(
                            "profile value N*s_ij = {v} outside [{PROFILE_LOWER}, {PROFILE_UPPER}]"
                        ));
                    }
                }
            }
            VarianceProfile::Explicit(table) => {
                if table.len() != n || table.iter().any(|r| r.len() != n) {
                    out.push(format!("explicit profile must be {n}x{n}"));
                    return out;
                }
                'outer: for i in 0..n {
                    for j in 0..n {
                        let v = table[i][j];
                        if !in_bounds(v) {
                            out.push(format!(
                                "profile value N*s_{i}{j} = {v} outside [{PROFILE_LOWER}, {PROFILE_UPPER}]"
                            ));
                            break 'outer;
                        }
                        if v != table[j][i] {
                            out.push(format!("explicit profile is not symmetric at ({i}, {j})"));
                            break 'outer;
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    ErdosRenyi,
    SparseGeneric,
    Goe,
}

/// Parameters of a sampling law.
///
/// `mean_f` is the coefficient of the rank-one mean `f|e><e|`, so each entry
/// has mean `f / N`. For Erdős–Rényi it is derived as `γ q` and may be omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n: usize,
    pub kind: EnsembleKind,
    /// Sparsity exponent `a` with `q = N^a`. Ignored for the GOE.
    #[serde(default = "default_q_exponent")]
    pub q_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_f: Option<f64>,
    #[serde(default)]
    pub profile: VarianceProfile,
}

fn default_q_exponent() -> f64 {
    0.4
}

impl EnsembleSpec {
    pub fn erdos_renyi(n: usize, q_exponent: f64) -> Self {
        EnsembleSpec {
            n,
            kind: EnsembleKind::ErdosRenyi,
            q_exponent,
            mean_f: None,
            profile: VarianceProfile::Uniform,
        }
    }

    pub fn sparse_generic(n: usize, q_exponent: f64, mean_f: f64, profile: VarianceProfile) -> Self {
        EnsembleSpec {
            n,
            kind: EnsembleKind::SparseGeneric,
            q_exponent,
            mean_f: Some(mean_f),
            profile,
        }
    }

    pub fn goe(n: usize) -> Self {
        EnsembleSpec {
            n,
            kind: EnsembleKind::Goe,
            q_exponent: 0.5,
            mean_f: None,
            profile: VarianceProfile::Goe,
        }
    }

    /// Sparsity parameter `q = N^a`; `sqrt(N)` for the GOE.
    pub fn q(&self) -> f64 {
        match self.kind {
            EnsembleKind::Goe => (self.n as f64).sqrt(),
            _ => (self.n as f64).powf(self.q_exponent),
        }
    }

    /// Entry probability `p = q^2 / N` of the underlying Bernoulli law.
    pub fn edge_probability(&self) -> f64 {
        let q = self.q();
        q * q / self.n as f64
    }

    /// `γ = (1 - q^2/N)^{-1/2}`.
    pub fn gamma(&self) -> f64 {
        (1.0 - self.edge_probability()).sqrt().recip()
    }

    /// Rank-one mean coefficient `f`.
    pub fn mean_f(&self) -> f64 {
        match self.kind {
            EnsembleKind::ErdosRenyi => self.gamma() * self.q(),
            _ => self.mean_f.unwrap_or(0.0),
        }
    }

    /// Mean of every entry, `f / N`.
    pub fn entry_mean(&self) -> f64 {
        self.mean_f() / self.n as f64
    }

    /// The variance profile the sampler actually uses.
    pub fn effective_profile(&self) -> VarianceProfile {
        match self.kind {
            EnsembleKind::ErdosRenyi => VarianceProfile::Uniform,
            EnsembleKind::Goe => VarianceProfile::Goe,
            EnsembleKind::SparseGeneric => self.profile.clone(),
        }
    }

    /// Every violated constraint; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.n;
        if n < 2 {
            out.push(format!("dimension n must be at least 2, got {n}"));
            return out;
        }
        let sparse = matches!(self.kind, EnsembleKind::ErdosRenyi | EnsembleKind::SparseGeneric);
        if sparse {
            let a = self.q_exponent;
            if !(a > 0.0 && a <= 0.5) {
                out.push(format!("q_exponent must lie in (0, 1/2], got {a}"));
            }
            if self.q() * self.q() >= n as f64 {
                out.push(format!(
                    "q^2 = {} must be strictly below n = {n}",
                    self.q() * self.q()
                ));
            }
        }
        match self.kind {
            EnsembleKind::ErdosRenyi => {
                if self.profile != VarianceProfile::Uniform {
                    out.push("erdos_renyi requires the uniform profile".into());
                }
                if let Some(f) = self.mean_f {
                    let derived = self.mean_f();
                    if (f - derived).abs() > 1e-9 * derived.abs().max(1.0) {
                        out.push(format!(
                            "erdos_renyi mean_f is derived as gamma*q = {derived}, got {f}"
                        ));
                    }
                }
            }
            EnsembleKind::SparseGeneric => out.extend(self.profile.violations(n)),
            EnsembleKind::Goe => {}
        }
        let f = self.mean_f();
        if !(f.is_finite() && f >= 0.0 && f <= (n as f64).sqrt()) {
            out.push(format!("mean f must lie in [0, sqrt(n)], got {f}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    /// Draw one matrix from the law described by this spec.
    pub fn sample(&self, rng: &mut RngStream) -> Result<SymmetricMatrix> {
        match self.kind {
            EnsembleKind::ErdosRenyi => sample_erdos_renyi(self, rng),
            EnsembleKind::SparseGeneric => sample_sparse_generic(self, rng),
            EnsembleKind::Goe => {
                self.validate()?;
                Ok(sample_goe(self.n, rng)?.with_entry_mean(self.entry_mean()))
            }
        }
    }
}

/// Erdős–Rényi adjacency matrix rescaled by `γ/q`: each entry is `γ/q` with
/// probability `q^2/N` and zero otherwise.
pub fn sample_erdos_renyi(spec: &EnsembleSpec, rng: &mut RngStream) -> Result<SymmetricMatrix> {
    if spec.kind != EnsembleKind::ErdosRenyi {
        return Err(Error::invalid("sample_erdos_renyi needs kind erdos_renyi"));
    }
    spec.validate()?;
    let p = spec.edge_probability();
    let scale = spec.gamma() / spec.q();
    let (hit, miss) = (scale * (1.0 - p), -scale * p);
    let mut draw_err = None;
    let m = SymmetricMatrix::from_upper_fn(spec.n, |_, _| match rng.bernoulli(p) {
        Ok(true) => hit,
        Ok(false) => miss,
        Err(e) => {
            draw_err = Some(e);
            0.0
        }
    });
    match draw_err {
        Some(e) => Err(e),
        None => Ok(m.with_entry_mean(spec.entry_mean())),
    }
}

/// GOE: off-diagonal entries `N(0, 1/N)`, diagonal entries `N(0, 2/N)`.
pub fn sample_goe(n: usize, rng: &mut RngStream) -> Result<SymmetricMatrix> {
    if n < 2 {
        return Err(Error::invalid(format!("GOE dimension must be at least 2, got {n}")));
    }
    let off = (1.0 / n as f64).sqrt();
    let diag = (2.0 / n as f64).sqrt();
    Ok(SymmetricMatrix::from_upper_fn(n, |i, j| {
        let sd = if i == j { diag } else { off };
        sd * rng.standard_normal()
    }))
}

/// Sparse matrix with a variance profile: the centered Erdős–Rényi two-point
/// law rescaled entrywise by `sqrt(N s_ij)`, plus the rank-one mean `f|e><e|`.
pub fn sample_sparse_generic(spec: &EnsembleSpec, rng: &mut RngStream) -> Result<SymmetricMatrix> {
    if spec.kind != EnsembleKind::SparseGeneric {
        return Err(Error::invalid("sample_sparse_generic needs kind sparse_generic"));
    }
    spec.validate()?;
    let p = spec.edge_probability();
    let scale = spec.gamma() / spec.q();
    let (hit, miss) = (scale * (1.0 - p), -scale * p);
    let profile = &spec.profile;
    let mut draw_err = None;
    let m = SymmetricMatrix::from_upper_fn(spec.n, |i, j| {
        let amp = profile.scaled(i, j).sqrt();
        match rng.bernoulli(p) {
            Ok(true) => amp * hit,
            Ok(false) => amp * miss,
            Err(e) => {
                draw_err = Some(e);
                0.0
            }
        }
    });
    match draw_err {
        Some(e) => Err(e),
        None => Ok(m.with_entry_mean(spec.entry_mean())),
    }
}

/// Selects entry `(a, b)` and the interpolation weight `theta` of the deformation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationSelector {
    a: usize,
    b: usize,
    theta: f64,
}

impl DeformationSelector {
    /// Zero-based indices; the pair is stored ordered so that `a <= b`.
    pub fn new(a: usize, b: usize, theta: f64, n: usize) -> Result<Self> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        if b >= n {
            return Err(Error::invalid(format!("index {b} out of range for dimension {n}")));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::invalid(format!("theta must lie in [0, 1], got {theta}")));
        }
        Ok(DeformationSelector { a, b, theta })
    }

    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// Replace entries `(a, b)` and `(b, a)` by `f + theta (h_ab - f)`, leaving
/// every other entry untouched. `f` is the entry mean.
pub fn deform(h: &SymmetricMatrix, sel: &DeformationSelector, f: f64) -> SymmetricMatrix {
    let mut out = h.clone();
    let (a, b) = (sel.a, sel.b);
    if sel.theta == 1.0 {
        return out;
    }
    let value = f + sel.theta * (h.get(a, b) - f);
    out.set_centered(a, b, value - h.entry_mean());
    out
}

/// Empirical absolute moment of centered entries against `C^k / (N q^{k-2})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub k: u32,
    /// Mean of `|b_ij|^k` pooled over all stored entries of all samples.
    pub pooled_mean: f64,
    /// Largest per-entry mean over the samples (noisy for few samples).
    pub max_entry_mean: f64,
    pub bound: f64,
    /// `pooled_mean > bound`; reported as a warning, not an error.
    pub violates: bool,
}

/// Default constant in the moment bound.
pub const MOMENT_CONSTANT: f64 = 2.0;

pub fn moment_report(samples: &[SymmetricMatrix], k: u32, q: f64, c: f64) -> Result<MomentReport> {
    let first = samples.first().ok_or(Error::NoData("moment_report needs samples"))?;
    if !(2..=8).contains(&k) {
        return Err(Error::invalid(format!("moment order must lie in 2..=8, got {k}")));
    }
    let n = first.n();
    if samples.iter().any(|s| s.n() != n) {
        return Err(Error::invalid("all samples must share a dimension"));
    }
    let len = first.centered_upper().len();
    let mut per_entry = vec![0.0; len];
    for s in samples {
        for (acc, v) in per_entry.iter_mut().zip(s.centered_upper()) {
            *acc += v.abs().powi(k as i32);
        }
    }
    let count = samples.len() as f64;
    let pooled_mean = per_entry.iter().sum::<f64>() / (count * len as f64);
    let max_entry_mean = per_entry.iter().fold(0.0f64, |m, v| m.max(v / count));
    let bound = c.powi(k as i32) / (n as f64 * q.powi(k as i32 - 2));
    Ok(MomentReport {
        k,
        pooled_mean,
        max_entry_mean,
        bound,
        violates: pooled_mean > bound,
    })
}
