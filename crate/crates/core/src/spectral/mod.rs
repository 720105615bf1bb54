//! Eigendecomposition and single-matrix spectral functionals.

mod eigen;
pub mod semicircle;

use num_complex::Complex64;
use serde::Serialize;

use crate::ensembles::{DeformationSelector, SymmetricMatrix};
use crate::error::{Error, Result};

pub use eigen::eigenvalues;
pub use semicircle::{classical_location, classical_locations, m_sc, rho_sc, semicircle_cdf};

/// Point `z = E + iη` in the upper half plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexPoint {
    e: f64,
    eta: f64,
}

impl ComplexPoint {
    pub fn new(e: f64, eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() || !e.is_finite() {
            return Err(Error::invalid(format!(
                "spectral point needs finite E and eta > 0, got E = {e}, eta = {eta}"
            )));
        }
        Ok(ComplexPoint { e, eta })
    }

    pub fn energy(&self) -> f64 {
        self.e
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.e, self.eta)
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    values: Vec<f64>,
    /// Row `i` is the eigenvector of `values[i]`.
    vectors: Vec<f64>,
    residual: f64,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.vectors[i * n..(i + 1) * n]
    }

    /// `max_i ||A u_i - λ_i u_i||_2` against the input matrix.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `max_{i,j} |<u_i, u_j> - δ_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let ip: f64 = self.eigenvector(i).iter().zip(self.eigenvector(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((ip - target).abs());
            }
        }
        worst
    }

    /// `max |A - U Λ U^T|` entrywise.
    pub fn reconstruction_error(&self, a: &SymmetricMatrix) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in r..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.values[k] * self.eigenvector(k)[r] * self.eigenvector(k)[c];
                }
                worst = worst.max((a.get(r, c) - s).abs());
            }
        }
        worst
    }
}

/// Full eigendecomposition; the residual is measured against `a` on every call.
pub fn eigh(a: &SymmetricMatrix) -> Result<SpectralDecomposition> {
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let (values, vectors) = eigen::eigen_system(a)?;
    let n = a.n();
    let dense = a.to_dense();
    let mut residual = 0.0f64;
    let mut au = vec![0.0; n];
    for i in 0..n {
        let u = &vectors[i * n..(i + 1) * n];
        for (r, slot) in au.iter_mut().enumerate() {
            *slot = dense[r * n..(r + 1) * n].iter().zip(u).map(|(x, y)| x * y).sum();
        }
        let norm = au
            .iter()
            .zip(u)
            .map(|(x, y)| (x - values[i] * y).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(norm);
    }
    let scale = 1.0 + values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-9 * scale {
        return Err(Error::NumericalFailure { residual });
    }
    Ok(SpectralDecomposition {
        values,
        vectors,
        residual,
    })
}

/// `(1/N) Σ_i 1/(λ_i - z)`.
pub fn stieltjes_empirical(eigenvalues: &[f64], z: ComplexPoint) -> Complex64 {
    let z = z.z();
    let mut acc = Complex64::new(0.0, 0.0);
    for &l in eigenvalues {
        acc += (Complex64::new(l, 0.0) - z).inv();
    }
    acc / eigenvalues.len() as f64
}

/// Zero-based index range `[[κN, (1-κ)N]]` of bulk labels.
pub fn bulk_indices(n: usize, kappa: f64) -> std::ops::RangeInclusive<usize> {
    let lo = ((kappa * n as f64).ceil() as usize).max(1);
    let hi = (((1.0 - kappa) * n as f64).floor() as usize).min(n);
    (lo - 1)..=(hi.max(lo) - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalLawPoint {
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    pub dev: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Default prefactor of the local-law envelope.
pub const LOCAL_LAW_PREFACTOR: f64 = 5.0;

/// `|m_N(z) - m_sc(z)|` against `prefactor (1/q + 1/(N η))` on each grid point.
pub fn local_law_deviation(eigenvalues: &[f64], grid: &[ComplexPoint], q: f64, prefactor: f64) -> Vec<LocalLawPoint> {
    let n = eigenvalues.len() as f64;
    grid.iter()
        .map(|&z| {
            let dev = (stieltjes_empirical(eigenvalues, z) - m_sc(z.z())).norm();
            let bound = prefactor * (1.0 / q + 1.0 / (n * z.eta()));
            LocalLawPoint {
                e: z.energy(),
                eta: z.eta(),
                dev,
                bound,
                pass: dev <= bound,
            }
        })
        .collect()
}

/// `max |u_i(j)|^2` over bulk labels `i` and all coordinates `j`.
pub fn delocalization_sup(d: &SpectralDecomposition, kappa: f64) -> f64 {
    bulk_indices(d.n(), kappa)
        .flat_map(|i| d.eigenvector(i).iter().map(|x| x * x))
        .fold(0.0, f64::max)
}

/// Default constant `C` for the δ-general checks.
pub const GENERAL_CONSTANT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountingReport {
    /// Largest `#{λ ∈ I} / (|I| N)` over all tested windows.
    pub max_ratio: f64,
    /// Window `[lo, hi)` attaining `max_ratio`.
    pub worst: (f64, f64),
    pub passed: bool,
}

/// Eigenvalue accumulation check over half-open windows of dyadic widths
/// `2^k N^{-1+δ}` inside `[-3, 3]`.
///
/// For each width the maximum count is found exactly: an optimal window can
/// always be shifted right until its left end hits an eigenvalue.
pub fn counting_check(eigenvalues: &[f64], delta: f64, c: f64) -> Result<CountingReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n = eigenvalues.len();
    let mut sorted: Vec<f64> = eigenvalues.iter().copied().filter(|x| (-3.0..=3.0).contains(x)).collect();
    sorted.sort_by(f64::total_cmp);
    let mut report = CountingReport {
        max_ratio: 0.0,
        worst: (0.0, 0.0),
        passed: true,
    };
    let mut width = (n as f64).powf(delta - 1.0);
    while width <= 6.0 {
        let mut hi = 0;
        for lo in 0..sorted.len() {
            let start = sorted[lo];
            let end = (start + width).min(3.0 + f64::EPSILON * 4.0);
            hi = hi.max(lo);
            while hi < sorted.len() && sorted[hi] < end {
                hi += 1;
            }
            let ratio = (hi - lo) as f64 / (width * n as f64);
            if ratio > report.max_ratio {
                report.max_ratio = ratio;
                report.worst = (start, start + width);
            }
        }
        width *= 2.0;
    }
    report.passed = report.max_ratio <= c;
    Ok(report)
}

/// Green function entry `G_jk(z) = Σ_i u_i(j) u_i(k) / (λ_i - z)`.
pub fn resolvent_entry(d: &SpectralDecomposition, j: usize, k: usize, z: ComplexPoint) -> Complex64 {
    let z = z.z();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &l) in d.eigenvalues().iter().enumerate() {
        let u = d.eigenvector(i);
        acc += (u[j] * u[k]) * (Complex64::new(l, 0.0) - z).inv();
    }
    acc
}

/// Minimum separation for the perturbation formulas.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

/// Symmetric single-entry direction `V` with ones at `(a, b)` and `(b, a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntryDirection {
    pub a: usize,
    pub b: usize,
}

impl From<&DeformationSelector> for EntryDirection {
    fn from(sel: &DeformationSelector) -> Self {
        EntryDirection { a: sel.a(), b: sel.b() }
    }
}

impl EntryDirection {
    /// `u^T V w`.
    #[inline]
    pub fn bilinear(&self, u: &[f64], w: &[f64]) -> f64 {
        if self.a == self.b {
            u[self.a] * w[self.a]
        } else {
            u[self.a] * w[self.b] + u[self.b] * w[self.a]
        }
    }
}

/// Derivative of order 1, 2 or 3 of `λ_i` along `A + s V`.
///
/// With `V_jk = u_j^T V u_k`:
/// - first order `V_ii`
/// - second order `2 Σ_{j≠i} V_ij^2 / (λ_i - λ_j)`
/// - third order `6 Σ_{j,k≠i} V_ij V_jk V_ki / ((λ_i-λ_j)(λ_i-λ_k)) - 6 V_ii Σ_{j≠i} V_ij^2 / (λ_i-λ_j)^2`
pub fn eigenvalue_derivative(d: &SpectralDecomposition, i: usize, dir: EntryDirection, order: u8) -> Result<f64> {
    let n = d.n();
    if i >= n || dir.a >= n || dir.b >= n {
        return Err(Error::invalid("index out of range"));
    }
    if !(1..=3).contains(&order) {
        return Err(Error::invalid(format!("derivative order must be 1, 2 or 3, got {order}")));
    }
    let values = d.eigenvalues();
    let li = values[i];
    for (j, &lj) in values.iter().enumerate() {
        if j != i && (li - lj).abs() < DEGENERACY_THRESHOLD {
            return Err(Error::DegenerateEigenvalue {
                index: i,
                other: j,
                separation: (li - lj).abs(),
            });
        }
    }
    let ui = d.eigenvector(i);
    let vii = dir.bilinear(ui, ui);
    if order == 1 {
        return Ok(vii);
    }
    // w_j = V_ij / (λ_i - λ_j)
    let w: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                dir.bilinear(ui, d.eigenvector(j)) / (li - values[j])
            }
        })
        .collect();
    if order == 2 {
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| w[j] * w[j] * (li - values[j])).sum();
        return Ok(2.0 * s);
    }
    // Σ_{j,k} w_j V_jk w_k = y^T V y with y = Σ_j w_j u_j
    let mut y = vec![0.0; n];
    for (j, &wj) in w.iter().enumerate() {
        if wj != 0.0 {
            for (yk, uk) in y.iter_mut().zip(d.eigenvector(j)) {
                *yk += wj * uk;
            }
        }
    }
    let cubic = dir.bilinear(&y, &y);
    let square: f64 = w.iter().map(|x| x * x).sum();
    Ok(6.0 * cubic - 6.0 * vii * square)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::sample_goe;
    use crate::rng::derive_stream;

    fn swap_matrix() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn eigh_two_by_two() {
        let d = eigh(&swap_matrix()).unwrap();
        assert!((d.eigenvalues()[0] + 1.0).abs() < 1e-15);
        assert!((d.eigenvalues()[1] - 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u0 = d.eigenvector(0);
        assert!((u0[0].abs() - h).abs() < 1e-15 && (u0[0] + u0[1]).abs() < 1e-15);
        let u1 = d.eigenvector(1);
        assert!((u1[0] - u1[1]).abs() < 1e-15);
    }

    #[test]
    fn eigh_diagonal_permutes_basis() {
        let d = eigh(&SymmetricMatrix::diagonal(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 2.0, 3.0]);
        for (i, coord) in [1usize, 2, 0].into_iter().enumerate() {
            assert_eq!(d.eigenvector(i)[coord].abs(), 1.0);
        }
        assert_eq!(delocalization_sup(&d, 0.1), 1.0);
    }

    #[test]
    fn eigh_goe_reconstruction() {
        let a = sample_goe(100, &mut derive_stream(1, 0)).unwrap();
        let d = eigh(&a).unwrap();
        assert!(d.reconstruction_error(&a) <= 1e-10);
        assert!(d.orthonormality_defect() <= 1e-10);
        assert!(d.residual() <= 1e-9 * (1.0 + 3.0));
        assert!(d.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        let fast = eigenvalues(&a).unwrap();
        for (x, y) in fast.iter().zip(d.eigenvalues()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigh_rejects_non_finite() {
        let mut m = SymmetricMatrix::zeros(2);
        m.set_centered(0, 1, f64::NAN);
        assert!(eigh(&m).is_err());
    }

    #[test]
    fn stieltjes_small_cases() {
        let i = ComplexPoint::new(0.0, 1.0).unwrap();
        let m = stieltjes_empirical(&[-1.0, 1.0], i);
        assert!((m - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let m = stieltjes_empirical(&[0.0; 7], i);
        assert!((m - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn goe_stieltjes_near_semicircle() {
        let a = sample_goe(2000, &mut derive_stream(2, 0)).unwrap();
        let ev = eigenvalues(&a).unwrap();
        let z = ComplexPoint::new(0.5, 0.05).unwrap();
        let dev = (stieltjes_empirical(&ev, z) - m_sc(z.z())).norm();
        assert!(dev <= 0.05, "{dev}");
    }

    #[test]
    fn local_law_large_eta() {
        let ev: Vec<f64> = (0..301).map(|k| -3.0 + 0.02 * k as f64).collect();
        let grid: Vec<_> = [-5.0, -1.0, 0.0, 2.0, 5.0]
            .iter()
            .map(|&e| ComplexPoint::new(e, 10.0).unwrap())
            .collect();
        for p in local_law_deviation(&ev, &grid, 10.0, LOCAL_LAW_PREFACTOR) {
            assert!(p.dev <= 0.4, "{p:?}");
        }
    }

    #[test]
    fn local_law_goe_rate() {
        let n = 1000;
        let z = [ComplexPoint::new(0.0, 0.1).unwrap()];
        let trials = 50;
        let passes = (0..trials)
            .filter(|&t| {
                let a = sample_goe(n, &mut derive_stream(3, t)).unwrap();
                let ev = eigenvalues(&a).unwrap();
                local_law_deviation(&ev, &z, (n as f64).sqrt(), LOCAL_LAW_PREFACTOR)[0].pass
            })
            .count();
        assert!(passes as f64 >= 0.95 * trials as f64, "{passes}");
    }

    #[test]
    fn flat_vector_delocalization() {
        // identity + rank one along e: e is the top eigenvector with entries 1/N
        let n = 8;
        let m = SymmetricMatrix::from_upper_fn(n, |i, j| if i == j { 1.0 } else { 0.0 }).with_entry_mean(0.5);
        let d = eigh(&m).unwrap();
        let top = d.eigenvector(n - 1);
        for x in top {
            assert!((x * x - 1.0 / n as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn goe_delocalization() {
        let n = 1000;
        let a = sample_goe(n, &mut derive_stream(4, 0)).unwrap();
        let d = eigh(&a).unwrap();
        let sup = delocalization_sup(&d, 0.1);
        assert!(sup <= 15.0 * (n as f64).ln() / n as f64, "{sup}");
        assert!(sup >= 1.0 / n as f64);
    }

    #[test]
    fn counting_uniform_and_collapsed() {
        let n = 1000;
        let delta = 0.5;
        let ev: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
        let rep = counting_check(&ev, delta, GENERAL_CONSTANT).unwrap();
        assert!(rep.passed);
        assert!(rep.max_ratio <= 1.0 + (n as f64).powf(-delta) + 1e-9, "{rep:?}");
        let rep = counting_check(&vec![0.3; n], delta, GENERAL_CONSTANT).unwrap();
        assert!(!rep.passed);
        assert!(rep.max_ratio >= (n as f64).powf(1.0 - delta) * 0.99);
        assert!(counting_check(&ev, 1.0, 10.0).is_err());
    }

    #[test]
    fn counting_goe() {
        let n = 1000;
        for t in 0..5 {
            let a = sample_goe(n, &mut derive_stream(5, t)).unwrap();
            let ev = eigenvalues(&a).unwrap();
            assert!(counting_check(&ev, 0.1, GENERAL_CONSTANT).unwrap().passed);
        }
    }

    #[test]
    fn resolvent_scalar_and_trace() {
        let d = eigh(&SymmetricMatrix::diagonal(&[2.0])).unwrap();
        let z = ComplexPoint::new(0.0, 1.0).unwrap();
        let g = resolvent_entry(&d, 0, 0, z);
        assert!((g - Complex64::new(0.4, 0.2)).norm() < 1e-15);

        let a = sample_goe(60, &mut derive_stream(6, 0)).unwrap();
        let d = eigh(&a).unwrap();
        let z = ComplexPoint::new(0.3, 0.02).unwrap();
        let tr: Complex64 = (0..60).map(|j| resolvent_entry(&d, j, j, z)).sum::<Complex64>() / 60.0;
        assert!((tr - stieltjes_empirical(d.eigenvalues(), z)).norm() < 1e-12);
        for j in 0..60 {
            assert!(resolvent_entry(&d, j, j, z).im > 0.0);
        }
    }

    #[test]
    fn resolvent_picks_out_isolated_eigenvalue() {
        let a = sample_goe(40, &mut derive_stream(7, 0)).unwrap();
        let d = eigh(&a).unwrap();
        let i = 20;
        let eta = 1e-6;
        let z = ComplexPoint::new(d.eigenvalues()[i], eta).unwrap();
        for j in 0..40 {
            let weight = d.eigenvector(i)[j].powi(2);
            let im = resolvent_entry(&d, j, j, z).im;
            assert!(im >= weight / eta - 1e3, "{im} vs {}", weight / eta);
        }
    }

    #[test]
    fn derivative_closed_forms_on_swap_matrix() {
        let d = eigh(&swap_matrix()).unwrap();
        let dir = EntryDirection { a: 0, b: 1 };
        assert!((eigenvalue_derivative(&d, 1, dir, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!(eigenvalue_derivative(&d, 1, dir, 2).unwrap().abs() < 1e-15);
        assert!(eigenvalue_derivative(&d, 1, dir, 4).is_err());
    }

    #[test]
    fn first_derivative_is_hellmann_feynman() {
        let a = sample_goe(30, &mut derive_stream(8, 0)).unwrap();
        let d = eigh(&a).unwrap();
        let dir = EntryDirection { a: 3, b: 17 };
        for i in 0..30 {
            let u = d.eigenvector(i);
            assert_eq!(eigenvalue_derivative(&d, i, dir, 1).unwrap(), 2.0 * u[3] * u[17]);
        }
    }

    #[test]
    fn degenerate_eigenvalue_is_reported() {
        let d = eigh(&SymmetricMatrix::diagonal(&[1.0, 1.0, 2.0])).unwrap();
        let err = eigenvalue_derivative(&d, 0, EntryDirection { a: 0, b: 1 }, 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateEigenvalue { index: 0, other: 1, .. }));
    }

    #[test]
    fn bulk_index_range() {
        assert_eq!(bulk_indices(1000, 0.25), 249..=749);
        assert_eq!(bulk_indices(10, 0.1), 0..=8);
    }
}
