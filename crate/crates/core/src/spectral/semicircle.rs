//! The semicircle law: density, distribution function, Stieltjes transform
//! and classical eigenvalue locations.

use std::f64::consts::PI;

use num_complex::Complex64;

/// `ρ_sc(E) = sqrt(4 - E^2) / (2π)` on `[-2, 2]`, zero elsewhere.
pub fn rho_sc(e: f64) -> f64 {
    if e.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - e * e).sqrt() / (2.0 * PI)
    }
}

/// `∫_{-∞}^{E} ρ_sc`.
pub fn semicircle_cdf(e: f64) -> f64 {
    if e <= -2.0 {
        return 0.0;
    }
    if e >= 2.0 {
        return 1.0;
    }
    0.5 + e * (4.0 - e * e).sqrt() / (4.0 * PI) + (e / 2.0).asin() / PI
}

/// Semicircle Stieltjes transform: the root of `m^2 + z m + 1 = 0` with
/// `Im m >= 0`, extended continuously to the real axis.
pub fn m_sc(z: Complex64) -> Complex64 {
    // a zero imaginary part must be +0 so the square roots pick the upper branch
    let z = Complex64::new(z.re, if z.im == 0.0 { 0.0 } else { z.im });
    let s = (z - 2.0).sqrt() * (z + 2.0).sqrt();
    let denom = z + s;
    let m = if denom.norm() > 0.0 {
        -2.0 / denom
    } else {
        (s - z) * 0.5
    };
    // one Newton step on m^2 + zm + 1 tightens the residual to rounding level
    let f = m * m + z * m + 1.0;
    let fp = 2.0 * m + z;
    if fp.norm() > 1e-6 {
        m - f / fp
    } else {
        m
    }
}

/// Classical location `γ_i`: `∫_{-∞}^{γ_i} ρ_sc = i/N`, with `i` one-based.
///
/// Bisection on the closed-form distribution function to `1e-12`.
pub fn classical_location(i: usize, n: usize) -> f64 {
    let target = i as f64 / n as f64;
    if target <= 0.0 {
        return -2.0;
    }
    if target >= 1.0 {
        return 2.0;
    }
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if semicircle_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `γ_1, ..., γ_N`.
pub fn classical_locations(n: usize) -> Vec<f64> {
    (1..=n).map(|i| classical_location(i, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_values() {
        assert!((rho_sc(0.0) - 1.0 / PI).abs() < 1e-15);
        assert_eq!(rho_sc(2.0), 0.0);
        assert_eq!(rho_sc(-3.0), 0.0);
    }

    #[test]
    fn stieltjes_at_i_and_origin() {
        let m = m_sc(Complex64::new(0.0, 1.0));
        assert!((m - Complex64::new(0.0, (5f64.sqrt() - 1.0) / 2.0)).norm() < 1e-15);
        let m0 = m_sc(Complex64::new(0.0, 0.0));
        assert!((m0 - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        let far = m_sc(Complex64::new(1e6, 1.0));
        assert!((far * Complex64::new(1e6, 1.0) + 1.0).norm() < 1e-6);
    }

    #[test]
    fn stieltjes_real_axis_matches_density() {
        for &e in &[-1.9, -1.0, 0.3, 1.5] {
            let m = m_sc(Complex64::new(e, 0.0));
            assert!((m.im / PI - rho_sc(e)).abs() < 1e-14);
            assert!((m.re + e / 2.0).abs() < 1e-14);
        }
        // outside the support m is real with the sign of -1/E
        assert!(m_sc(Complex64::new(3.0, 0.0)).re < 0.0);
        assert!(m_sc(Complex64::new(-3.0, 0.0)).re > 0.0);
    }

    #[test]
    fn defining_equation_on_a_grid() {
        let mut worst = 0.0f64;
        for a in 0..100 {
            for b in 0..100 {
                let z = Complex64::new(-5.0 + 0.1 * a as f64, 1e-4 + 0.05 * b as f64);
                let m = m_sc(z);
                assert!(m.im > 0.0);
                worst = worst.max((m * m + z * m + 1.0).norm());
            }
        }
        assert!(worst <= 1e-12, "{worst}");
    }

    #[test]
    fn quantiles() {
        assert!(classical_location(500, 1000).abs() < 1e-10);
        let mut prev = -2.0;
        for i in 1..100 {
            let g = classical_location(i, 100);
            assert!(g > prev);
            assert!((semicircle_cdf(g) - i as f64 / 100.0).abs() < 1e-9);
            prev = g;
        }
        assert_eq!(classical_location(100, 100), 2.0);
    }
}
