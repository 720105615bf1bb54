//! Free convolution of a spectrum with a semicircle of variance `ϑ²`.
//!
//! `m_t` is the solution of `m_t(z) = m_0(z + ϑ² m_t(z))` with `Im m_t >= 0`,
//! where `m_0` is the Stieltjes transform of the base spectrum. The density
//! `ρ_t` is recovered by Stieltjes inversion at a small resolution `η`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{m_sc, ComplexPoint};

#[derive(Clone, Debug, PartialEq)]
pub enum BaseSpectrum {
    /// The analytic semicircle law.
    Semicircle,
    /// Empirical eigenvalues, sorted ascending.
    Empirical(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreeConvInput {
    base: BaseSpectrum,
    theta_sq: f64,
}

impl FreeConvInput {
    pub fn semicircle(theta_sq: f64) -> Result<Self> {
        Self::new(BaseSpectrum::Semicircle, theta_sq)
    }

    pub fn empirical(eigenvalues: &[f64], theta_sq: f64) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::NoData("free convolution needs a nonempty spectrum"));
        }
        if eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("base spectrum must be finite"));
        }
        let mut sorted = eigenvalues.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self::new(BaseSpectrum::Empirical(sorted), theta_sq)
    }

    pub fn new(base: BaseSpectrum, theta_sq: f64) -> Result<Self> {
        if !(theta_sq >= 0.0) || !theta_sq.is_finite() {
            return Err(Error::invalid(format!("theta^2 must be finite and >= 0, got {theta_sq}")));
        }
        if let BaseSpectrum::Empirical(v) = &base {
            if v.is_empty() || v.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::invalid("empirical base must be nonempty and sorted"));
            }
        }
        Ok(FreeConvInput { base, theta_sq })
    }

    pub fn base(&self) -> &BaseSpectrum {
        &self.base
    }

    pub fn theta_sq(&self) -> f64 {
        self.theta_sq
    }

    /// `m_0(w)` and `m_0'(w)`.
    fn base_transform(&self, w: Complex64) -> (Complex64, Complex64) {
        match &self.base {
            BaseSpectrum::Semicircle => {
                let m = m_sc(w);
                (m, -m / (2.0 * m + w))
            }
            BaseSpectrum::Empirical(values) => {
                let mut m = Complex64::new(0.0, 0.0);
                let mut dm = Complex64::new(0.0, 0.0);
                for &l in values {
                    let g = (Complex64::new(l, 0.0) - w).inv();
                    m += g;
                    dm += g * g;
                }
                let n = values.len() as f64;
                (m / n, dm / n)
            }
        }
    }

    /// `[min base - 2ϑ - 1, max base + 2ϑ + 1]`.
    pub fn support_window(&self) -> (f64, f64) {
        let (lo, hi) = match &self.base {
            BaseSpectrum::Semicircle => (-2.0, 2.0),
            BaseSpectrum::Empirical(v) => (v[0], v[v.len() - 1]),
        };
        let pad = 2.0 * self.theta_sq.sqrt() + 1.0;
        (lo - pad, hi + pad)
    }
}

const DAMPING: f64 = 0.5;
const DAMPED_ITERATIONS: usize = 200;
const NEWTON_ITERATIONS: usize = 100;
/// Fixed-point residual tolerance, relative to `max(1, |m|)`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

fn converged(residual: f64, m: Complex64) -> bool {
    residual <= RESIDUAL_TOLERANCE * m.norm().max(1.0)
}

/// Solve the free-convolution fixed point at `z`.
///
/// Damped iteration `m <- (1-β) m + β m_0(z + ϑ² m)` from `m_sc(z)`,
/// switching to backtracking Newton on `m - m_0(z + ϑ² m)` if it has not
/// converged after the damped budget. When that fails too, the root is
/// tracked down from `η = 1` along a geometric ladder of resolutions.
pub fn solve_m_t(z: ComplexPoint, input: &FreeConvInput) -> Result<Complex64> {
    let zc = z.z();
    if input.theta_sq == 0.0 {
        return Ok(input.base_transform(zc).0);
    }
    let residual = match input.solve_from(zc, m_sc(zc)) {
        Ok(m) => return finish(m),
        Err(r) => r,
    };
    if z.eta() >= 1.0 {
        return Err(Error::Convergence { residual });
    }
    let mut m = m_sc(Complex64::new(zc.re, 1.0));
    for k in 0..=CONTINUATION_STEPS {
        let eta = z.eta().powf(k as f64 / CONTINUATION_STEPS as f64);
        m = input
            .newton(Complex64::new(zc.re, eta), m)
            .map_err(|residual| Error::Convergence { residual })?;
    }
    finish(m)
}

const CONTINUATION_STEPS: usize = 60;

impl FreeConvInput {
    fn residual(&self, z: Complex64, m: Complex64) -> (Complex64, Complex64) {
        let (g, dg) = self.base_transform(z + self.theta_sq * m);
        (m - g, dg)
    }

    fn solve_from(&self, z: Complex64, mut m: Complex64) -> std::result::Result<Complex64, f64> {
        for _ in 0..DAMPED_ITERATIONS {
            let (f, _) = self.residual(z, m);
            if converged(f.norm(), m) {
                return Ok(m);
            }
            m -= DAMPING * f;
        }
        self.newton(z, m)
    }

    /// Newton with step halving until the residual decreases, staying in the upper half plane.
    fn newton(&self, z: Complex64, mut m: Complex64) -> std::result::Result<Complex64, f64> {
        let (mut f, mut dg) = self.residual(z, m);
        for _ in 0..NEWTON_ITERATIONS {
            if converged(f.norm(), m) {
                return Ok(m);
            }
            let step = f / (1.0 - self.theta_sq * dg);
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                let cand = m - lambda * step;
                if cand.im >= 0.0 {
                    let (fc, dc) = self.residual(z, cand);
                    if fc.norm() < f.norm() {
                        (m, f, dg) = (cand, fc, dc);
                        improved = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if converged(f.norm(), m) {
            Ok(m)
        } else {
            Err(f.norm())
        }
    }
}

fn finish(m: Complex64) -> Result<Complex64> {
    if m.im < -1e-12 * m.norm().max(1.0) {
        return Err(Error::Branch { imag: m.im });
    }
    Ok(m)
}

/// `ρ_t(E) ≈ Im m_t(E + iη) / π`, clipped at zero.
pub fn density_from_stieltjes(input: &FreeConvInput, e: f64, eta: f64) -> Result<f64> {
    let m = solve_m_t(ComplexPoint::new(e, eta)?, input)?;
    Ok((m.im / std::f64::consts::PI).max(0.0))
}

/// Default inversion resolution for density profiles.
pub const DENSITY_ETA: f64 = 1e-4;

/// Tabulated density on a grid of energies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityProfile {
    pub eta: f64,
    pub points: Vec<(f64, f64)>,
}

impl DensityProfile {
    /// Trapezoidal mass over the tabulated grid.
    pub fn mass(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("E,rho\n");
        for (e, r) in &self.points {
            out.push_str(&format!("{e:.10e},{r:.10e}\n"));
        }
        out
    }
}

pub fn density_profile(input: &FreeConvInput, energies: &[f64], eta: f64) -> Result<DensityProfile> {
    let points = energies
        .iter()
        .map(|&e| Ok((e, density_from_stieltjes(input, e, eta)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityProfile { eta, points })
}

/// Evenly spaced grid of `points` energies over the support window.
pub fn window_grid(input: &FreeConvInput, points: usize) -> Vec<f64> {
    let (lo, hi) = input.support_window();
    let step = (hi - lo) / (points.max(2) - 1) as f64;
    (0..points.max(2)).map(|k| lo + step * k as f64).collect()
}

/// Resolution used when integrating `ρ_t` for quantiles.
pub const QUANTILE_ETA: f64 = 1e-9;
/// Allowed deviation of the integrated mass from one.
pub const MASS_TOLERANCE: f64 = 1e-3;

const SIMPSON_TOLERANCE: f64 = 1e-10;
const SIMPSON_MAX_DEPTH: u32 = 45;
const MIN_INITIAL_PANEL: f64 = 1e-3;
const MAX_INITIAL_PANELS: usize = 4096;

// Gauss-Legendre 5-point nodes and weights on [-1, 1]
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Distribution function of `ρ_t`, integrated by adaptive Simpson over the support window.
#[derive(Clone, Debug)]
pub struct DensityCdf {
    input: FreeConvInput,
    eta: f64,
    /// Accepted panels `(a, b, ∫_a^b ρ)` in increasing order.
    panels: Vec<(f64, f64, f64)>,
    cumulative: Vec<f64>,
}

impl DensityCdf {
    pub fn build(input: &FreeConvInput, eta: f64) -> Result<Self> {
        let (lo, hi) = input.support_window();
        let rho = |x: f64| density_from_stieltjes(input, x, eta);
        // isolated bumps narrower than the window must not fall between the first samples
        let width = (0.5 * input.theta_sq.sqrt()).max(MIN_INITIAL_PANEL);
        let count = (((hi - lo) / width).ceil() as usize).clamp(1, MAX_INITIAL_PANELS);
        let step = (hi - lo) / count as f64;
        let tol = SIMPSON_TOLERANCE / count as f64;
        let mut panels = Vec::new();
        for k in 0..count {
            let a = lo + step * k as f64;
            let b = if k + 1 == count { hi } else { a + step };
            let (fa, fm, fb) = (rho(a)?, rho(0.5 * (a + b))?, rho(b)?);
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(&rho, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH, &mut panels)?;
        }
        let mut cumulative = Vec::with_capacity(panels.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for p in &panels {
            acc += p.2;
            cumulative.push(acc);
        }
        let mass = acc;
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Accuracy {
                mass,
                tolerance: MASS_TOLERANCE,
            });
        }
        Ok(DensityCdf {
            input: input.clone(),
            eta,
            panels,
            cumulative,
        })
    }

    pub fn mass(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn integral_from(&self, a: f64, x: f64) -> Result<f64> {
        let half = 0.5 * (x - a);
        let mid = 0.5 * (x + a);
        let mut s = 0.0;
        for (node, weight) in GL5 {
            s += weight * density_from_stieltjes(&self.input, mid + half * node, self.eta)?;
        }
        Ok(s * half)
    }

    /// Point `x` with `∫_{lo}^{x} ρ_t = level`.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        let k = self.cumulative.partition_point(|&c| c <= level).clamp(1, self.panels.len()) - 1;
        let (a, b, _) = self.panels[k];
        let target = level - self.cumulative[k];
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            if hi - lo <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.integral_from(a, mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    out: &mut Vec<(f64, f64, f64)>,
) -> Result<()> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (b - a) < 1e-10 {
        out.push((a, b, left + right + delta / 15.0));
        return Ok(());
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, out)?;
    simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, out)
}

/// Classical location `γ_{i,t}` of `ρ_t` at level `i/N`.
pub fn classical_location_t(i: usize, n: usize, input: &FreeConvInput) -> Result<f64> {
    if i == 0 || i > n {
        return Err(Error::invalid(format!("index {i} outside 1..={n}")));
    }
    DensityCdf::build(input, QUANTILE_ETA)?.quantile(i as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationPoint {
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    pub dev_m: f64,
    /// `|Im m_t - Im m_sc| / π`: both densities at the same resolution.
    pub dev_rho: f64,
}

/// Tabulated `|m_t - m_sc|` and `|ρ_t - ρ_sc|` (both smoothed at `η`).
pub fn deviation_report(input: &FreeConvInput, grid: &[ComplexPoint]) -> Result<Vec<DeviationPoint>> {
    grid.iter()
        .map(|&z| {
            let mt = solve_m_t(z, input)?;
            let ms = m_sc(z.z());
            Ok(DeviationPoint {
                e: z.energy(),
                eta: z.eta(),
                dev_m: (mt - ms).norm(),
                dev_rho: (mt.im - ms.im).abs() / std::f64::consts::PI,
            })
        })
        .collect()
}

pub fn deviation_csv(points: &[DeviationPoint]) -> String {
    let mut out = String::from("E,eta,dev_m,dev_rho\n");
    for p in points {
        out.push_str(&format!("{:.10e},{:.10e},{:.10e},{:.10e}\n", p.e, p.eta, p.dev_m, p.dev_rho));
    }
    out
}

/// Whether `|m_0(z) - m_sc(z)| <= N^{-ω}` on every grid point, for a caller-chosen `ω`.
pub fn within_deviation_set(eigenvalues: &[f64], grid: &[ComplexPoint], omega: f64) -> bool {
    let bound = (eigenvalues.len() as f64).powf(-omega);
    grid.iter()
        .all(|&z| (crate::spectral::stieltjes_empirical(eigenvalues, z) - m_sc(z.z())).norm() <= bound)
}
