//! Multi-eigenvalue observables: normalized bulk gaps, the `Q_i` repulsion
//! statistic with its `χ_M` cutoff, small-gap frequencies, averaged
//! correlation estimators and coupled flow comparisons.
//!
//! Monte Carlo routines assign RNG streams by trial number and reduce in
//! trial order, so results do not depend on how trials are scheduled.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{EnsembleSpec, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::flow::{evolve, FlowParams};
use crate::rng::{trial_stream, RngStream};
use crate::spectral::{
    bulk_indices, classical_location, eigenvalues, rho_sc, semicircle_cdf, stieltjes_empirical, ComplexPoint,
};

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NoData("estimate needs at least one sample"));
        }
        let n = values.len() as f64;
        let mean = compensated_sum(values.iter().copied()) / n;
        let se = if values.len() > 1 {
            let ss = compensated_sum(values.iter().map(|x| (x - mean) * (x - mean)));
            (ss / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Ok(Estimate {
            mean,
            se,
            count: values.len(),
        })
    }
}

/// Run `f(trial)` for `0..trials` on the current rayon pool; the output is in
/// trial order and the first failing trial (by index) is reported.
pub fn run_trials<T, F>(trials: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..trials).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| e.in_trial(k)))
        .collect()
}

/// Stream assignment for a Monte Carlo run: trial `k` reads lanes
/// `lane, lane + 1, ...` of its trial stream under `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialStreams {
    pub seed: u64,
    pub lane: u64,
}

/// Lane offset used for reference-ensemble samples paired with a run.
pub const REFERENCE_LANE: u64 = 4;

impl TrialStreams {
    pub fn new(seed: u64) -> Self {
        TrialStreams { seed, lane: 0 }
    }

    /// Streams independent of `self` under the same seed.
    pub fn reference(self) -> Self {
        TrialStreams {
            seed: self.seed,
            lane: self.lane + REFERENCE_LANE,
        }
    }

    /// Stream `offset` of trial `trial`; `offset` must stay below [`REFERENCE_LANE`].
    pub fn stream(&self, trial: usize, offset: u64) -> RngStream {
        debug_assert!(offset < REFERENCE_LANE);
        trial_stream(self.seed, trial as u64, self.lane + offset)
    }
}

/// Sorted samples with a right-continuous distribution function.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid("samples must not contain NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalDistribution { samples })
    }

    pub fn pooled<I: IntoIterator<Item = Vec<f64>>>(groups: I) -> Result<Self> {
        Self::new(groups.into_iter().flatten().collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `#{x_k <= x} / n`.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.partition_point(|&s| s <= x) as f64 / self.samples.len() as f64
    }
}

/// Two-sample Kolmogorov-Smirnov distance, exact over the merged sample points.
pub fn ks_distance(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS distance needs two nonempty samples"));
    }
    let (xa, xb) = (a.samples(), b.samples());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// One-sample KS distance against a continuous distribution function.
pub fn ks_against(a: &EmpiricalDistribution, cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("KS distance needs a nonempty sample"));
    }
    let n = a.len() as f64;
    let mut best = 0.0f64;
    for (k, &x) in a.samples().iter().enumerate() {
        let f = cdf(x);
        best = best.max((k + 1) as f64 / n - f).max(f - k as f64 / n);
    }
    Ok(best)
}

pub fn ks_semicircle(a: &EmpiricalDistribution) -> Result<f64> {
    ks_against(a, semicircle_cdf)
}

/// Histogram rows `(bin_left, bin_right, count, density)` over `range`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub rows: Vec<(f64, f64, usize, f64)>,
}

impl Histogram {
    /// Bins are half-open except the last, which includes the right end; the
    /// density is normalized by the in-range count.
    pub fn new(samples: &EmpiricalDistribution, bins: usize, range: (f64, f64)) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("histogram needs at least one sample"));
        }
        let (lo, hi) = range;
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad histogram layout: {bins} bins over [{lo}, {hi}]")));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in samples.samples() {
            if x < lo || x > hi {
                continue;
            }
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total: usize = counts.iter().sum();
        let rows = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let left = lo + width * k as f64;
                let right = if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 };
                let density = if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) };
                (left, right, c, density)
            })
            .collect();
        Ok(Histogram { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count,density\n");
        for (l, r, c, d) in &self.rows {
            out.push_str(&format!("{l:.10e},{r:.10e},{c},{d:.10e}\n"));
        }
        out
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::invalid(format!("kappa must lie in (0, 1/2), got {kappa}")));
    }
    Ok(())
}

/// `N ρ_sc(γ_i) (λ_{i+1} - λ_i)` for one-based `i` in `[[κN, (1-κ)N]]`.
pub fn bulk_gaps(eigenvalues: &[f64], kappa: f64) -> Result<Vec<f64>> {
    check_kappa(kappa)?;
    let n = eigenvalues.len();
    Ok(bulk_indices(n, kappa)
        .filter(|&k| k + 1 < n)
        .map(|k| n as f64 * rho_sc(classical_location(k + 1, n)) * (eigenvalues[k + 1] - eigenvalues[k]))
        .collect())
}

/// One-based index of the first gap reported by [`bulk_gaps`].
pub fn first_bulk_index(n: usize, kappa: f64) -> usize {
    *bulk_indices(n, kappa).start() + 1
}

/// `Q_i = N^{-2} Σ_{j≠i} (λ_j - λ_i)^{-2}`, one-based `i`; `+∞` on an exact tie.
pub fn q_statistic(eigenvalues: &[f64], i: usize) -> Result<f64> {
    let n = eigenvalues.len();
    if i == 0 || i > n {
        return Err(Error::invalid(format!("index {i} outside 1..={n}")));
    }
    let li = eigenvalues[i - 1];
    let mut terms = Vec::with_capacity(n.saturating_sub(1));
    for (j, &lj) in eigenvalues.iter().enumerate() {
        if j + 1 == i {
            continue;
        }
        let d = lj - li;
        if d == 0.0 {
            return Ok(f64::INFINITY);
        }
        terms.push(1.0 / (d * d));
    }
    Ok(compensated_sum(terms) / (n as f64 * n as f64))
}

/// `3 C N^δ θ^{-2}`: the dyadic envelope for `Q_i` on spectra with counting
/// constant `C` at scale `δ` and adjacent gaps at least `θ / N`.
pub fn dyadic_q_bound(c: f64, delta: f64, n: usize, theta: f64) -> f64 {
    3.0 * c * (n as f64).powf(delta) / (theta * theta)
}

/// The saturating map `χ_M`: identity below `M - 1`, constant `M` above `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub m: f64,
    pub tau: f64,
}

/// Audited bounds on `|χ_M'|, |χ_M''|, |χ_M'''|` for the quintic blend.
pub const CHI_DERIVATIVE_BOUNDS: [f64; 3] = [1.52, 3.95, 36.0];

impl CutoffSpec {
    pub fn new(m: f64, tau: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::invalid(format!("cutoff M must be finite and > 1, got {m}")));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(CutoffSpec { m, tau })
    }

    /// `M = N^{2τ}`.
    pub fn for_dimension(n: usize, tau: f64) -> Result<Self> {
        Self::new((n as f64).powf(2.0 * tau), tau)
    }
}

/// Blend `p(s) = s + 4s³ - 7s⁴ + 3s⁵` on `s ∈ [0, 1]`: `p(0) = 0`, `p(1) = 1`,
/// `p'(0) = 1`, `p'(1) = 0`, `p''(0) = p''(1) = 0`.
fn blend(s: f64, order: u8) -> f64 {
    match order {
        0 => s * (1.0 + s * s * (4.0 + s * (-7.0 + 3.0 * s))),
        1 => 1.0 + s * s * (12.0 + s * (-28.0 + 15.0 * s)),
        2 => s * (24.0 + s * (-84.0 + 60.0 * s)),
        _ => 24.0 + s * (-168.0 + 180.0 * s),
    }
}

pub fn chi_m(x: f64, cut: &CutoffSpec) -> f64 {
    chi_m_derivative(x, cut, 0)
}

/// `χ_M` (order 0) or its derivative of order 1..=3.
pub fn chi_m_derivative(x: f64, cut: &CutoffSpec, order: u8) -> f64 {
    let start = cut.m - 1.0;
    if x <= start {
        return match order {
            0 => x,
            1 => 1.0,
            _ => 0.0,
        };
    }
    if x >= cut.m {
        return if order == 0 { cut.m } else { 0.0 };
    }
    let p = blend(x - start, order.min(3));
    if order == 0 {
        start + p
    } else {
        p
    }
}

/// Shapes in the test-function catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObservableShape {
    /// `exp(-r²/2)` with `r = |x - c| / w`, smoothly cut off on `r ∈ [3, 4]`.
    GaussianBump,
    /// `((1 + cos πr) / 2)²` for `r = |x - c| / w <= 1`.
    CosineBump,
    /// Constant function; a calibration observable without compact support.
    Constant { value: f64 },
}

/// Test function `O: R^n -> R` from the fixed catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    #[serde(flatten)]
    pub shape: ObservableShape,
    pub center: Vec<f64>,
    #[serde(default = "unit_width")]
    pub width: f64,
}

fn unit_width() -> f64 {
    1.0
}

/// `35u⁴ - 84u⁵ + 70u⁶ - 20u⁷`, flat to third order at both ends.
fn smoothstep7(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u.powi(4) * (35.0 + u * (-84.0 + u * (70.0 - 20.0 * u)))
}

impl ObservableSpec {
    pub fn gaussian_bump(center: Vec<f64>, width: f64) -> Result<Self> {
        Self::new(ObservableShape::GaussianBump, center, width)
    }

    pub fn cosine_bump(center: Vec<f64>, width: f64) -> Result<Self> {
        Self::new(ObservableShape::CosineBump, center, width)
    }

    pub fn constant(value: f64, arity: usize) -> Result<Self> {
        Self::new(ObservableShape::Constant { value }, vec![0.0; arity], 1.0)
    }

    pub fn new(shape: ObservableShape, center: Vec<f64>, width: f64) -> Result<Self> {
        let spec = ObservableSpec { shape, center, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.is_empty() {
            return Err(Error::invalid("observable arity must be at least 1"));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("observable center must be finite"));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::invalid(format!("observable width must be positive, got {}", self.width)));
        }
        if let ObservableShape::Constant { value } = self.shape {
            if !value.is_finite() {
                return Err(Error::invalid("constant observable must be finite"));
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.center.len()
    }

    /// Radius of the support around the center, in argument units.
    pub fn support_radius(&self) -> f64 {
        match self.shape {
            ObservableShape::GaussianBump => 4.0 * self.width,
            ObservableShape::CosineBump => self.width,
            ObservableShape::Constant { .. } => f64::INFINITY,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arity());
        let r = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum::<f64>()
            .sqrt()
            / self.width;
        match self.shape {
            ObservableShape::GaussianBump => {
                if r >= 4.0 {
                    0.0
                } else {
                    (-0.5 * r * r).exp() * (1.0 - smoothstep7(r - 3.0))
                }
            }
            ObservableShape::CosineBump => {
                if r >= 1.0 {
                    0.0
                } else {
                    let h = 0.5 * (1.0 + (std::f64::consts::PI * r).cos());
                    h * h
                }
            }
            ObservableShape::Constant { value } => value,
        }
    }
}

/// Eigenvalues of `trials` independent samples.
pub fn sample_spectra(spec: &EnsembleSpec, trials: usize, streams: TrialStreams) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    run_trials(trials, |k| eigenvalues(&spec.sample(&mut streams.stream(k, 0))?))
}

/// Empirical frequency with a 95% Wilson score interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frequency {
    pub frequency: f64,
    pub events: usize,
    pub trials: usize,
    pub lower: f64,
    pub upper: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

impl Frequency {
    pub fn new(events: usize, trials: usize) -> Result<Self> {
        if trials == 0 || events > trials {
            return Err(Error::invalid(format!("bad frequency {events}/{trials}")));
        }
        let n = trials as f64;
        let p = events as f64 / n;
        let z2 = Z95 * Z95;
        let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
        let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
        Ok(Frequency {
            frequency: p,
            events,
            trials,
            lower: (center - half).max(0.0),
            upper: (center + half).min(1.0),
        })
    }

    /// Fraction of `values` at or below `threshold`.
    pub fn at_most(values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(values.iter().filter(|&&v| v <= threshold).count(), values.len())
    }
}

fn check_gap_index(n: usize, i: usize) -> Result<()> {
    if i == 0 || i >= n {
        return Err(Error::invalid(format!("gap index {i} needs 1 <= i < N = {n}")));
    }
    Ok(())
}

/// Raw gaps `λ_{i+1} - λ_i` (one-based `i`) over independent trials.
pub fn sample_gaps_at(spec: &EnsembleSpec, i: usize, trials: usize, streams: TrialStreams) -> Result<Vec<f64>> {
    spec.validate()?;
    check_gap_index(spec.n, i)?;
    run_trials(trials, |k| {
        let ev = eigenvalues(&spec.sample(&mut streams.stream(k, 0))?)?;
        Ok(ev[i] - ev[i - 1])
    })
}

/// `N ρ_sc(γ_i)` multiplying raw gaps at index `i`.
pub fn gap_scale(n: usize, i: usize) -> f64 {
    n as f64 * rho_sc(classical_location(i, n))
}

pub const MIN_REPULSION_TRIALS: usize = 100;

/// Frequency of `|λ_i - λ_{i+1}| <= N^{-1-τ}`.
pub fn level_repulsion_probability(
    spec: &EnsembleSpec,
    i: usize,
    tau: f64,
    trials: usize,
    streams: TrialStreams,
) -> Result<Frequency> {
    if trials < MIN_REPULSION_TRIALS {
        return Err(Error::invalid(format!("need at least {MIN_REPULSION_TRIALS} trials, got {trials}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let gaps = sample_gaps_at(spec, i, trials, streams)?;
    Frequency::at_most(&gaps, (spec.n as f64).powf(-1.0 - tau))
}

/// `N^{-τ/2}`.
pub fn repulsion_envelope(n: usize, tau: f64) -> f64 {
    (n as f64).powf(-tau / 2.0)
}

fn check_offsets(n: usize, obs: &ObservableSpec, i: usize, offsets: &[usize]) -> Result<()> {
    obs.validate()?;
    if offsets.len() != obs.arity() {
        return Err(Error::invalid(format!(
            "{} offsets for an observable of arity {}",
            offsets.len(),
            obs.arity()
        )));
    }
    if i == 0 || offsets.iter().any(|&o| o == 0 || i + o > n) {
        return Err(Error::invalid(format!("index {i} with offsets {offsets:?} leaves 1..={n}")));
    }
    Ok(())
}

/// `O(Nρ_sc(γ_i)(λ_i - λ_{i+o_1}), ...)` on one spectrum.
pub fn gap_observable(eigenvalues: &[f64], obs: &ObservableSpec, i: usize, offsets: &[usize]) -> Result<f64> {
    let n = eigenvalues.len();
    check_offsets(n, obs, i, offsets)?;
    let scale = gap_scale(n, i);
    let args: Vec<f64> = offsets
        .iter()
        .map(|&o| scale * (eigenvalues[i - 1] - eigenvalues[i + o - 1]))
        .collect();
    Ok(obs.eval(&args))
}

/// Monte Carlo estimate of `E[O(Nρ_sc(γ_i)(λ_i - λ_{i+o_1}), ...)]`.
pub fn gap_observable_expectation(
    spec: &EnsembleSpec,
    obs: &ObservableSpec,
    i: usize,
    offsets: &[usize],
    trials: usize,
    streams: TrialStreams,
) -> Result<Estimate> {
    spec.validate()?;
    check_offsets(spec.n, obs, i, offsets)?;
    let values = run_trials(trials, |k| {
        let ev = eigenvalues(&spec.sample(&mut streams.stream(k, 0))?)?;
        gap_observable(&ev, obs, i, offsets)
    })?;
    Estimate::from_samples(&values)
}

/// Energy points used to average over `[E - b, E + b]`.
pub const CORRELATION_GRID: usize = 128;

/// Window-averaged correlation estimator
/// `(1/2b) ∫_{E-b}^{E+b} Σ_{i_1 ≠ ... ≠ i_n} O(Nρ_sc(E)(λ_{i_1} - E'), ...) dE'`,
/// by the midpoint rule on [`CORRELATION_GRID`] points, averaged over spectra.
pub fn correlation_average(spectra: &[Vec<f64>], e: f64, b: f64, obs: &ObservableSpec) -> Result<Estimate> {
    obs.validate()?;
    if obs.arity() > 2 {
        return Err(Error::UnsupportedArity(obs.arity()));
    }
    if spectra.is_empty() {
        return Err(Error::NoData("correlation estimator needs at least one spectrum"));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::invalid(format!("window half-width must be positive, got {b}")));
    }
    if !(e.abs() < 2.0) {
        return Err(Error::invalid(format!("energy {e} must lie inside the bulk")));
    }
    let values: Vec<f64> = spectra
        .par_iter()
        .map(|ev| correlation_single(ev, e, b, obs))
        .collect::<Result<Vec<_>>>()?;
    Estimate::from_samples(&values)
}

fn correlation_single(ev: &[f64], e: f64, b: f64, obs: &ObservableSpec) -> Result<f64> {
    if ev.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("spectra must be sorted ascending"));
    }
    let scale = ev.len() as f64 * rho_sc(e);
    let radius = obs.support_radius();
    let window = |ep: f64, c: f64| -> (usize, usize) {
        if radius.is_infinite() {
            return (0, ev.len());
        }
        let lo = ep + (c - radius) / scale;
        let hi = ep + (c + radius) / scale;
        (ev.partition_point(|&x| x < lo), ev.partition_point(|&x| x <= hi))
    };
    let mut per_point = Vec::with_capacity(CORRELATION_GRID);
    for g in 0..CORRELATION_GRID {
        let ep = e - b + 2.0 * b * (g as f64 + 0.5) / CORRELATION_GRID as f64;
        let alpha = |k: usize| scale * (ev[k] - ep);
        let (a0, a1) = window(ep, obs.center[0]);
        let total = if obs.arity() == 1 {
            compensated_sum((a0..a1).map(|k| obs.eval(&[alpha(k)])))
        } else {
            let (b0, b1) = window(ep, obs.center[1]);
            let mut terms = Vec::new();
            for k in a0..a1 {
                for l in b0..b1 {
                    if k != l {
                        terms.push(obs.eval(&[alpha(k), alpha(l)]));
                    }
                }
            }
            compensated_sum(terms)
        };
        per_point.push(total);
    }
    Ok(compensated_sum(per_point) / CORRELATION_GRID as f64)
}

/// Paired flow comparison of `E[F(H_0)]` and `E[F(H_t)]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowComparison {
    pub e0: f64,
    pub et: f64,
    pub diff: f64,
    pub se: f64,
    pub t: f64,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
}

/// Coupled pair `(H_0, H_t)` for trial `k`: the first lane draws `H_0`, the second the flow noise.
pub fn coupled_pair(
    spec: &EnsembleSpec,
    params: &FlowParams,
    streams: TrialStreams,
    k: usize,
) -> Result<(SymmetricMatrix, SymmetricMatrix)> {
    let h0 = spec.sample(&mut streams.stream(k, 0))?;
    let ht = evolve(&h0, params, &mut streams.stream(k, 1))?;
    Ok((h0, ht))
}

fn paired_comparison(pairs: Vec<(f64, f64)>, t: f64, n: usize, seed: u64) -> Result<FlowComparison> {
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    let diff = Estimate::from_samples(&d)?;
    Ok(FlowComparison {
        e0: Estimate::from_samples(&a)?.mean,
        et: Estimate::from_samples(&b)?.mean,
        diff: diff.mean,
        se: diff.se,
        t,
        n,
        trials: pairs.len(),
        seed,
    })
}

/// Coupled estimate of `E[χ_M(Q_i(H_t))] - E[χ_M(Q_i(H_0))]`.
pub fn chi_q_flow_comparison(
    spec: &EnsembleSpec,
    t: f64,
    i: usize,
    cut: &CutoffSpec,
    trials: usize,
    streams: TrialStreams,
) -> Result<FlowComparison> {
    spec.validate()?;
    let params = FlowParams::for_ensemble(spec, t)?;
    if i == 0 || i > spec.n {
        return Err(Error::invalid(format!("index {i} outside 1..={}", spec.n)));
    }
    let pairs = run_trials(trials, |k| {
        let (h0, ht) = coupled_pair(spec, &params, streams, k)?;
        let q0 = q_statistic(&eigenvalues(&h0)?, i)?;
        let qt = if t == 0.0 { q0 } else { q_statistic(&eigenvalues(&ht)?, i)? };
        Ok((chi_m(q0, cut), chi_m(qt, cut)))
    })?;
    paired_comparison(pairs, t, spec.n, streams.seed)
}

/// Scalar map applied to `N^{-1} Tr G(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "snake_case")]
pub enum TraceFunctional {
    ImaginaryPart,
    RealPart,
    /// One-argument catalog observable applied to the imaginary part.
    BumpOfImaginary { observable: ObservableSpec },
}

impl TraceFunctional {
    pub fn validate(&self) -> Result<()> {
        if let TraceFunctional::BumpOfImaginary { observable } = self {
            observable.validate()?;
            if observable.arity() != 1 {
                return Err(Error::UnsupportedArity(observable.arity()));
            }
        }
        Ok(())
    }

    pub fn apply(&self, m: Complex64) -> f64 {
        match self {
            TraceFunctional::ImaginaryPart => m.im,
            TraceFunctional::RealPart => m.re,
            TraceFunctional::BumpOfImaginary { observable } => observable.eval(&[m.im]),
        }
    }
}

/// Admissible spectral-parameter window: `|E| <= 2 - κ`, `N^{-1-δ} <= η <= N^{-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenWindow {
    pub kappa: f64,
    pub delta: f64,
}

impl GreenWindow {
    pub fn check(&self, n: usize, zs: &[ComplexPoint]) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 2.0) || !(self.delta > 0.0) {
            return Err(Error::invalid(format!("bad window kappa={} delta={}", self.kappa, self.delta)));
        }
        if zs.is_empty() {
            return Err(Error::invalid("green comparison needs at least one spectral parameter"));
        }
        let nf = n as f64;
        let (eta_lo, eta_hi) = (nf.powf(-1.0 - self.delta), 1.0 / nf);
        let slack = 1e-12;
        let bad: Vec<String> = zs
            .iter()
            .filter(|z| {
                z.energy().abs() > 2.0 - self.kappa
                    || z.eta() < eta_lo * (1.0 - slack)
                    || z.eta() > eta_hi * (1.0 + slack)
            })
            .map(|z| format!("({}, {})", z.energy(), z.eta()))
            .collect();
        if !bad.is_empty() {
            return Err(Error::invalid(format!(
                "spectral parameters outside |E| <= {} and {eta_lo:e} <= eta <= {eta_hi:e}: {}",
                2.0 - self.kappa,
                bad.join(", ")
            )));
        }
        Ok(())
    }
}

/// Coupled estimate of `E[F̄(H_t)] - E[F̄(H_0)]`, `F̄` averaging `F(N^{-1} Tr G(z))` over `zs`.
pub fn green_trace_comparison(
    spec: &EnsembleSpec,
    t: f64,
    zs: &[ComplexPoint],
    f: &TraceFunctional,
    window: &GreenWindow,
    trials: usize,
    streams: TrialStreams,
) -> Result<FlowComparison> {
    spec.validate()?;
    f.validate()?;
    window.check(spec.n, zs)?;
    let params = FlowParams::for_ensemble(spec, t)?;
    let functional = |ev: &[f64]| compensated_sum(zs.iter().map(|&z| f.apply(stieltjes_empirical(ev, z)))) / zs.len() as f64;
    let pairs = run_trials(trials, |k| {
        let (h0, ht) = coupled_pair(spec, &params, streams, k)?;
        let a = functional(&eigenvalues(&h0)?);
        let b = if t == 0.0 { a } else { functional(&eigenvalues(&ht)?) };
        Ok((a, b))
    })?;
    paired_comparison(pairs, t, spec.n, streams.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::classical_locations;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn ks_examples() {
        let a = EmpiricalDistribution::new(vec![0.3, 0.1, 0.2]).unwrap();
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        let z = EmpiricalDistribution::new(vec![0.0]).unwrap();
        let o = EmpiricalDistribution::new(vec![1.0]).unwrap();
        assert_eq!(ks_distance(&z, &o).unwrap(), 1.0);
        let e = EmpiricalDistribution::new(vec![]).unwrap();
        assert!(ks_distance(&a, &e).is_err());
        assert_eq!(a.cdf(0.2), 2.0 / 3.0);
        assert_eq!(a.cdf(0.0), 0.0);
    }

    #[test]
    fn ks_uniform_resampled() {
        let mut r1 = crate::rng::derive_stream(10, 0);
        let mut r2 = crate::rng::derive_stream(10, 1);
        let a = EmpiricalDistribution::new((0..10_000).map(|_| r1.uniform()).collect()).unwrap();
        let b = EmpiricalDistribution::new((0..10_000).map(|_| r2.uniform()).collect()).unwrap();
        assert!(ks_distance(&a, &b).unwrap() <= 0.03);
        assert!(ks_against(&a, |x| x.clamp(0.0, 1.0)).unwrap() <= 0.02);
    }

    #[test]
    fn histogram_examples() {
        let one = EmpiricalDistribution::new(vec![0.5]).unwrap();
        let h = Histogram::new(&one, 1, (0.0, 2.0)).unwrap();
        assert_eq!(h.rows[0].3, 0.5);
        let mut r = crate::rng::derive_stream(11, 0);
        let u = EmpiricalDistribution::new((0..10_000).map(|_| r.uniform()).collect()).unwrap();
        let h = Histogram::new(&u, 10, (0.0, 1.0)).unwrap();
        assert_eq!(h.rows.iter().map(|r| r.2).sum::<usize>(), 10_000);
        assert!(h.rows.iter().all(|r| (r.3 - 1.0).abs() <= 0.15));
        assert!(Histogram::new(&EmpiricalDistribution::new(vec![]).unwrap(), 3, (0.0, 1.0)).is_err());
        assert!(h.to_csv().starts_with("bin_left,bin_right,count,density\n"));
    }

    #[test]
    fn gaps_from_classical_locations() {
        let n = 2000;
        let g = bulk_gaps(&classical_locations(n), 0.25).unwrap();
        assert!(!g.is_empty());
        assert!(g.iter().all(|x| (x - 1.0).abs() <= 0.05), "{:?}", g.iter().fold(0.0f64, |a, b| a.max((b - 1.0).abs())));
        assert!(bulk_gaps(&[0.0, 1.0], 0.6).is_err());
    }

    #[test]
    fn q_statistic_examples() {
        let n = 3.0;
        let ev = [0.0, 1.0 / n, 2.0 / n];
        assert!((q_statistic(&ev, 2).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(q_statistic(&[0.0, 1.0], 1).unwrap(), 0.25);
        assert_eq!(q_statistic(&[0.0, 0.0, 1.0], 1).unwrap(), f64::INFINITY);
        let n = 2000;
        let ev: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
        let q = q_statistic(&ev, n / 2).unwrap();
        assert!((q - std::f64::consts::PI.powi(2) / 3.0).abs() <= 0.01, "{q}");
        assert!(q_statistic(&ev, 0).is_err());
    }

    #[test]
    fn chi_examples() {
        let cut = CutoffSpec::new(8.0, 0.2).unwrap();
        assert_eq!(chi_m(0.0, &cut), 0.0);
        assert_eq!(chi_m(13.0, &cut), 8.0);
        assert_eq!(chi_m(7.0, &cut), 7.0);
        assert_eq!(chi_m_derivative(7.0, &cut, 1), 1.0);
        assert_eq!(chi_m(f64::INFINITY, &cut), 8.0);
        assert!((chi_m(8.0 - 1e-12, &cut) - 8.0).abs() < 1e-10);
        assert!(CutoffSpec::new(1.0, 0.2).is_err());
    }

    #[test]
    fn observable_catalog() {
        let g = ObservableSpec::gaussian_bump(vec![0.0], 1.0).unwrap();
        assert_eq!(g.eval(&[0.0]), 1.0);
        assert_eq!(g.eval(&[4.0]), 0.0);
        assert!((g.eval(&[1.0]) - (-0.5f64).exp()).abs() < 1e-15);
        let c = ObservableSpec::cosine_bump(vec![1.0, 1.0], 2.0).unwrap();
        assert_eq!(c.eval(&[1.0, 1.0]), 1.0);
        assert_eq!(c.eval(&[3.0, 1.0]), 0.0);
        assert!(ObservableSpec::gaussian_bump(vec![], 1.0).is_err());
        assert!(ObservableSpec::gaussian_bump(vec![0.0], 0.0).is_err());
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"shape":"gaussian_bump","center":[0.0],"width":1.0}"#);
        let back: ObservableSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn wilson_interval() {
        let f = Frequency::new(0, 100).unwrap();
        assert_eq!(f.frequency, 0.0);
        assert!(f.lower.abs() < 1e-15 && f.upper > 0.03 && f.upper < 0.04);
        let f = Frequency::new(50, 100).unwrap();
        assert!((f.lower - 0.4038).abs() < 1e-3 && (f.upper - 0.5962).abs() < 1e-3);
        let unit = Frequency::at_most(&[1.0; 200], 0.5).unwrap();
        assert_eq!(unit.frequency, 0.0);
    }

    #[test]
    fn constant_observable_is_exact() {
        let ev: Vec<f64> = classical_locations(200);
        let obs = ObservableSpec::constant(0.7, 1).unwrap();
        assert_eq!(gap_observable(&ev, &obs, 100, &[1]).unwrap(), 0.7);
        assert!(gap_observable(&ev, &obs, 200, &[1]).is_err());
    }

    #[test]
    fn correlation_of_classical_locations() {
        let n = 4000;
        let ev = classical_locations(n);
        let obs = ObservableSpec::gaussian_bump(vec![0.0], 1.0).unwrap();
        let est = correlation_average(&[ev], 0.0, 0.01, &obs).unwrap();
        // ∫ O over the line by a fine midpoint rule
        let h = 1e-4;
        let integral: f64 = (0..80_000).map(|k| obs.eval(&[-4.0 + h * (k as f64 + 0.5)]) * h).sum();
        assert!((est.mean / integral - 1.0).abs() <= 0.02, "{} vs {integral}", est.mean);
        assert!(correlation_average(&[], 0.0, 0.01, &obs).is_err());
        let three = ObservableSpec::gaussian_bump(vec![0.0; 3], 1.0).unwrap();
        assert!(matches!(
            correlation_average(&[vec![0.0]], 0.0, 0.01, &three),
            Err(Error::UnsupportedArity(3))
        ));
    }

    #[test]
    fn pair_correlation_counts_ordered_distinct_pairs() {
        // four coincident points: 4·3 ordered pairs, each with O = 1
        let ev = vec![0.0; 4];
        let obs = ObservableSpec::constant(1.0, 2).unwrap();
        let est = correlation_average(&[ev], 0.0, 0.1, &obs).unwrap();
        assert_eq!(est.mean, 12.0);
    }

    #[test]
    fn zero_time_comparisons_are_exactly_zero() {
        let spec = EnsembleSpec::erdos_renyi(60, 0.4);
        let cut = CutoffSpec::for_dimension(60, 0.2).unwrap();
        let c = chi_q_flow_comparison(&spec, 0.0, 30, &cut, 8, TrialStreams::new(3)).unwrap();
        assert_eq!(c.diff, 0.0);
        assert_eq!(c.se, 0.0);
        let z = ComplexPoint::new(0.1, 1.0 / 60.0).unwrap();
        let w = GreenWindow { kappa: 0.5, delta: 0.5 };
        let g = green_trace_comparison(&spec, 0.0, &[z], &TraceFunctional::ImaginaryPart, &w, 8, TrialStreams::new(3)).unwrap();
        assert_eq!(g.diff, 0.0);
    }

    #[test]
    fn green_window_is_enforced() {
        let spec = EnsembleSpec::goe(50);
        let w = GreenWindow { kappa: 0.5, delta: 0.5 };
        let f = TraceFunctional::ImaginaryPart;
        let far = ComplexPoint::new(1.8, 0.01).unwrap();
        assert!(green_trace_comparison(&spec, 0.1, &[far], &f, &w, 4, TrialStreams::new(1)).unwrap_err().is_validation());
        let wide = ComplexPoint::new(0.0, 0.5).unwrap();
        assert!(green_trace_comparison(&spec, 0.1, &[wide], &f, &w, 4, TrialStreams::new(1)).is_err());
    }

    #[test]
    fn trial_errors_carry_the_index() {
        let err = run_trials(5, |k| if k >= 3 { Err(Error::NoData("x")) } else { Ok(k) }).unwrap_err();
        assert_eq!(err, Error::Trial { trial: 3, source: Box::new(Error::NoData("x")) });
        assert!(err.is_validation());
    }
}
