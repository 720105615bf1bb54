//! Matrix Ornstein–Uhlenbeck flow sampled exactly from its Gaussian
//! transition law, and its Gaussian-divisible decomposition.
//!
//! Each entry obeys
//! `h_ij(t) = f + exp(-t / (2 N s_ij)) (h_ij(0) - f) + N(0, s_ij (1 - exp(-t / (N s_ij))))`,
//! which keeps mean `f` and variance `s_ij` stationary.

use crate::ensembles::{sample_goe, EnsembleSpec, SymmetricMatrix, VarianceProfile};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `ϑ_t = sqrt(r (1 - e^{-t/r}) / 2)`, evaluated with `expm1` for small `t/r`.
pub fn theta_t(t: f64, r: f64) -> f64 {
    (r * -(-t / r).exp_m1() / 2.0).sqrt()
}

/// Flow time, variance profile, entry mean and the derived `r` and `ϑ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    t: f64,
    n: usize,
    profile: VarianceProfile,
    entry_mean: f64,
    r: f64,
}

impl FlowParams {
    /// `entry_mean` is the mean `f` of each entry (not the rank-one coefficient).
    pub fn new(t: f64, n: usize, profile: VarianceProfile, entry_mean: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("flow time must be finite and >= 0, got {t}")));
        }
        let problems = profile.violations(n);
        if !problems.is_empty() {
            return Err(Error::InvalidParameter(problems.join("; ")));
        }
        let r = profile.min_scaled(n);
        Ok(FlowParams {
            t,
            n,
            profile,
            entry_mean,
            r,
        })
    }

    /// Flow parameters matching the stationary law of an ensemble.
    pub fn for_ensemble(spec: &EnsembleSpec, t: f64) -> Result<Self> {
        Self::new(t, spec.n, spec.effective_profile(), spec.entry_mean())
    }

    /// Replace `r`; the decomposition needs `r <= min N s_ij` to be feasible.
    pub fn with_r(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("r must be positive, got {r}")));
        }
        self.r = r;
        Ok(self)
    }

    pub fn with_time(&self, t: f64) -> Result<Self> {
        let r = self.r;
        Self::new(t, self.n, self.profile.clone(), self.entry_mean)?.with_r(r)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn entry_mean(&self) -> f64 {
        self.entry_mean
    }

    pub fn profile(&self) -> &VarianceProfile {
        &self.profile
    }

    pub fn theta(&self) -> f64 {
        theta_t(self.t, self.r)
    }
}

/// Endpoint of the flow, optionally with its decomposition `H_t = H_t^(1) + ϑ_t G`.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub h_t: SymmetricMatrix,
    pub h_t1: Option<SymmetricMatrix>,
    pub goe: Option<SymmetricMatrix>,
}

fn check_dims(h0: &SymmetricMatrix, params: &FlowParams) -> Result<()> {
    if h0.n() != params.n {
        return Err(Error::invalid(format!(
            "matrix dimension {} does not match flow dimension {}",
            h0.n(),
            params.n
        )));
    }
    Ok(())
}

/// Sample `H_t` given `H_0` from the exact transition law.
pub fn evolve(h0: &SymmetricMatrix, params: &FlowParams, rng: &mut RngStream) -> Result<SymmetricMatrix> {
    check_dims(h0, params)?;
    let (t, n) = (params.t, params.n as f64);
    if t == 0.0 {
        return Ok(h0.clone());
    }
    let f = params.entry_mean;
    let shift = h0.entry_mean() - f;
    let out = SymmetricMatrix::from_upper_fn(params.n, |i, j| {
        let x = params.profile.scaled(i, j);
        let decay = (-t / (2.0 * x)).exp();
        let sd = (x / n * -(-t / x).exp_m1()).sqrt();
        decay * (h0.centered(i, j) + shift) + sd * rng.standard_normal()
    });
    Ok(out.with_entry_mean(f))
}

/// Sample `H_t^(1)` and an independent GOE `G`, returning both with
/// `H_t = H_t^(1) + ϑ_t G`.
///
/// The residual variance of `H_t^(1)` at `(i, j)` is
/// `(N s_ij (1 - e^{-t/(N s_ij)}) - (1 + δ_ij)/2 · r (1 - e^{-t/r})) / N`.
pub fn decompose_sample(h0: &SymmetricMatrix, params: &FlowParams, rng: &mut RngStream) -> Result<FlowSample> {
    check_dims(h0, params)?;
    let (t, n, r) = (params.t, params.n, params.r);
    let f = params.entry_mean;
    let shift = h0.entry_mean() - f;
    let gaussian_part = r * -(-t / r).exp_m1();
    let mut residual_sd = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let x = params.profile.scaled(i, j);
            let diag = if i == j { 1.0 } else { 0.5 };
            let mut residual = x * -(-t / x).exp_m1() - diag * gaussian_part;
            if residual < 0.0 {
                if residual > -1e-13 * x.max(1.0) {
                    residual = 0.0;
                } else {
                    return Err(Error::DecompositionInfeasible { row: i, col: j, residual });
                }
            }
            residual_sd.push((residual / n as f64).sqrt());
        }
    }
    let mut k = 0;
    let h_t1 = SymmetricMatrix::from_upper_fn(n, |i, j| {
        let x = params.profile.scaled(i, j);
        let decay = (-t / (2.0 * x)).exp();
        let sd = residual_sd[k];
        k += 1;
        decay * (h0.centered(i, j) + shift) + sd * rng.standard_normal()
    })
    .with_entry_mean(f);
    let goe = sample_goe(n, rng)?;
    let theta = theta_t(t, r);
    let h_t = SymmetricMatrix::from_upper_fn(n, |i, j| h_t1.centered(i, j) + theta * goe.centered(i, j))
        .with_entry_mean(f);
    Ok(FlowSample {
        h_t,
        h_t1: Some(h_t1),
        goe: Some(goe),
    })
}
