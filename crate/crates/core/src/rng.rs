//! Reproducible random streams.
//!
//! Every stream is a ChaCha12 keystream: the key is expanded from the master
//! seed and the 64-bit stream word is the stream index. Two streams with the
//! same key and different indices walk disjoint blocks of the same counter
//! space, so a trial's randomness depends only on `(master_seed, index)` and
//! never on which worker happens to run it.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Number of stream lanes reserved per Monte Carlo trial.
///
/// Trial `t` owns stream indices `t * LANES_PER_TRIAL .. (t + 1) * LANES_PER_TRIAL`.
pub const LANES_PER_TRIAL: u64 = 8;

/// A deterministic random stream identified by `(master_seed, stream_index)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha12Rng,
    spare_normal: Option<f64>,
}

/// Derive the stream with the given index from a master seed.
pub fn derive_stream(master_seed: u64, stream_index: u64) -> RngStream {
    let mut inner = ChaCha12Rng::seed_from_u64(master_seed);
    inner.set_stream(stream_index);
    RngStream {
        master_seed,
        stream_index,
        inner,
        spare_normal: None,
    }
}

/// Stream for lane `lane` of Monte Carlo trial `trial`.
pub fn trial_stream(master_seed: u64, trial: u64, lane: u64) -> RngStream {
    debug_assert!(lane < LANES_PER_TRIAL);
    derive_stream(master_seed, trial * LANES_PER_TRIAL + lane)
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    fn uniform_open_low(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw by the Box-Muller transform.
    ///
    /// Each pair of uniforms yields two normals; the second is cached, so the
    /// number of raw draws consumed is a fixed function of the number of calls.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let radius = (-2.0 * self.uniform_open_low().ln()).sqrt();
        let angle = std::f64::consts::TAU * self.uniform();
        let (s, c) = angle.sin_cos();
        self.spare_normal = Some(radius * s);
        radius * c
    }

    /// Draw from `Normal(mean, variance)`. Zero variance returns `mean` exactly.
    pub fn gaussian(&mut self, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::invalid(format!(
                "gaussian requires finite mean and variance >= 0, got mean {mean}, variance {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(mean);
        }
        Ok(mean + variance.sqrt() * self.standard_normal())
    }

    /// Bernoulli draw returning `true` with probability `prob`.
    pub fn bernoulli(&mut self, prob: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::invalid(format!(
                "bernoulli probability must lie in [0, 1], got {prob}"
            )));
        }
        Ok(self.uniform() < prob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: u64, index: u64, n: usize) -> Vec<u64> {
        let mut s = derive_stream(seed, index);
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn identical_keys_give_identical_sequences() {
        assert_eq!(draws(42, 0, 1000), draws(42, 0, 1000));
    }

    #[test]
    fn different_index_or_seed_differs() {
        assert_ne!(draws(42, 0, 1)[0], draws(42, 1, 1)[0]);
        assert_ne!(draws(42, 0, 1)[0], draws(43, 0, 1)[0]);
    }

    #[test]
    fn degenerate_gaussian_is_exact() {
        let mut s = derive_stream(1, 0);
        assert_eq!(s.gaussian(3.5, 0.0).unwrap(), 3.5);
        assert!(s.gaussian(0.0, -1.0).is_err());
        assert!(s.gaussian(0.0, f64::NAN).is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let mut s = derive_stream(7, 3);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| s.gaussian(0.0, 1.0).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.005, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.01, "var {var}");
    }

    #[test]
    fn shifted_normal_mean() {
        let mut s = derive_stream(8, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.gaussian(2.0, 4.0).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() <= 0.008, "mean {mean}");
    }

    #[test]
    fn bernoulli_endpoints_and_frequency() {
        let mut s = derive_stream(9, 0);
        assert!((0..10_000).all(|_| !s.bernoulli(0.0).unwrap()));
        assert!((0..10_000).all(|_| s.bernoulli(1.0).unwrap()));
        assert!(s.bernoulli(1.5).is_err());
        assert!(s.bernoulli(-0.1).is_err());
        let n = 1_000_000;
        let hits = (0..n).filter(|_| s.bernoulli(0.3).unwrap()).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.3).abs() <= 0.002, "freq {freq}");
    }

    #[test]
    fn paired_streams_are_uncorrelated() {
        let mut a = derive_stream(11, 0);
        let mut b = derive_stream(11, 1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.uniform()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() <= 0.01, "corr {corr}");
    }

    #[test]
    fn trial_lanes_do_not_collide() {
        let a = trial_stream(5, 0, 1).stream_index();
        let b = trial_stream(5, 1, 0).stream_index();
        assert_ne!(a, b);
        assert_eq!(b, LANES_PER_TRIAL);
    }
}
