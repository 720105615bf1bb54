use std::fmt::Write as _;
use std::time::Instant;

use rmtlab_core::ensembles::{EnsembleSpec, SymmetricMatrix};
use rmtlab_core::flow::{decompose_sample, evolve, theta_t, FlowParams};
use rmtlab_core::free_conv::{
    deviation_csv, deviation_report, density_profile, window_grid, DensityCdf, FreeConvInput, DENSITY_ETA,
    QUANTILE_ETA,
};
use rmtlab_core::spectral::{classical_location, eigenvalues, local_law_deviation, ComplexPoint};
use rmtlab_core::statistics::{
    bulk_gaps, chi_q_flow_comparison, first_bulk_index, gap_scale, green_trace_comparison, ks_distance,
    ks_semicircle, repulsion_envelope, run_trials, sample_gaps_at, sample_spectra, CutoffSpec,
    EmpiricalDistribution, Estimate, Frequency, GreenWindow, Histogram, TrialStreams,
};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::acceptance::{self, CriterionOutcome};
use crate::artifacts::ArtifactWriter;
use crate::config::{ExperimentConfig, ExperimentKind, FreeConvBase};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error(transparent)]
    Core(#[from] rmtlab_core::Error),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 for bad inputs or an unusable output directory, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) | RunError::Io(_) => 2,
            RunError::Core(e) if e.is_validation() => 2,
            RunError::Core(_) => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl Metric {
    pub fn value(name: &str, value: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            se: None,
            lower: None,
            upper: None,
        }
    }

    pub fn estimate(name: &str, e: &Estimate) -> Self {
        Metric {
            se: Some(e.se),
            ..Metric::value(name, e.mean)
        }
    }

    pub fn frequency(name: &str, f: &Frequency) -> Self {
        Metric {
            lower: Some(f.lower),
            upper: Some(f.upper),
            ..Metric::value(name, f.frequency)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub experiment: String,
    /// Configuration echo without `threads` and `out`.
    pub config: Value,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<CriterionOutcome>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

pub(crate) struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub writer: ArtifactWriter,
    pub metrics: Vec<Metric>,
    pub criteria: Vec<CriterionOutcome>,
}

impl Context<'_> {
    fn push(&mut self, m: Metric) {
        self.metrics.push(m);
    }
}

/// Run on a dedicated pool with `config.threads` workers.
pub fn run_with_threads(config: &ExperimentConfig) -> Result<RunReport, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| RunError::Validation(vec![format!("cannot start {} threads: {e}", config.threads)]))?;
    pool.install(|| run(config))
}

/// Execute the configured experiment on the current rayon pool and write its artifacts.
pub fn run(config: &ExperimentConfig) -> Result<RunReport, RunError> {
    let start = Instant::now();
    let mut problems = config.violations();
    if config.out.is_none() {
        problems.push("output directory is missing".into());
    }
    problems.extend(unused_flow_settings(config));
    if !problems.is_empty() {
        return Err(RunError::Validation(problems));
    }
    let kind = config.experiment.expect("validated");
    let out = config.out.as_ref().expect("validated");
    let hash = config.hash();
    let writer = ArtifactWriter::create(out, &hash, config.seed)
        .map_err(|e| RunError::Validation(vec![format!("output directory {}: {e}", out.display())]))?;
    let mut ctx = Context {
        cfg: config,
        writer,
        metrics: Vec::new(),
        criteria: Vec::new(),
    };
    match kind {
        ExperimentKind::Spectrum => spectrum(&mut ctx)?,
        ExperimentKind::LocalLaw => local_law(&mut ctx)?,
        ExperimentKind::Gaps => gaps(&mut ctx)?,
        ExperimentKind::Repulsion => repulsion(&mut ctx)?,
        ExperimentKind::FlowCompare => flow_compare(&mut ctx)?,
        ExperimentKind::FreeConv => free_conv(&mut ctx)?,
        ExperimentKind::GreenCompare => green_compare(&mut ctx)?,
        ExperimentKind::Acceptance => acceptance::run_experiment(&mut ctx)?,
    }
    let mut echo = serde_json::to_value(config).expect("config serializes");
    if let Some(map) = echo.as_object_mut() {
        map.remove("threads");
        map.remove("out");
    }
    let mut artifacts = ctx.writer.files().to_vec();
    artifacts.push("report.json".into());
    let mut report = RunReport {
        experiment: kind.name().into(),
        config: echo,
        config_hash: hash,
        seed: config.seed,
        metrics: ctx.metrics,
        criteria: ctx.criteria,
        artifacts,
        wall_clock_seconds: 0.0,
    };
    ctx.writer.json("report.json", &report)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Plot-ready histogram rows over `range`.
pub fn emit_histogram(samples: &EmpiricalDistribution, bins: usize, range: (f64, f64)) -> Result<Histogram, RunError> {
    Ok(Histogram::new(samples, bins, range)?)
}

fn unused_flow_settings(cfg: &ExperimentConfig) -> Vec<String> {
    let (Some(kind), Some(flow)) = (cfg.experiment, &cfg.flow) else {
        return Vec::new();
    };
    let coupled = matches!(kind, ExperimentKind::FlowCompare | ExperimentKind::GreenCompare);
    if coupled && (flow.profile.is_some() || flow.mean_f.is_some() || flow.decompose) {
        vec![format!(
            "{} runs the ensemble's stationary flow; flow.profile, flow.mean_f and flow.decompose are not supported",
            kind.name()
        )]
    } else {
        Vec::new()
    }
}

pub(crate) fn flow_params(cfg: &ExperimentConfig) -> Result<Option<FlowParams>, RunError> {
    let Some(flow) = &cfg.flow else {
        return Ok(None);
    };
    let ens = &cfg.ensemble;
    let profile = flow.profile.clone().unwrap_or_else(|| ens.effective_profile());
    let entry_mean = flow.mean_f.map(|f| f / ens.n as f64).unwrap_or_else(|| ens.entry_mean());
    Ok(Some(FlowParams::new(flow.t, ens.n, profile, entry_mean)?))
}

fn sample_matrix(
    cfg: &ExperimentConfig,
    params: Option<&FlowParams>,
    streams: TrialStreams,
    k: usize,
) -> rmtlab_core::Result<SymmetricMatrix> {
    let h0 = cfg.ensemble.sample(&mut streams.stream(k, 0))?;
    match params {
        None => Ok(h0),
        Some(p) if cfg.flow.as_ref().is_some_and(|f| f.decompose) => {
            Ok(decompose_sample(&h0, p, &mut streams.stream(k, 1))?.h_t)
        }
        Some(p) => evolve(&h0, p, &mut streams.stream(k, 1)),
    }
}

fn sampled_spectra(cfg: &ExperimentConfig, params: Option<&FlowParams>) -> Result<Vec<Vec<f64>>, RunError> {
    let streams = TrialStreams::new(cfg.seed);
    Ok(run_trials(cfg.trials, |k| eigenvalues(&sample_matrix(cfg, params, streams, k)?))?)
}

fn has_outlier(cfg: &ExperimentConfig, params: Option<&FlowParams>) -> bool {
    params.map_or(cfg.ensemble.entry_mean(), |p| p.entry_mean()) > 0.0
}

/// Drop the top eigenvalue when the rank-one mean produces an outlier.
pub(crate) fn without_outlier(ev: &[f64], outlier: bool) -> Vec<f64> {
    if outlier && !ev.is_empty() {
        ev[..ev.len() - 1].to_vec()
    } else {
        ev.to_vec()
    }
}

fn spectrum(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let params = flow_params(cfg)?;
    let spectra = sampled_spectra(cfg, params.as_ref())?;
    let mut body = String::from("index,eigenvalue\n");
    for (i, l) in spectra[0].iter().enumerate() {
        writeln!(body, "{},{l:.12e}", i + 1).unwrap();
    }
    ctx.writer.csv("spectrum.csv", &body)?;
    let outlier = has_outlier(cfg, params.as_ref());
    let dist = EmpiricalDistribution::pooled(spectra.iter().map(|ev| without_outlier(ev, outlier)))?;
    let hist = emit_histogram(&dist, cfg.stats.bins, (-2.5, 2.5))?;
    ctx.writer.csv("spectrum_histogram.csv", &hist.to_csv())?;
    ctx.push(Metric::value("ks_semicircle", ks_semicircle(&dist)?));
    if outlier {
        let tops: Vec<f64> = spectra.iter().map(|ev| ev[ev.len() - 1]).collect();
        ctx.push(Metric::estimate("outlier", &Estimate::from_samples(&tops)?));
    }
    Ok(())
}

fn local_law(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let n = cfg.n() as f64;
    let params = flow_params(cfg)?;
    let spectra = sampled_spectra(cfg, params.as_ref())?;
    let etas = cfg.stats.etas.clone().unwrap_or_else(|| vec![n.powf(-0.9), n.powf(-0.5), 0.1]);
    let grid = energy_grid(&cfg.stats.energies, &etas)?;
    let q = cfg.ensemble.q();
    let mut body = String::from("trial,E,eta,dev,bound,pass\n");
    let (mut passed, mut total) = (0usize, 0usize);
    let mut worst = 0.0f64;
    for (k, ev) in spectra.iter().enumerate() {
        for p in local_law_deviation(ev, &grid, q, cfg.stats.local_law_prefactor) {
            writeln!(body, "{k},{:.6e},{:.6e},{:.10e},{:.10e},{}", p.e, p.eta, p.dev, p.bound, p.pass).unwrap();
            passed += p.pass as usize;
            total += 1;
            worst = worst.max(p.dev / p.bound);
        }
    }
    ctx.writer.csv("local_law.csv", &body)?;
    ctx.push(Metric::frequency("pass_fraction", &Frequency::new(passed, total)?));
    ctx.push(Metric::value("max_dev_over_bound", worst));
    Ok(())
}

pub(crate) fn energy_grid(energies: &[f64], etas: &[f64]) -> rmtlab_core::Result<Vec<ComplexPoint>> {
    let mut grid = Vec::with_capacity(energies.len() * etas.len());
    for &eta in etas {
        for &e in energies {
            grid.push(ComplexPoint::new(e, eta)?);
        }
    }
    Ok(grid)
}

pub(crate) fn gap_csv(first_index: usize, gaps: &[Vec<f64>]) -> String {
    let mut body = String::from("trial,index,gap\n");
    for (k, g) in gaps.iter().enumerate() {
        for (j, x) in g.iter().enumerate() {
            writeln!(body, "{k},{},{x:.10e}", first_index + j).unwrap();
        }
    }
    body
}

fn gaps(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let kappa = cfg.stats.kappa;
    let params = flow_params(cfg)?;
    let spectra = sampled_spectra(cfg, params.as_ref())?;
    let reference = sample_spectra(
        &EnsembleSpec::goe(cfg.n()),
        cfg.trials,
        TrialStreams::new(cfg.seed).reference(),
    )?;
    let g: Vec<Vec<f64>> = spectra.iter().map(|ev| bulk_gaps(ev, kappa)).collect::<Result<_, _>>()?;
    let r: Vec<Vec<f64>> = reference.iter().map(|ev| bulk_gaps(ev, kappa)).collect::<Result<_, _>>()?;
    ctx.writer.csv("gaps.csv", &gap_csv(first_bulk_index(cfg.n(), kappa), &g))?;
    let dg = EmpiricalDistribution::pooled(g.iter().cloned())?;
    let dr = EmpiricalDistribution::pooled(r)?;
    let bins = cfg.stats.bins;
    ctx.writer.csv("gap_histogram.csv", &emit_histogram(&dg, bins, (0.0, 4.0))?.to_csv())?;
    ctx.writer.csv("reference_gap_histogram.csv", &emit_histogram(&dr, bins, (0.0, 4.0))?.to_csv())?;
    let means: Vec<f64> = g.iter().map(|x| x.iter().sum::<f64>() / x.len().max(1) as f64).collect();
    ctx.push(Metric::estimate("mean_gap", &Estimate::from_samples(&means)?));
    ctx.push(Metric::value("ks_vs_goe", ks_distance(&dg, &dr)?));
    Ok(())
}

fn repulsion(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let (n, i) = (cfg.n(), cfg.index());
    let params = flow_params(cfg)?;
    let streams = TrialStreams::new(cfg.seed);
    let raw = run_trials(cfg.trials, |k| {
        let ev = eigenvalues(&sample_matrix(cfg, params.as_ref(), streams, k)?)?;
        Ok(ev[i] - ev[i - 1])
    })?;
    let reference = sample_gaps_at(&EnsembleSpec::goe(n), i, cfg.trials, streams.reference())?;
    let scale = gap_scale(n, i);
    let normalized: Vec<f64> = raw.iter().map(|g| g * scale).collect();
    let normalized_ref: Vec<f64> = reference.iter().map(|g| g * scale).collect();
    let mut body = String::from("trial,index,gap\n");
    for (k, g) in normalized.iter().enumerate() {
        writeln!(body, "{k},{i},{g:.10e}").unwrap();
    }
    ctx.writer.csv("gaps.csv", &body)?;
    let dist = EmpiricalDistribution::new(normalized.clone())?;
    ctx.writer.csv("gap_histogram.csv", &emit_histogram(&dist, cfg.stats.bins, (0.0, 4.0))?.to_csv())?;
    let s0 = cfg.stats.small_gap;
    let tau = cfg.stats.tau;
    let threshold = (n as f64).powf(-1.0 - tau);
    ctx.push(Metric::frequency("small_gap_frequency", &Frequency::at_most(&normalized, s0)?));
    ctx.push(Metric::frequency("reference_small_gap_frequency", &Frequency::at_most(&normalized_ref, s0)?));
    ctx.push(Metric::frequency("event_frequency", &Frequency::at_most(&raw, threshold)?));
    ctx.push(Metric::frequency("reference_event_frequency", &Frequency::at_most(&reference, threshold)?));
    ctx.push(Metric::value("envelope", repulsion_envelope(n, tau)));
    Ok(())
}

fn flow_compare(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let t = cfg.flow.as_ref().expect("validated").t;
    let cut = CutoffSpec::for_dimension(cfg.n(), cfg.stats.tau)?;
    let c = chi_q_flow_comparison(&cfg.ensemble, t, cfg.index(), &cut, cfg.trials, TrialStreams::new(cfg.seed))?;
    ctx.writer.json("comparison.json", &c)?;
    ctx.push(Metric::value("cutoff_m", cut.m));
    ctx.push(Metric {
        se: Some(c.se),
        ..Metric::value("diff", c.diff)
    });
    Ok(())
}

fn green_compare(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let t = cfg.flow.as_ref().expect("validated").t;
    let etas = cfg.stats.etas.clone().unwrap_or_else(|| vec![1.0 / cfg.n() as f64]);
    let zs = energy_grid(&cfg.stats.energies, &etas)?;
    let window = GreenWindow {
        kappa: cfg.stats.kappa,
        delta: cfg.stats.delta,
    };
    let c = green_trace_comparison(
        &cfg.ensemble,
        t,
        &zs,
        &cfg.stats.functional,
        &window,
        cfg.trials,
        TrialStreams::new(cfg.seed),
    )?;
    ctx.writer.json("comparison.json", &c)?;
    ctx.push(Metric {
        se: Some(c.se),
        ..Metric::value("diff", c.diff)
    });
    Ok(())
}

fn free_conv(ctx: &mut Context) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let n = cfg.n();
    let params = flow_params(cfg)?;
    let theta_sq = cfg
        .stats
        .theta_sq
        .or_else(|| params.as_ref().map(|p| theta_t(p.t(), p.r()).powi(2)))
        .unwrap_or(0.0);
    let input = match cfg.stats.base {
        FreeConvBase::Semicircle => FreeConvInput::semicircle(theta_sq)?,
        FreeConvBase::Sample => {
            let h0 = cfg.ensemble.sample(&mut TrialStreams::new(cfg.seed).stream(0, 0))?;
            FreeConvInput::empirical(&eigenvalues(&h0)?, theta_sq)?
        }
    };
    let points = cfg.stats.grid_points;
    let density = density_profile(&input, &window_grid(&input, points), DENSITY_ETA)?;
    ctx.writer.csv("density.csv", &density.to_csv())?;
    let grid: Vec<ComplexPoint> = (0..points)
        .map(|k| ComplexPoint::new(-2.0 + 4.0 * k as f64 / (points - 1) as f64, cfg.stats.eta))
        .collect::<Result<_, _>>()?;
    let dev = deviation_report(&input, &grid)?;
    ctx.writer.csv("deviation.csv", &deviation_csv(&dev))?;
    ctx.push(Metric::value("theta_sq", theta_sq));
    ctx.push(Metric::value("density_mass", density.mass()));
    ctx.push(Metric::value("max_dev_m", dev.iter().map(|p| p.dev_m).fold(0.0, f64::max)));
    ctx.push(Metric::value("max_dev_rho", dev.iter().map(|p| p.dev_rho).fold(0.0, f64::max)));
    let cdf = DensityCdf::build(&input, QUANTILE_ETA)?;
    for i in [n / 4, n / 2, 3 * n / 4].into_iter().filter(|&i| i >= 1) {
        let g = cdf.quantile(i as f64 / n as f64)?;
        ctx.push(Metric::value(&format!("gamma_t_{i}"), g));
        ctx.push(Metric::value(&format!("gamma_{i}"), classical_location(i, n)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Validation(vec![]).exit_code(), 2);
        assert_eq!(RunError::Core(rmtlab_core::Error::NoData("x")).exit_code(), 2);
        assert_eq!(RunError::Core(rmtlab_core::Error::Convergence { residual: 1.0 }).exit_code(), 3);
        let in_trial = rmtlab_core::Error::Trial {
            trial: 4,
            source: Box::new(rmtlab_core::Error::Branch { imag: -1.0 }),
        };
        assert!(in_trial.to_string().starts_with("trial 4:"));
        assert_eq!(RunError::Core(in_trial).exit_code(), 3);
    }

    #[test]
    fn histogram_examples() {
        let one = emit_histogram(&EmpiricalDistribution::new(vec![0.3]).unwrap(), 1, (0.0, 0.5)).unwrap();
        assert_eq!(one.rows[0].3, 2.0);
        let mut rng = rmtlab_core::rng::derive_stream(5, 0);
        let u: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        let h = emit_histogram(&EmpiricalDistribution::new(u).unwrap(), 10, (0.0, 1.0)).unwrap();
        assert!(h.rows.iter().all(|r| (r.3 - 1.0).abs() <= 0.15));
        assert_eq!(h.rows.iter().map(|r| r.2).sum::<usize>(), 10_000);
        let empty = EmpiricalDistribution::new(vec![]);
        assert!(empty.map_or(true, |e| emit_histogram(&e, 3, (0.0, 1.0)).is_err()));
    }

    #[test]
    fn outlier_is_dropped_only_with_a_mean() {
        assert_eq!(without_outlier(&[1.0, 2.0, 9.0], true), vec![1.0, 2.0]);
        assert_eq!(without_outlier(&[1.0, 2.0], false), vec![1.0, 2.0]);
    }
}
