use std::path::PathBuf;

use rmtlab_core::ensembles::{EnsembleSpec, VarianceProfile};
use rmtlab_core::statistics::{ObservableSpec, TraceFunctional};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Spectrum,
    LocalLaw,
    Gaps,
    Repulsion,
    FlowCompare,
    FreeConv,
    GreenCompare,
    Acceptance,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::LocalLaw => "local-law",
            ExperimentKind::Gaps => "gaps",
            ExperimentKind::Repulsion => "repulsion",
            ExperimentKind::FlowCompare => "flow-compare",
            ExperimentKind::FreeConv => "free-conv",
            ExperimentKind::GreenCompare => "green-compare",
            ExperimentKind::Acceptance => "acceptance",
        }
    }

    fn needs_flow(self) -> bool {
        matches!(self, ExperimentKind::FlowCompare | ExperimentKind::GreenCompare)
    }
}

/// Optional flow applied to each sampled matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t: f64,
    /// Override of the flow's variance profile; defaults to the ensemble's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<VarianceProfile>,
    /// Rank-one mean coefficient `f` of the flow; defaults to the ensemble's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_f: Option<f64>,
    /// Sample through the Gaussian-divisible decomposition.
    #[serde(default)]
    pub decompose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreeConvBase {
    Semicircle,
    #[default]
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceScale {
    #[default]
    Full,
    Quick,
}

/// Statistic knobs shared by the experiments; unused ones are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub kappa: f64,
    pub tau: f64,
    /// Window half-width; `N^{-0.9}` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(rename = "E")]
    pub energy: f64,
    /// One-based eigenvalue index; `N/2` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub energies: Vec<f64>,
    /// Resolutions `η`; experiment-specific defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    pub functional: TraceFunctional,
    pub small_gap: f64,
    pub bins: usize,
    pub delta: f64,
    pub local_law_prefactor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_sq: Option<f64>,
    pub base: FreeConvBase,
    pub grid_points: usize,
    pub eta: f64,
    pub scale: AcceptanceScale,
    /// Rerun small configurations at several thread counts during acceptance.
    pub check_determinism: bool,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            kappa: 0.25,
            tau: 0.2,
            b: None,
            energy: 0.0,
            index: None,
            energies: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            etas: None,
            observable: None,
            functional: TraceFunctional::ImaginaryPart,
            small_gap: 0.1,
            bins: 60,
            delta: 0.5,
            local_law_prefactor: rmtlab_core::spectral::LOCAL_LAW_PREFACTOR,
            theta_sq: None,
            base: FreeConvBase::Sample,
            grid_points: 200,
            eta: 0.01,
            scale: AcceptanceScale::Full,
            check_determinism: true,
        }
    }
}

fn one() -> usize {
    1
}

fn default_ensemble() -> EnsembleSpec {
    EnsembleSpec::goe(500)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default = "default_ensemble")]
    pub ensemble: EnsembleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub stats: StatsConfig,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, ensemble: EnsembleSpec) -> Self {
        ExperimentConfig {
            experiment: Some(kind),
            ensemble,
            flow: None,
            stats: StatsConfig::default(),
            trials: 1,
            seed: 0,
            threads: 1,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn kind(&self) -> Option<ExperimentKind> {
        self.experiment
    }

    pub fn n(&self) -> usize {
        self.ensemble.n
    }

    /// One-based index, defaulting to the center of the spectrum.
    pub fn index(&self) -> usize {
        self.stats.index.unwrap_or(self.n() / 2)
    }

    pub fn b(&self) -> f64 {
        self.stats.b.unwrap_or_else(|| (self.n() as f64).powf(-0.9))
    }

    /// SHA-256 over the canonical JSON of everything except `threads` and `out`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("threads");
            map.remove("out");
        }
        let canonical = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Every problem with the configuration, empty when it is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let Some(kind) = self.experiment else {
            out.push("experiment kind is missing".into());
            return out;
        };
        let s = &self.stats;
        if kind != ExperimentKind::Acceptance {
            out.extend(self.ensemble.violations().into_iter().map(|v| format!("ensemble: {v}")));
        }
        if self.trials == 0 {
            out.push("trials must be at least 1".into());
        }
        if self.threads == 0 {
            out.push("threads must be at least 1".into());
        }
        if !(s.kappa > 0.0 && s.kappa < 0.5) {
            out.push(format!("stats.kappa must lie in (0, 1/2), got {}", s.kappa));
        }
        if !(s.tau > 0.0) {
            out.push(format!("stats.tau must be positive, got {}", s.tau));
        }
        if let Some(b) = s.b {
            if !(b > 0.0) {
                out.push(format!("stats.b must be positive, got {b}"));
            }
        }
        if !(s.energy.abs() < 2.0) {
            out.push(format!("stats.E must lie in (-2, 2), got {}", s.energy));
        }
        if s.energies.is_empty() || s.energies.iter().any(|e| !e.is_finite()) {
            out.push("stats.energies must be a nonempty list of finite values".into());
        }
        if let Some(etas) = &s.etas {
            if etas.is_empty() || etas.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                out.push("stats.etas must be a nonempty list of positive values".into());
            }
        }
        if let Some(obs) = &s.observable {
            if let Err(e) = obs.validate() {
                out.push(format!("stats.observable: {e}"));
            }
        }
        if let Err(e) = s.functional.validate() {
            out.push(format!("stats.functional: {e}"));
        }
        if !(s.small_gap > 0.0) {
            out.push(format!("stats.small_gap must be positive, got {}", s.small_gap));
        }
        if s.bins == 0 {
            out.push("stats.bins must be at least 1".into());
        }
        if !(s.delta > 0.0) {
            out.push(format!("stats.delta must be positive, got {}", s.delta));
        }
        if !(s.local_law_prefactor > 0.0) {
            out.push("stats.local_law_prefactor must be positive".into());
        }
        if let Some(t2) = s.theta_sq {
            if !(t2 >= 0.0) || !t2.is_finite() {
                out.push(format!("stats.theta_sq must be finite and >= 0, got {t2}"));
            }
        }
        if s.grid_points < 2 {
            out.push("stats.grid_points must be at least 2".into());
        }
        if !(s.eta > 0.0) {
            out.push(format!("stats.eta must be positive, got {}", s.eta));
        }
        if kind != ExperimentKind::Acceptance {
            let n = self.n();
            if let Some(i) = s.index {
                if i == 0 || i >= n {
                    out.push(format!("stats.index must lie in 1..{n}, got {i}"));
                }
            }
        }
        match (&self.flow, kind.needs_flow()) {
            (None, true) => out.push(format!("experiment {} requires a flow section", kind.name())),
            (Some(flow), _) => {
                if !(flow.t >= 0.0) || !flow.t.is_finite() {
                    out.push(format!("flow.t must be finite and >= 0, got {}", flow.t));
                }
                if let Some(p) = &flow.profile {
                    out.extend(p.violations(self.n()).into_iter().map(|v| format!("flow.profile: {v}")));
                }
                if let Some(f) = flow.mean_f {
                    if !(f >= 0.0) || !f.is_finite() {
                        out.push(format!("flow.mean_f must be finite and >= 0, got {f}"));
                    }
                }
            }
            (None, false) => {}
        }
        if kind == ExperimentKind::Repulsion && self.trials < rmtlab_core::statistics::MIN_REPULSION_TRIALS {
            out.push(format!(
                "repulsion needs at least {} trials, got {}",
                rmtlab_core::statistics::MIN_REPULSION_TRIALS,
                self.trials
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_json(r#"{"ensemble": {"n": 100, "kind": "goe"}}"#).unwrap();
        assert_eq!(c.trials, 1);
        assert_eq!(c.stats.kappa, 0.25);
        assert_eq!(c.index(), 50);
        assert!(c.violations().iter().any(|v| v.contains("experiment kind")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"ensemble": {"n": 100, "kind": "goe"}, "trails": 3}"#).is_err());
    }

    #[test]
    fn hash_ignores_threads_and_out() {
        let mut a = ExperimentConfig::new(ExperimentKind::Spectrum, EnsembleSpec::goe(50));
        let mut b = a.clone();
        b.threads = 4;
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        a.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn all_violations_are_listed() {
        let mut c = ExperimentConfig::new(ExperimentKind::FlowCompare, EnsembleSpec::erdos_renyi(100, 0.6));
        c.trials = 0;
        c.stats.kappa = 0.7;
        let v = c.violations();
        assert!(v.len() >= 4, "{v:?}");
        assert!(v.iter().any(|s| s.contains("flow section")));
        assert!(v.iter().any(|s| s.starts_with("ensemble:")));
    }

    #[test]
    fn kind_names_match_serde() {
        for kind in [ExperimentKind::LocalLaw, ExperimentKind::FreeConv, ExperimentKind::Acceptance] {
            assert_eq!(serde_json::to_value(kind).unwrap(), kind.name());
        }
    }
}
