//! Experiment configuration file.
//!
//! The file is TOML. `law` is the only required key; every other key has a
//! default, and the resolved configuration (all defaults filled in) is
//! written next to the outputs of each run.
//!
//! ```toml
//! law = "linear_fractional m=2"      # or "{1: 0.2, 2: 0.8}", "geometric p=0.3", "two_point 2 3 0.5 0.5"
//! increments = "rademacher"          # or "pareto theta=2.5 scale=1", "{-1: 0.5, 1: 0.5}", ...
//! seed = 0
//! output_dir = "out"
//! emit_plots = true
//!
//! [regime]
//! name = "ddev"                      # ddev | ldev_a | ldev_b | ldev_c(tau=..) | bottcher | bottcher_lattice | ldev1
//! n_range = [8, 14]
//! epsilon = { form = "power", c = 1.0, rho = 0.25, kappa = 0.0 }
//! k_truncation = 100000
//!
//! [tolerances]
//! final_relative = 0.25
//! trend_window = 3
//! all_in_bracket = false
//!
//! [budgets]
//! max_support = 16777216             # longest generation vector
//! max_lattice_len = 4194304          # longest increment-sum vector
//! max_fft_len = 16777216
//! draw_budget = 4000000000           # Monte Carlo draws
//! time_limit_secs = 600.0
//!
//! [exact_tail]
//! n = 10
//! epsilons = [0.1, 0.2]
//!
//! [montecarlo]
//! n = 4
//! epsilons = [0.1, 0.2]
//! replications = 100000
//! ci_level = 0.95
//! survival_conditioning = false
//! cross_check = true
//!
//! [limits]                           # grids of the limit report
//! tol = 1e-12
//! ```

use std::path::Path;

use gwdev::deviations::{default_epsilon, DecompositionOptions, DeviationExperiment, EpsilonFamily, Regime, Tolerances};
use gwdev::limits::LimitConfig;
use gwdev::montecarlo::McConfig;
use gwdev::offspring::LawSpec;
use gwdev::{EngineConfig, Error, IncrementLaw, IncrementSpec, OffspringLaw, Result, TailOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub law: String,
    pub increments: String,
    pub seed: u64,
    pub output_dir: String,
    pub emit_plots: bool,
    pub regime: RegimeSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<Tolerances>,
    pub budgets: Budgets,
    pub exact_tail: ExactTailSection,
    pub montecarlo: MonteCarloSection,
    pub limits: LimitConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<Regime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_range: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonFamily>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_truncation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub max_support: usize,
    pub max_lattice_len: usize,
    pub max_fft_len: usize,
    pub draw_budget: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_limit_secs: Option<f64>,
}

impl Default for Budgets {
    fn default() -> Self {
        let engine = EngineConfig::default();
        let tails = TailOptions::default();
        Self {
            max_support: engine.max_support,
            max_lattice_len: tails.max_lattice_len,
            max_fft_len: tails.max_fft_len,
            draw_budget: McConfig::default().draw_budget,
            time_limit_secs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactTailSection {
    pub n: usize,
    pub epsilons: Vec<f64>,
}

impl Default for ExactTailSection {
    fn default() -> Self {
        Self {
            n: 10,
            epsilons: vec![0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n: usize,
    pub epsilons: Vec<f64>,
    pub replications: u64,
    pub ci_level: f64,
    pub survival_conditioning: bool,
    /// Compare each estimate with the exact value.
    pub cross_check: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let mc = McConfig::default();
        Self {
            n: 4,
            epsilons: vec![0.1, 0.2],
            replications: mc.replications,
            ci_level: mc.ci_level,
            survival_conditioning: mc.survival_conditioning,
            cross_check: true,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            law: "linear_fractional m=2".into(),
            increments: "rademacher".into(),
            seed: 0,
            output_dir: "out".into(),
            emit_plots: true,
            regime: RegimeSection::default(),
            tolerances: None,
            budgets: Budgets::default(),
            exact_tail: ExactTailSection::default(),
            montecarlo: MonteCarloSection::default(),
            limits: LimitConfig::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Generations used by `verify` when the config gives none.
pub fn default_n_range(regime: Regime) -> (usize, usize) {
    match regime {
        Regime::Ddev => (8, 14),
        Regime::LdevB | Regime::Ldev1 => (10, 16),
        _ => (8, 12),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid("<file>", e.message()))?;
        if !table.contains_key("law") {
            return Err(invalid("law", "missing required field"));
        }
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn validate(&self) -> Result<()> {
        self.law_spec()?;
        self.increment_spec()?;
        if let Some((a, b)) = self.regime.n_range {
            if a > b {
                return Err(invalid("regime.n_range", format!("empty range [{a}, {b}]")));
            }
        }
        let mc = &self.montecarlo;
        if !(mc.ci_level > 0.0 && mc.ci_level < 1.0) {
            return Err(invalid("montecarlo.ci_level", format!("{} is outside (0, 1)", mc.ci_level)));
        }
        if let Some(t) = self.budgets.time_limit_secs {
            if !(t > 0.0) {
                return Err(invalid("budgets.time_limit_secs", format!("{t} is not positive")));
            }
        }
        Ok(())
    }

    pub fn law_spec(&self) -> Result<LawSpec> {
        self.law.parse().map_err(|e: Error| invalid("law", e.to_string()))
    }

    pub fn increment_spec(&self) -> Result<IncrementSpec> {
        self.increments.parse().map_err(|e: Error| invalid("increments", e.to_string()))
    }

    pub fn build_law(&self) -> Result<OffspringLaw> {
        self.law_spec()?.build()
    }

    pub fn build_increments(&self) -> Result<IncrementLaw> {
        self.increment_spec()?.build()
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            max_support: self.budgets.max_support,
            ..EngineConfig::default()
        }
    }

    pub fn tails(&self) -> TailOptions {
        TailOptions {
            max_lattice_len: self.budgets.max_lattice_len,
            max_fft_len: self.budgets.max_fft_len,
            ..TailOptions::default()
        }
    }

    pub fn decomposition(&self) -> DecompositionOptions {
        DecompositionOptions {
            engine: self.engine(),
            tails: self.tails(),
            k_budget: self.regime.k_truncation,
            ..DecompositionOptions::default()
        }
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            replications: self.montecarlo.replications,
            ci_level: self.montecarlo.ci_level,
            survival_conditioning: self.montecarlo.survival_conditioning,
            draw_budget: self.budgets.draw_budget,
        }
    }

    /// Canonical law and increment strings.
    pub fn canonicalize(&mut self) -> Result<()> {
        self.law = self.law_spec()?.to_string();
        self.increments = self.increment_spec()?.to_string();
        Ok(())
    }

    /// Fills every regime default for `regime` and returns the experiment.
    pub fn resolve_experiment(&mut self, regime: Regime) -> Result<DeviationExperiment> {
        self.canonicalize()?;
        if let Some(named) = self.regime.name {
            if named != regime && !same_family(named, regime) {
                return Err(invalid(
                    "regime.name",
                    format!("config names `{named}` but the command asks for `{regime}`"),
                ));
            }
        }
        let regime = match self.regime.name {
            Some(named) if same_family(named, regime) => named,
            _ => regime,
        };
        let law = self.build_law()?;
        let x = self.build_increments()?;
        let epsilon = match &self.regime.epsilon {
            Some(e) => e.clone(),
            None => default_epsilon(&law, &x, regime)?,
        };
        let n_range = self.regime.n_range.unwrap_or_else(|| default_n_range(regime));
        let tolerances = self.tolerances.unwrap_or_else(|| Tolerances::for_regime(regime));
        self.regime = RegimeSection {
            name: Some(regime),
            n_range: Some(n_range),
            epsilon: Some(epsilon.clone()),
            k_truncation: self.regime.k_truncation,
        };
        self.tolerances = Some(tolerances);
        Ok(DeviationExperiment {
            law,
            increments: x,
            n_range,
            epsilon,
            regime,
            k_truncation: self.regime.k_truncation,
            tolerances,
        })
    }
}

/// `verify ldev-c` accepts any configured τ, and `verify bottcher` the lattice variant.
fn same_family(a: Regime, b: Regime) -> bool {
    matches!(
        (a, b),
        (Regime::LdevC { .. }, Regime::LdevC { .. })
            | (Regime::Bottcher | Regime::BottcherLattice, Regime::Bottcher | Regime::BottcherLattice)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_law_names_the_field() {
        let err = ExperimentConfig::parse("seed = 3\n").unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "law"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_nested_field_reports_its_path() {
        let err = ExperimentConfig::parse("law = \"geometric p=0.3\"\n[regime]\nn_range = [8, \"x\"]\n").unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert!(field.starts_with("regime.n_range"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::parse("law = \"geometric p=0.3\"\n[budgets]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref field, .. } if field.starts_with("budgets")), "{err:?}");
    }

    #[test]
    fn unparsable_law_is_rejected() {
        let err = ExperimentConfig::parse("law = \"zeta s=2\"\n").unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref field, .. } if field == "law"), "{err:?}");
    }

    #[test]
    fn round_trip_is_identity() {
        let text = r#"
law = "{1: 0.2, 2: 0.8}"
increments = "pareto theta=2.5 scale=1"
seed = 17
[regime]
name = "ldev_c(tau=1.5)"
n_range = [9, 11]
epsilon = { form = "power", c = 0.5, rho = 0.3 }
k_truncation = 5000
[tolerances]
final_relative = 0.2
[montecarlo]
epsilons = [0.25]
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
    }

    #[test]
    fn resolution_materializes_defaults() {
        let mut cfg = ExperimentConfig::default();
        let exp = cfg.resolve_experiment(Regime::Ddev).unwrap();
        assert_eq!(exp.n_range, (8, 14));
        assert_eq!(cfg.regime.name, Some(Regime::Ddev));
        assert!(cfg.regime.epsilon.is_some() && cfg.tolerances.is_some());
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn conflicting_regime_is_rejected() {
        let mut cfg = ExperimentConfig::parse("law = \"geometric p=0.3\"\n[regime]\nname = \"bottcher\"\n").unwrap();
        assert!(matches!(cfg.resolve_experiment(Regime::Ddev), Err(Error::ConfigInvalid { .. })));
    }
}
