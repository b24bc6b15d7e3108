//! Scenario configuration, presets and run manifests.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equilibrium::SolverSettings;
use crate::error::{Error, Result};
use crate::fcf::{build_ensemble, FcfPlan, PathEnsemble};
use crate::pricing::{Evaluator, RatePolicy};
use crate::treasury::{DebtProfile, DebtSchedule, DefaultMode, PayoffRule, RunRules};

/// Periods scanned past the steady state when no horizon is given.
pub const DEFAULT_SCAN_PERIODS: usize = 50;
pub const DEFAULT_ALPHA: f64 = 1.01;

/// How the `variance` column of a noise spec is read. Recorded in every
/// manifest.
pub const NOISE_INTERPRETATION: &str = "variance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub n: usize,
    pub seed: u64,
    /// Last simulated period; defaults to `t_ss + 50`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub default_mode: DefaultMode,
    #[serde(default)]
    pub payoff_rule: PayoffRule,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plan: FcfPlan,
    pub debt: DebtSchedule,
    pub policy: RatePolicy,
    pub sim: SimSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl ScenarioConfig {
    pub fn horizon(&self) -> usize {
        self.sim.horizon.unwrap_or(self.plan.t_ss + DEFAULT_SCAN_PERIODS)
    }

    pub fn rules(&self) -> RunRules {
        RunRules {
            t_ss: self.plan.t_ss,
            horizon: self.horizon(),
            mode: self.sim.default_mode,
            payoff: self.sim.payoff_rule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.debt.validate()?;
        self.policy.validate()?;
        self.solver.validate()?;
        if self.sim.n == 0 {
            return Err(Error::config("sim.n", "must be >= 1"));
        }
        if self.horizon() <= self.plan.t_ss {
            return Err(Error::config("sim.horizon", format!("must be > t_ss ({})", self.plan.t_ss)));
        }
        if !(self.alpha > 1.0) {
            return Err(Error::config("alpha", format!("must be > 1, got {}", self.alpha)));
        }
        // surfaces loans running past the horizon
        self.debt.profile(self.horizon())?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("body", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }

    /// Key identifying the ensemble this config draws.
    pub fn ensemble_key(&self) -> EnsembleKey {
        let plan = serde_json::to_vec(&self.plan).expect("plan serialises");
        EnsembleKey {
            plan_hash: hex::encode(Sha256::digest(plan)),
            n: self.sim.n,
            horizon: self.horizon(),
            seed: self.sim.seed,
        }
    }

    pub fn with_maturity(&self, years: usize) -> Self {
        Self { debt: self.debt.with_maturity(years), ..self.clone() }
    }

    pub fn with_lgd(&self, lgd: f64) -> Self {
        Self { policy: RatePolicy { lgd, ..self.policy }, ..self.clone() }
    }

    pub fn with_d_s0(&self, d_s0: f64) -> Self {
        Self { debt: self.debt.with_d_s0(d_s0), ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.sim.seed = seed;
        c
    }

    pub fn with_samples(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.sim.n = n;
        c
    }

    pub fn with_mode(&self, mode: DefaultMode) -> Self {
        let mut c = self.clone();
        c.sim.default_mode = mode;
        c
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    // toml reports e.g. "unknown field `foo`" without a path; keep the message
    // and use the span-free fallback name.
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    "config".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleKey {
    pub plan_hash: String,
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// A validated scenario with its ensemble and debt profile resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ensemble: Arc<PathEnsemble>,
    pub debt: DebtProfile,
}

impl Scenario {
    pub fn prepare(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let ensemble = build_ensemble(&config.plan, config.sim.n, config.horizon(), config.sim.seed)?;
        Self::with_ensemble(config, Arc::new(ensemble))
    }

    /// Reuses an existing ensemble; it must match the config's ensemble key.
    pub fn with_ensemble(config: &ScenarioConfig, ensemble: Arc<PathEnsemble>) -> Result<Self> {
        config.validate()?;
        if ensemble.n() != config.sim.n
            || ensemble.horizon() != config.horizon()
            || ensemble.seed() != config.sim.seed
            || ensemble.t_ss() != config.plan.t_ss
        {
            return Err(Error::Internal("ensemble does not match scenario".into()));
        }
        let debt = config.debt.profile(config.horizon())?;
        Ok(Self { config: config.clone(), ensemble, debt })
    }

    /// Same paths, different debt or policy.
    pub fn rebase(&self, config: &ScenarioConfig) -> Result<Self> {
        if config.ensemble_key() != self.config.ensemble_key() {
            return Self::prepare(config);
        }
        Self::with_ensemble(config, self.ensemble.clone())
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(&self.ensemble, &self.debt, self.config.rules(), self.config.policy, self.config.alpha)
            .expect("validated scenario")
    }
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub n: usize,
    pub horizon: usize,
    pub default_mode: DefaultMode,
    pub payoff_rule: PayoffRule,
    pub noise_interpretation: String,
    pub config_hash: String,
    pub config: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ScenarioConfig>,
    /// Seeds of a multi-seed run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ScenarioConfig) -> Self {
        Self {
            engine: "eqcredit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.sim.seed,
            n: config.sim.n,
            horizon: config.horizon(),
            default_mode: config.sim.default_mode,
            payoff_rule: config.sim.payoff_rule,
            noise_interpretation: NOISE_INTERPRETATION.into(),
            config_hash: config.hash(),
            config: config.clone(),
            variant: None,
            seeds: None,
        }
    }

    pub fn with_variant(mut self, variant: &ScenarioConfig) -> Self {
        self.variant = Some(variant.clone());
        self
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = Some(seeds.to_vec());
        self
    }
}

pub mod presets {
    //! Case A (baseline), Case B (variances halved), Case C (biases halved).

    use super::*;
    use crate::fcf::NoiseSpec;
    use crate::treasury::TermLoan;

    pub const NAMES: [&str; 3] = ["case-a", "case-b", "case-c"];

    pub fn by_name(name: &str) -> Option<ScenarioConfig> {
        match name {
            "case-a" => Some(case_a()),
            "case-b" => Some(case_b()),
            "case-c" => Some(case_c()),
            _ => None,
        }
    }

    pub fn case_a() -> ScenarioConfig {
        ScenarioConfig {
            plan: FcfPlan {
                rev0: 3000.0,
                x_rev: 0.10,
                x_var: 0.30,
                fixed_cost_base: 400.0,
                x_tax: 0.30,
                x_wc: 0.01,
                capex_base: 40.0,
                noise_rev: NoiseSpec::new(-0.10, 0.10),
                noise_var: NoiseSpec::new(0.05, 0.02),
                noise_fix: NoiseSpec::new(0.05, 0.01),
                noise_cap: NoiseSpec::new(0.05, 0.01),
                t_ss: 5,
            },
            debt: DebtSchedule {
                d_s0: 2000.0,
                loans: vec![TermLoan { amount: 1000.0, issue_t: 1, first_repay_t: 2, n_installments: 10 }],
            },
            policy: RatePolicy { r_f: 0.01, lgd: 0.6 },
            sim: SimSettings {
                n: 2500,
                seed: 42,
                horizon: None,
                default_mode: DefaultMode::LiteralScan,
                payoff_rule: PayoffRule::NetDebt,
            },
            solver: SolverSettings::default(),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn case_b() -> ScenarioConfig {
        let mut c = case_a();
        c.plan.noise_rev = NoiseSpec::new(-0.10, 0.05);
        c.plan.noise_var = NoiseSpec::new(0.05, 0.01);
        c.plan.noise_fix = NoiseSpec::new(0.05, 0.005);
        c.plan.noise_cap = NoiseSpec::new(0.05, 0.005);
        c
    }

    pub fn case_c() -> ScenarioConfig {
        let mut c = case_a();
        c.plan.noise_rev = NoiseSpec::new(-0.05, 0.10);
        c.plan.noise_var = NoiseSpec::new(0.025, 0.02);
        c.plan.noise_fix = NoiseSpec::new(0.025, 0.01);
        c.plan.noise_cap = NoiseSpec::new(0.025, 0.01);
        c
    }
}
