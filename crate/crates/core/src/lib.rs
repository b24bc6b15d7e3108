//! Equilibrium pricing of corporate credit under analyst-revised cash flow
//! plans.
//!
//! [`fcf`] simulates free cash flow paths, [`treasury`] evolves the short term
//! net financial position under a debt schedule and rate, [`pricing`]
//! estimates `PD(r)` and the lender's return, and [`equilibrium`] finds the
//! rates where the lender's required rate `tau(r)` equals `r`.

pub mod brent;
pub mod csv;
pub mod equilibrium;
pub mod error;
pub mod fcf;
pub mod pricing;
pub mod scenario;
pub mod treasury;

pub use equilibrium::{
    estimator_spread, max_sustainable_debt, restructure_compare, solve_scenario, Comparison, DebtSearch,
    EquilibriumReport, SolverSettings, SpreadReport, Verdict,
};
pub use error::{Error, Result};
pub use fcf::{build_ensemble, FcfPath, FcfPlan, NoiseSpec, PathEnsemble};
pub use pricing::{rate_from_pd, Evaluator, RatePolicy};
pub use scenario::{presets, RunManifest, Scenario, ScenarioConfig};
pub use treasury::{DebtSchedule, DefaultMode, PayoffRule, TermLoan};
