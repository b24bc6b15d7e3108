//! Free cash flow simulation.
//!
//! A plan gives planned growth and cost ratios; the analyst overlays a
//! Gaussian revision `eps ~ N(mean, variance)` on revenue growth, the
//! variable cost ratio, fixed costs and capex. Each period
//!
//! ```text
//! Rev_t  = Rev_{t-1} (1 + x_rev + eps_rev)
//! Cvar_t = Rev_t (x_var - eps_var)
//! Cfix_t = fixed_cost_base (1 + eps_fix)
//! Tax_t  = max(0, (Rev_t - Cvar_t - Cfix_t) x_tax)
//! Cwc_t  = x_wc Rev_t
//! Cap_t  = capex_base (1 + eps_cap)
//! F_t    = Rev_t - Cvar_t - Cfix_t - Tax_t + Cwc_t - Cap_t
//! ```
//!
//! Noise is drawn for `t = 1..=t_ss`; from `t_ss` on the flow is frozen at
//! its `t_ss` value. Revenue is not floored, so extreme draws can give
//! negative flows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::fmt_num;
use crate::error::{Error, Result};

/// Per-period analyst revision `N(mean, variance)`.
///
/// `variance` is a variance, not a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub mean: f64,
    pub variance: f64,
}

impl NoiseSpec {
    pub const fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Maps a standard normal draw onto this distribution.
    #[inline]
    pub fn shock(&self, z: f64) -> f64 {
        self.mean + self.variance.sqrt() * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcfPlan {
    pub rev0: f64,
    pub x_rev: f64,
    pub x_var: f64,
    pub fixed_cost_base: f64,
    pub x_tax: f64,
    pub x_wc: f64,
    pub capex_base: f64,
    pub noise_rev: NoiseSpec,
    pub noise_var: NoiseSpec,
    pub noise_fix: NoiseSpec,
    pub noise_cap: NoiseSpec,
    pub t_ss: usize,
}

impl FcfPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.rev0 > 0.0) {
            return Err(Error::config("plan.rev0", "must be > 0"));
        }
        for (name, v) in [("plan.x_var", self.x_var), ("plan.x_tax", self.x_tax), ("plan.x_wc", self.x_wc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        for (name, n) in self.noises() {
            if !n.mean.is_finite() {
                return Err(Error::config(format!("plan.{name}.mean"), "must be finite"));
            }
            if !(n.variance >= 0.0) || !n.variance.is_finite() {
                return Err(Error::config(
                    format!("plan.{name}.variance"),
                    format!("must be >= 0, got {}", n.variance),
                ));
            }
        }
        for (name, v) in [
            ("plan.x_rev", self.x_rev),
            ("plan.fixed_cost_base", self.fixed_cost_base),
            ("plan.capex_base", self.capex_base),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if self.t_ss < 1 {
            return Err(Error::config("plan.t_ss", "must be >= 1"));
        }
        Ok(())
    }

    fn noises(&self) -> [(&'static str, NoiseSpec); 4] {
        [
            ("noise_rev", self.noise_rev),
            ("noise_var", self.noise_var),
            ("noise_fix", self.noise_fix),
            ("noise_cap", self.noise_cap),
        ]
    }

    /// Same plan with every noise variance multiplied by `factor`.
    pub fn with_variance_scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        for n in [&mut p.noise_rev, &mut p.noise_var, &mut p.noise_fix, &mut p.noise_cap] {
            n.variance *= factor;
        }
        p
    }

    /// Same plan with every noise mean multiplied by `factor`.
    pub fn with_bias_scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        for n in [&mut p.noise_rev, &mut p.noise_var, &mut p.noise_fix, &mut p.noise_cap] {
            n.mean *= factor;
        }
        p
    }
}

/// One realisation `F_1..F_horizon`, constant from `t_ss` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcfPath {
    f: Vec<f64>,
    t_ss: usize,
}

impl FcfPath {
    /// Builds a path from explicit values `F_1..F_horizon`.
    ///
    /// Fails unless the values are constant from `t_ss` on.
    pub fn from_values(f: Vec<f64>, t_ss: usize) -> Result<Self> {
        if t_ss < 1 || t_ss > f.len() {
            return Err(Error::config("t_ss", format!("must lie in 1..={}", f.len())));
        }
        let steady = f[t_ss - 1];
        if f[t_ss..].iter().any(|&x| x != steady) {
            return Err(Error::config("fcf", "values must be constant for t >= t_ss"));
        }
        Ok(Self { f, t_ss })
    }

    /// `F_t` for `1 <= t <= horizon`.
    #[inline]
    pub fn at(&self, t: usize) -> f64 {
        self.f[t - 1]
    }

    pub fn steady_value(&self) -> f64 {
        self.f[self.t_ss - 1]
    }

    pub fn t_ss(&self) -> usize {
        self.t_ss
    }

    pub fn horizon(&self) -> usize {
        self.f.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    /// Multiplies every period's flow by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            f: self.f.iter().map(|x| x * factor).collect(),
            t_ss: self.t_ss,
        }
    }
}

/// Components of one simulated period, exposed for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcfComponents {
    pub rev: f64,
    pub c_var: f64,
    pub c_fix: f64,
    pub tax: f64,
    pub c_wc: f64,
    pub capex: f64,
}

impl FcfComponents {
    pub fn fcf(&self) -> f64 {
        self.rev - self.c_var - self.c_fix - self.tax + self.c_wc - self.capex
    }
}

fn step(plan: &FcfPlan, prev_rev: f64, eps: [f64; 4]) -> FcfComponents {
    let [e_rev, e_var, e_fix, e_cap] = eps;
    let rev = prev_rev * (1.0 + plan.x_rev + e_rev);
    let c_var = rev * (plan.x_var - e_var);
    let c_fix = plan.fixed_cost_base * (1.0 + e_fix);
    let tax = ((rev - c_var - c_fix) * plan.x_tax).max(0.0);
    let c_wc = plan.x_wc * rev;
    let capex = plan.capex_base * (1.0 + e_cap);
    FcfComponents { rev, c_var, c_fix, tax, c_wc, capex }
}

/// Runs the component recursion for `t = 1..=t_ss`, pulling four standard
/// normal draws per period from `draw` in the order rev, var, fix, cap.
pub fn simulate_components(plan: &FcfPlan, mut draw: impl FnMut() -> f64) -> Vec<FcfComponents> {
    let mut rev = plan.rev0;
    (1..=plan.t_ss)
        .map(|_| {
            let eps = [
                plan.noise_rev.shock(draw()),
                plan.noise_var.shock(draw()),
                plan.noise_fix.shock(draw()),
                plan.noise_cap.shock(draw()),
            ];
            let c = step(plan, rev, eps);
            rev = c.rev;
            c
        })
        .collect()
}

fn assemble(plan: &FcfPlan, horizon: usize, comps: &[FcfComponents]) -> FcfPath {
    let mut f: Vec<f64> = comps.iter().map(FcfComponents::fcf).collect();
    let steady = *f.last().expect("t_ss >= 1");
    f.resize(horizon, steady);
    FcfPath { f, t_ss: plan.t_ss }
}

fn check_horizon(plan: &FcfPlan, horizon: usize) -> Result<()> {
    if horizon < plan.t_ss {
        return Err(Error::config(
            "sim.horizon",
            format!("must be >= t_ss ({}), got {horizon}", plan.t_ss),
        ));
    }
    Ok(())
}

/// Samples one FCF path from `rng`.
pub fn sample_fcf_path<R: Rng + ?Sized>(plan: &FcfPlan, horizon: usize, rng: &mut R) -> Result<FcfPath> {
    plan.validate()?;
    check_horizon(plan, horizon)?;
    let comps = simulate_components(plan, || rng.sample::<f64, _>(StandardNormal));
    Ok(assemble(plan, horizon, &comps))
}

/// The path with every revision fixed at its mean.
pub fn mean_path(plan: &FcfPlan, horizon: usize) -> Result<FcfPath> {
    plan.validate()?;
    check_horizon(plan, horizon)?;
    let comps = simulate_components(plan, || 0.0);
    Ok(assemble(plan, horizon, &comps))
}

/// Random stream for path `index` of an ensemble seeded with `seed`.
///
/// Streams are independent of each other and of evaluation order.
pub fn path_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` FCF paths sharing one seed: the common random numbers reused for
/// every rate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    paths: Vec<FcfPath>,
    seed: u64,
    horizon: usize,
    t_ss: usize,
}

impl PathEnsemble {
    pub fn from_paths(paths: Vec<FcfPath>, seed: u64) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::config("sim.n", "must be >= 1"))?;
        let (horizon, t_ss) = (first.horizon(), first.t_ss());
        if paths.iter().any(|p| p.horizon() != horizon || p.t_ss() != t_ss) {
            return Err(Error::config("paths", "all paths must share horizon and t_ss"));
        }
        Ok(Self { paths, seed, horizon, t_ss })
    }

    pub fn paths(&self) -> &[FcfPath] {
        &self.paths
    }

    pub fn n(&self) -> usize {
        self.paths.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn t_ss(&self) -> usize {
        self.t_ss
    }

    /// Mean of `F_t` across paths.
    pub fn mean_at(&self, t: usize) -> f64 {
        self.paths.iter().map(|p| p.at(t)).sum::<f64>() / self.n() as f64
    }

    /// One row per path, columns `t1..t{horizon}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path");
        for t in 1..=self.horizon {
            out.push_str(&format!(",t{t}"));
        }
        out.push('\n');
        for (i, p) in self.paths.iter().enumerate() {
            out.push_str(&i.to_string());
            for &v in p.values() {
                out.push(',');
                out.push_str(&fmt_num(v));
            }
            out.push('\n');
        }
        out
    }
}

/// Generates `n` paths, path `i` drawn from [`path_stream`]`(seed, i)`.
pub fn build_ensemble(plan: &FcfPlan, n: usize, horizon: usize, seed: u64) -> Result<PathEnsemble> {
    if n == 0 {
        return Err(Error::config("sim.n", "must be >= 1"));
    }
    plan.validate()?;
    check_horizon(plan, horizon)?;
    let paths = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(seed, i);
            let comps = simulate_components(plan, || rng.sample::<f64, _>(StandardNormal));
            assemble(plan, horizon, &comps)
        })
        .collect();
    Ok(PathEnsemble { paths, seed, horizon, t_ss: plan.t_ss })
}
