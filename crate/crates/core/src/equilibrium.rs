//! Equilibrium rates.
//!
//! * `r_min`: stable fixed point of `tau`, reached by iterating
//!   `r_k = tau(r_{k-1})` from the risk-free rate.
//! * `r_fix`: the next fixed point above it, where `tau` crosses the
//!   diagonal from below. Iteration is repelled from it, so it is bracketed
//!   on a grid and refined with [`brent`].
//! * `r_max`: grid argmax of the lender's expected return.
//!
//! Under common random numbers `tau` is a step function, so "root" here
//! means the location of a sign change of `tau(r) - r`.

use serde::{Deserialize, Serialize};

use crate::brent::{brent, BrentError};
use crate::error::{Error, Result};
use crate::pricing::{rate_grid, PdCurve, ReturnCurve};
use crate::scenario::{RunManifest, Scenario, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub fp_tolerance: f64,
    pub fp_max_iter: usize,
    pub bracket_grid: usize,
    pub root_tolerance: f64,
    /// Closed sub-interval of (0, 1) searched and plotted.
    pub rate_bounds: [f64; 2],
    pub curve_points: usize,
    pub debt_resolution: f64,
    pub debt_cap: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            fp_tolerance: 1e-4,
            fp_max_iter: 200,
            bracket_grid: 400,
            root_tolerance: 1e-5,
            rate_bounds: [0.001, 0.999],
            curve_points: 200,
            debt_resolution: 0.01,
            debt_cap: 1e6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("solver.fp_tolerance", self.fp_tolerance),
            ("solver.root_tolerance", self.root_tolerance),
            ("solver.debt_resolution", self.debt_resolution),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(name, "must be > 0"));
            }
        }
        let [lo, hi] = self.rate_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::config("solver.rate_bounds", "must satisfy 0 < lo < hi < 1"));
        }
        if self.fp_max_iter == 0 {
            return Err(Error::config("solver.fp_max_iter", "must be >= 1"));
        }
        if self.bracket_grid < 2 {
            return Err(Error::config("solver.bracket_grid", "must be >= 2"));
        }
        if self.curve_points < 2 {
            return Err(Error::config("solver.curve_points", "must be >= 2"));
        }
        if !(self.debt_cap > 0.0) {
            return Err(Error::config("solver.debt_cap", "must be > 0"));
        }
        Ok(())
    }

    pub fn curve_grid(&self) -> Vec<f64> {
        rate_grid(self.rate_bounds[0], self.rate_bounds[1], self.curve_points)
    }

    pub fn curve_step(&self) -> f64 {
        (self.rate_bounds[1] - self.rate_bounds[0]) / (self.curve_points - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IterationStatus {
    Converged,
    /// An iterate reached 1 or above (or `tau` was unpriceable).
    LeftInterval,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableOutcome {
    pub rate: Option<f64>,
    pub status: IterationStatus,
    pub iterations: usize,
    pub trajectory: Vec<f64>,
}

/// Fixed-point iteration `r_k = tau(r_{k-1})` from `start`.
pub fn solve_stable<F>(mut tau: F, start: f64, settings: &SolverSettings) -> Result<StableOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(0.0..1.0).contains(&start) {
        return Err(Error::InvalidRate(start));
    }
    let mut prev = start;
    let mut trajectory = vec![start];
    for k in 1..=settings.fp_max_iter {
        let r = tau(prev)?;
        trajectory.push(r);
        if !(0.0..1.0).contains(&r) {
            return Ok(StableOutcome { rate: None, status: IterationStatus::LeftInterval, iterations: k, trajectory });
        }
        if (r - prev).abs() < settings.fp_tolerance {
            return Ok(StableOutcome { rate: Some(r), status: IterationStatus::Converged, iterations: k, trajectory });
        }
        prev = r;
    }
    Ok(StableOutcome {
        rate: None,
        status: IterationStatus::IterationLimit,
        iterations: settings.fp_max_iter,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableRoot {
    pub rate: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

// Stand-in for an infinite tau; only its sign relative to r matters.
const TAU_CAP: f64 = 10.0;

/// First up-crossing of `tau(r) - r` at or above `lower`, refined by [`brent`].
///
/// A zero of `tau(r) - r` counts as below the diagonal, so starting at a
/// converged `r_min` also catches the tangent case where `tau` leaves the
/// diagonal upward right after it. Returns `None` when `tau` never rises
/// above the diagonal on the grid.
pub fn solve_unstable<F>(mut tau: F, lower: f64, settings: &SolverSettings) -> Result<Option<UnstableRoot>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let hi = settings.rate_bounds[1];
    if lower >= hi {
        return Ok(None);
    }
    let mut g = |r: f64| -> Result<f64> { Ok(tau(r)?.min(TAU_CAP) - r) };
    let grid = rate_grid(lower, hi, settings.bracket_grid);
    let mut prev = (grid[0], g(grid[0])?);
    let mut evaluations = 1;
    for &r in &grid[1..] {
        let cur = (r, g(r)?);
        evaluations += 1;
        if prev.1 <= 0.0 && cur.1 > 0.0 {
            let mut failure = None;
            let found = brent(
                |x| match g(x) {
                    Ok(v) if v > 0.0 => v,
                    Ok(v) => v.min(-f64::MIN_POSITIVE),
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                },
                prev.0,
                cur.0,
                settings.root_tolerance,
                200,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            return match found {
                Ok(root) => Ok(Some(UnstableRoot {
                    rate: root.x,
                    bracket: root.bracket,
                    evaluations: evaluations + root.evaluations,
                })),
                Err(BrentError::NoSignChange) => Err(Error::Internal("bracket lost its sign change".into())),
                Err(BrentError::IterationLimit) => Err(Error::Internal("root finder did not converge".into())),
            };
        }
        prev = cur;
    }
    Ok(None)
}

/// Grid argmax of `values`, ties broken toward the smaller rate.
pub fn solve_rmax(rates: &[f64], values: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&r, &v) in rates.iter().zip(values) {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((r, v));
        }
    }
    best.map(|(r, _)| r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Sustainable,
    NoEquilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub r: Vec<f64>,
    pub pd: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    pub rbar: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
}

impl Curves {
    pub fn from_parts(pd: PdCurve, ret: ReturnCurve) -> Self {
        Self { r: pd.rates, pd: pd.pd, tau: pd.tau, rbar: ret.rbar, n: pd.n, alpha: ret.alpha }
    }

    pub fn pd_curve(&self) -> PdCurve {
        PdCurve { rates: self.r.clone(), pd: self.pd.clone(), tau: self.tau.clone(), n: self.n }
    }

    pub fn return_curve(&self) -> ReturnCurve {
        ReturnCurve { rates: self.r.clone(), rbar: self.rbar.clone(), alpha: self.alpha }
    }

    pub fn to_csv(&self) -> String {
        crate::pricing::curves_to_csv(&self.pd_curve(), &self.return_curve())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fixed_point: StableOutcome,
    pub unstable: Option<UnstableRoot>,
    /// Central difference of `tau` over one curve-grid step.
    pub tau_slope_at_r_min: Option<f64>,
    pub tau_slope_at_r_fix: Option<f64>,
    /// Curve points where `tau` is outside (0, 1) or unpriceable.
    pub tau_out_of_range: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub verdict: Verdict,
    pub r_min: Option<f64>,
    pub r_fix: Option<f64>,
    pub r_max: f64,
    pub pd_at_r_min: Option<f64>,
    pub negotiation_range: Option<[f64; 2]>,
    pub diagnostics: Diagnostics,
    pub curves: Curves,
    pub manifest: RunManifest,
}

fn slope<F: FnMut(f64) -> Result<f64>>(mut tau: F, r: f64, h: f64) -> Result<f64> {
    let lo = (r - h).max(0.0);
    let hi = (r + h).min(1.0 - f64::EPSILON);
    Ok((tau(hi)?.min(TAU_CAP) - tau(lo)?.min(TAU_CAP)) / (hi - lo))
}

/// Solves one scenario: curves, `r_min`, `r_fix` and `r_max`.
pub fn solve_scenario(scenario: &Scenario) -> Result<EquilibriumReport> {
    let cfg = &scenario.config;
    let settings = &cfg.solver;
    let ev = scenario.evaluator();
    let tau = |r: f64| ev.tau_or_inf(r);

    let (pd_curve, ret_curve) = ev.curves(&settings.curve_grid())?;
    let tau_out_of_range = pd_curve.tau_out_of_range();
    let r_max = solve_rmax(&ret_curve.rates, &ret_curve.rbar).expect("non-empty grid");

    let stable = solve_stable(tau, cfg.policy.r_f, settings)?;
    let r_min = stable.rate;
    let unstable = match r_min {
        Some(r) => solve_unstable(tau, r, settings)?,
        None => None,
    };
    let r_fix = unstable.as_ref().map(|u| u.rate);
    let h = settings.curve_step();
    let tau_slope_at_r_min = r_min.map(|r| slope(tau, r, h)).transpose()?;
    let tau_slope_at_r_fix = r_fix.map(|r| slope(tau, r, h)).transpose()?;
    let pd_at_r_min = r_min.map(|r| ev.pd(r)).transpose()?;

    Ok(EquilibriumReport {
        verdict: if r_min.is_some() { Verdict::Sustainable } else { Verdict::NoEquilibrium },
        r_min,
        r_fix,
        r_max,
        pd_at_r_min,
        negotiation_range: r_min.map(|lo| [lo, r_max]),
        diagnostics: Diagnostics {
            fixed_point: stable,
            unstable,
            tau_slope_at_r_min,
            tau_slope_at_r_fix,
            tau_out_of_range,
        },
        curves: Curves::from_parts(pd_curve, ret_curve),
        manifest: RunManifest::new("solve", cfg),
    })
}

/// Whether `r_min` exists for this scenario, and its value.
fn stable_rate(scenario: &Scenario) -> Result<Option<f64>> {
    let ev = scenario.evaluator();
    let cfg = &scenario.config;
    Ok(solve_stable(|r| ev.tau_or_inf(r), cfg.policy.r_f, &cfg.solver)?.rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DebtSearchStatus {
    /// Boundary found between a sustainable and an unsustainable debt.
    Bounded,
    /// Still sustainable at `solver.debt_cap`.
    CapReached,
    /// No equilibrium even at the configured `d_s0`.
    BaseUnsustainable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebtProbe {
    pub d_s0: f64,
    pub r_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebtSearch {
    pub status: DebtSearchStatus,
    /// Largest initial STNFP found sustainable.
    pub debt: Option<f64>,
    /// Smallest initial STNFP found unsustainable.
    pub unsustainable_debt: Option<f64>,
    /// `r_min` at `debt`, the near-tangency rate.
    pub tangency_rate: Option<f64>,
    /// `r_fix` at `debt`; close to `tangency_rate` near the boundary.
    pub r_fix_at_boundary: Option<f64>,
    pub probes: Vec<DebtProbe>,
    pub manifest: RunManifest,
}

/// Largest initial STNFP for which an equilibrium rate exists.
///
/// Doubles from the configured `d_s0` until the scenario loses its
/// equilibrium (or the cap is reached), then bisects to
/// `solver.debt_resolution`. Every probe reuses the scenario's paths.
pub fn max_sustainable_debt(scenario: &Scenario) -> Result<DebtSearch> {
    let cfg = &scenario.config;
    let settings = &cfg.solver;
    let mut probes = Vec::new();
    let mut probe = |d: f64| -> Result<Option<f64>> {
        let s = scenario.rebase(&cfg.with_d_s0(d))?;
        let r = stable_rate(&s)?;
        probes.push(DebtProbe { d_s0: d, r_min: r });
        Ok(r)
    };

    let base = cfg.debt.d_s0;
    let finish = |status, debt: Option<f64>, bad: Option<f64>, rate: Option<f64>, probes| -> Result<DebtSearch> {
        let r_fix_at_boundary = match (debt, rate) {
            (Some(d), Some(r)) => {
                let s = scenario.rebase(&cfg.with_d_s0(d))?;
                let ev = s.evaluator();
                solve_unstable(|x| ev.tau_or_inf(x), r, settings)?.map(|u| u.rate)
            }
            _ => None,
        };
        Ok(DebtSearch {
            status,
            debt,
            unsustainable_debt: bad,
            tangency_rate: rate,
            r_fix_at_boundary,
            probes,
            manifest: RunManifest::new("maxdebt", cfg),
        })
    };

    let Some(mut lo_rate) = probe(base)? else {
        return finish(DebtSearchStatus::BaseUnsustainable, None, Some(base), None, probes);
    };
    let mut lo = base;
    let mut hi = base;
    loop {
        if lo >= settings.debt_cap {
            return finish(DebtSearchStatus::CapReached, Some(lo), None, Some(lo_rate), probes);
        }
        hi = (hi * 2.0).min(settings.debt_cap);
        match probe(hi)? {
            Some(r) => {
                lo = hi;
                lo_rate = r;
            }
            None => break,
        }
    }
    while hi - lo > settings.debt_resolution {
        let mid = 0.5 * (lo + hi);
        match probe(mid)? {
            Some(r) => {
                lo = mid;
                lo_rate = r;
            }
            None => hi = mid,
        }
    }
    finish(DebtSearchStatus::Bounded, Some(lo), Some(hi), Some(lo_rate), probes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub r_min: Option<f64>,
    pub r_fix: Option<f64>,
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub base: EquilibriumReport,
    pub variant: EquilibriumReport,
    /// `variant - base`; absent when either side lacks the rate.
    pub delta: Deltas,
    pub manifest: RunManifest,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Solves both scenarios on common random numbers and reports the shifts.
pub fn restructure_compare(base: &Scenario, variant: &Scenario) -> Result<Comparison> {
    if base.config.sim.seed != variant.config.sim.seed {
        return Err(Error::config("variant.sim.seed", "must equal the base seed"));
    }
    let b = solve_scenario(base)?;
    let v = solve_scenario(variant)?;
    let manifest = RunManifest::new("compare", &base.config).with_variant(&variant.config);
    let delta = Deltas { r_min: diff(b.r_min, v.r_min), r_fix: diff(b.r_fix, v.r_fix), r_max: v.r_max - b.r_max };
    Ok(Comparison { base: b, variant: v, delta, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub missing: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub iqr: Option<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = values.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        let missing = values.len() - v.len();
        if v.is_empty() {
            return Self { count: 0, missing, min: None, q1: None, median: None, q3: None, max: None, iqr: None };
        }
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        Self {
            count: v.len(),
            missing,
            min: v.first().copied(),
            q1: Some(q1),
            median: Some(quantile(&v, 0.5)),
            q3: Some(q3),
            max: v.last().copied(),
            iqr: Some(q3 - q1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub seeds: Vec<u64>,
    pub r_min: Vec<Option<f64>>,
    pub r_fix: Vec<Option<f64>>,
    pub r_max: Vec<f64>,
    pub r_min_summary: Summary,
    pub r_fix_summary: Summary,
    pub r_max_summary: Summary,
    pub manifest: RunManifest,
}

/// Repeats the full solve for each seed.
pub fn estimator_spread(config: &ScenarioConfig, seeds: &[u64]) -> Result<SpreadReport> {
    let mut r_min = Vec::with_capacity(seeds.len());
    let mut r_fix = Vec::with_capacity(seeds.len());
    let mut r_max = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let rep = solve_scenario(&Scenario::prepare(&config.with_seed(seed))?)?;
        r_min.push(rep.r_min);
        r_fix.push(rep.r_fix);
        r_max.push(rep.r_max);
    }
    let r_max_opt: Vec<Option<f64>> = r_max.iter().copied().map(Some).collect();
    Ok(SpreadReport {
        seeds: seeds.to_vec(),
        r_min_summary: Summary::of(&r_min),
        r_fix_summary: Summary::of(&r_fix),
        r_max_summary: Summary::of(&r_max_opt),
        r_min,
        r_fix,
        r_max,
        manifest: RunManifest::new("spread", config).with_seeds(seeds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn constant_map_converges_in_one_step() {
        let out = solve_stable(|_| Ok(0.01), 0.3, &settings()).unwrap();
        assert_eq!(out.rate, Some(0.01));
        assert_eq!(out.status, IterationStatus::Converged);
        // one move to 0.01, one more to confirm
        assert!(out.iterations <= 2);
    }

    #[test]
    fn affine_contraction() {
        let out = solve_stable(|r| Ok(0.5 + 0.9 * (r - 0.5)), 0.01, &settings()).unwrap();
        let r = out.rate.unwrap();
        // |r_k - r*| = |r_k - r_{k-1}| * 0.9 / 0.1 < 1e-3 at exit
        assert!((r - 0.5).abs() < 1e-3, "{r}");
    }

    #[test]
    fn expanding_map_leaves_interval() {
        let out = solve_stable(|r| Ok(2.0 * r + 0.1), 0.01, &settings()).unwrap();
        assert_eq!(out.rate, None);
        assert_eq!(out.status, IterationStatus::LeftInterval);
    }

    #[test]
    fn slow_map_hits_iteration_limit() {
        let s = SolverSettings { fp_max_iter: 3, ..settings() };
        let out = solve_stable(|r| Ok(r + 0.01), 0.01, &s).unwrap();
        assert_eq!(out.status, IterationStatus::IterationLimit);
    }

    #[test]
    fn start_outside_interval() {
        assert!(solve_stable(|r| Ok(r), 1.0, &settings()).is_err());
    }

    #[test]
    fn quadratic_tau_unstable_root() {
        // tau(r) = r^2 + 0.2 crosses the diagonal upward at (1 + sqrt(0.2)) / 2
        let expected = (1.0 + 0.2f64.sqrt()) / 2.0;
        let lower = (1.0 - 0.2f64.sqrt()) / 2.0 + 1e-4;
        let root = solve_unstable(|r| Ok(r * r + 0.2), lower, &settings()).unwrap().unwrap();
        assert!((root.rate - expected).abs() < 1e-5);
    }

    #[test]
    fn tangent_touch_merges_roots() {
        let tau = |r: f64| Ok(if r <= 0.2 { 0.2 } else { 2.0 * r - 0.2 });
        let out = solve_stable(tau, 0.01, &settings()).unwrap();
        assert_eq!(out.rate, Some(0.2));
        let root = solve_unstable(tau, 0.2, &settings()).unwrap().unwrap();
        assert!((root.rate - 0.2).abs() < 1e-5, "{}", root.rate);
    }

    #[test]
    fn no_up_crossing_is_absent() {
        let root = solve_unstable(|r| Ok(0.3 * r + 0.01), 0.02, &settings()).unwrap();
        assert!(root.is_none());
    }

    #[test]
    fn infinite_tau_counts_as_above() {
        let root = solve_unstable(|r| Ok(if r > 0.7 { f64::INFINITY } else { 0.05 }), 0.06, &settings())
            .unwrap()
            .unwrap();
        assert!((root.rate - 0.7).abs() < 1e-4);
    }

    #[test]
    fn rmax_on_parabola() {
        let g = rate_grid(0.001, 0.999, 200);
        let peak = 0.3333;
        let v: Vec<f64> = g.iter().map(|r| -(r - peak) * (r - peak)).collect();
        let r = solve_rmax(&g, &v).unwrap();
        assert!((r - peak).abs() <= 0.998 / 199.0);
    }

    #[test]
    fn rmax_ties_go_low() {
        let g = rate_grid(0.001, 0.999, 200);
        assert_eq!(solve_rmax(&g, &vec![1.0; 200]), Some(0.001));
    }

    #[test]
    fn summary_quartiles() {
        let s = Summary::of(&[Some(1.0), Some(2.0), None, Some(3.0), Some(4.0), Some(5.0)]);
        assert_eq!(s.count, 5);
        assert_eq!(s.missing, 1);
        assert_eq!(s.median, Some(3.0));
        assert_eq!(s.q1, Some(2.0));
        assert_eq!(s.q3, Some(4.0));
        assert_eq!(s.iqr, Some(2.0));
    }

    #[test]
    fn settings_validation() {
        let bad = SolverSettings { rate_bounds: [0.0, 0.5], ..settings() };
        assert!(bad.validate().is_err());
        let bad = SolverSettings { fp_tolerance: 0.0, ..settings() };
        assert!(bad.validate().is_err());
    }
}
