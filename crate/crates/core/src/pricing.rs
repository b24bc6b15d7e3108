//! Rate policy, Monte Carlo PD and lender profitability.
//!
//! The lender prices a default probability `p` as
//!
//! ```text
//! r(p) = (r_f + p LGD) / (1 - p LGD)
//! ```
//!
//! and `tau(r) = r(PD(r))` is the rate it would ask once it sees the PD that
//! rate `r` induces. PD is the share of ensemble paths that default, so every
//! rate is evaluated on the same paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::write_table;
use crate::error::{Error, Result};
use crate::fcf::PathEnsemble;
use crate::treasury::{check_rate, run_path, DebtProfile, Outcome, Period, Recorder, RunRules, TreasuryPath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePolicy {
    pub r_f: f64,
    pub lgd: f64,
}

impl RatePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.r_f) {
            return Err(Error::config("policy.r_f", format!("must lie in [0, 1), got {}", self.r_f)));
        }
        if !(self.lgd > 0.0 && self.lgd <= 1.0) {
            return Err(Error::config("policy.lgd", format!("must lie in (0, 1], got {}", self.lgd)));
        }
        Ok(())
    }
}

/// Rate the lender requires for default probability `p`.
pub fn rate_from_pd(p: f64, policy: &RatePolicy) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config("p", format!("probability must lie in [0, 1], got {p}")));
    }
    let loss = p * policy.lgd;
    if loss >= 1.0 {
        return Err(Error::Unpriceable { p, lgd: policy.lgd });
    }
    Ok((policy.r_f + loss) / (1.0 - loss))
}

/// Evaluates PD, `tau` and returns for one scenario over a fixed ensemble.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub ensemble: &'a PathEnsemble,
    pub debt: &'a DebtProfile,
    pub rules: RunRules,
    pub policy: RatePolicy,
    pub alpha: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        ensemble: &'a PathEnsemble,
        debt: &'a DebtProfile,
        rules: RunRules,
        policy: RatePolicy,
        alpha: f64,
    ) -> Result<Self> {
        rules.validate()?;
        policy.validate()?;
        if !(alpha > 1.0) {
            return Err(Error::config("alpha", format!("must be > 1, got {alpha}")));
        }
        if ensemble.horizon() < rules.horizon || debt.horizon() < rules.horizon {
            return Err(Error::config("sim.horizon", "ensemble or debt profile shorter than horizon"));
        }
        Ok(Self { ensemble, debt, rules, policy, alpha })
    }

    pub fn pd(&self, r: f64) -> Result<f64> {
        estimate_pd(self.ensemble, self.debt, r, &self.rules)
    }

    pub fn tau(&self, r: f64) -> Result<f64> {
        rate_from_pd(self.pd(r)?, &self.policy)
    }

    /// `tau(r)`, with an unpriceable PD mapped to `+inf`.
    pub fn tau_or_inf(&self, r: f64) -> Result<f64> {
        match self.tau(r) {
            Err(Error::Unpriceable { .. }) => Ok(f64::INFINITY),
            other => other,
        }
    }

    pub fn expected_return(&self, r: f64) -> Result<f64> {
        Ok(self.point(r)?.1)
    }

    /// PD and expected return at `r` from a single pass over the paths.
    pub fn point(&self, r: f64) -> Result<(f64, f64)> {
        check_rate(r)?;
        let results: Vec<(bool, f64)> = self
            .ensemble
            .paths()
            .par_iter()
            .map(|fcf| {
                let mut acc = DiscountedFlows::new(self.alpha);
                let out = run_path(fcf, self.debt, r, &self.rules, &mut acc);
                (out.defaulted(), acc.finish(&out, self.debt, &self.policy))
            })
            .collect();
        let n = results.len() as f64;
        let defaults = results.iter().filter(|(d, _)| *d).count();
        // Sequential sum keeps the mean independent of thread scheduling.
        let total: f64 = results.iter().map(|(_, v)| v).sum();
        Ok((defaults as f64 / n, total / n))
    }

    /// PD, `tau` and expected-return curves over `rates`.
    pub fn curves(&self, rates: &[f64]) -> Result<(PdCurve, ReturnCurve)> {
        let points: Vec<(f64, f64)> = rates.iter().map(|&r| self.point(r)).collect::<Result<_>>()?;
        let pd: Vec<f64> = points.iter().map(|p| p.0).collect();
        let tau = pd
            .iter()
            .map(|&p| match rate_from_pd(p, &self.policy) {
                Ok(t) => Ok(Some(t)),
                Err(Error::Unpriceable { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        Ok((
            PdCurve { rates: rates.to_vec(), pd, tau, n: self.ensemble.n() },
            ReturnCurve {
                rates: rates.to_vec(),
                rbar: points.iter().map(|p| p.1).collect(),
                alpha: self.alpha,
            },
        ))
    }
}

/// Share of ensemble paths that default at rate `r`.
pub fn estimate_pd(ensemble: &PathEnsemble, debt: &DebtProfile, r: f64, rules: &RunRules) -> Result<f64> {
    check_rate(r)?;
    rules.validate()?;
    let defaults = ensemble
        .paths()
        .par_iter()
        .filter(|fcf| run_path(fcf, debt, r, rules, &mut ()).defaulted())
        .count();
    Ok(defaults as f64 / ensemble.n() as f64)
}

/// `tau(r) = r(PD(r))`.
pub fn tau(ensemble: &PathEnsemble, debt: &DebtProfile, policy: &RatePolicy, r: f64, rules: &RunRules) -> Result<f64> {
    rate_from_pd(estimate_pd(ensemble, debt, r, rules)?, policy)
}

/// Recovery on default, discounted to the default time `T`.
///
/// Up to `d_{S,0}` the STNFP recovers `1 - LGD`; any excess over `d_{S,0}`
/// is lost outright.
fn recovery(d_s_end: f64, d_l_end: f64, d_s0: f64, lgd: f64, discount: f64) -> f64 {
    let keep = 1.0 - lgd;
    if d_s_end <= d_s0 {
        (d_s_end * keep + d_l_end * keep) / discount
    } else {
        (-(d_s_end - d_s0) + d_s0 * keep + d_l_end * keep) / discount
    }
}

/// Streams the discounted sum of `C_t + I_{S,t} + c_t + I_{L,t}`.
#[derive(Debug, Clone, Copy)]
pub struct DiscountedFlows {
    alpha: f64,
    sum: f64,
}

impl DiscountedFlows {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, sum: 0.0 }
    }

    /// Lender return for the run that produced `out`.
    pub fn finish(&self, out: &Outcome, debt: &DebtProfile, policy: &RatePolicy) -> f64 {
        let mut r = self.sum - debt.d_s0 - debt.d_l(0);
        if out.defaulted() {
            let discount = self.alpha.powi(out.t_end as i32);
            r += recovery(out.d_s_end, out.d_l_end, debt.d_s0, policy.lgd, discount);
        }
        r
    }
}

impl Recorder for DiscountedFlows {
    #[inline]
    fn record(&mut self, p: &Period) {
        self.sum += (p.c_flow + p.i_s + p.c_term + p.i_l) / self.alpha.powi(p.t as i32);
    }
}

/// Lender return on a recorded path.
pub fn path_return(path: &TreasuryPath, debt: &DebtProfile, policy: &RatePolicy, alpha: f64) -> f64 {
    let t_end = path.t_end();
    let mut r = -debt.d_s0 - debt.d_l(0);
    let mut sum = 0.0;
    for t in 1..=t_end {
        let k = t - 1;
        sum += (path.c_flow[k] + path.i_s[k] + path.c_term[k] + path.i_l[k]) / alpha.powi(t as i32);
    }
    r += sum;
    if path.defaulted() {
        r += recovery(path.d_s[t_end], path.d_l[t_end], debt.d_s0, policy.lgd, alpha.powi(t_end as i32));
    }
    r
}

/// Mean lender return at each rate of `rates`.
pub fn expected_return_curve(eval: &Evaluator<'_>, rates: &[f64]) -> Result<ReturnCurve> {
    let rbar = rates.iter().map(|&r| eval.expected_return(r)).collect::<Result<_>>()?;
    Ok(ReturnCurve { rates: rates.to_vec(), rbar, alpha: eval.alpha })
}

/// `points` evenly spaced rates from `lo` to `hi` inclusive.
pub fn rate_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `PD(r)` and `tau(r)` over a rate grid. `tau` is `None` where the PD is
/// unpriceable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdCurve {
    pub rates: Vec<f64>,
    pub pd: Vec<f64>,
    pub tau: Vec<Option<f64>>,
    pub n: usize,
}

impl PdCurve {
    /// Grid points where `tau` falls outside `(0, 1)`.
    pub fn tau_out_of_range(&self) -> usize {
        self.tau
            .iter()
            .filter(|t| !matches!(t, Some(v) if *v > 0.0 && *v < 1.0))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnCurve {
    pub rates: Vec<f64>,
    pub rbar: Vec<f64>,
    pub alpha: f64,
}

/// Curves as CSV with columns `r, pd, tau, rbar`.
pub fn curves_to_csv(pd: &PdCurve, ret: &ReturnCurve) -> String {
    write_table(
        &["r", "pd", "tau", "rbar"],
        (0..pd.rates.len()).map(|i| vec![pd.rates[i], pd.pd[i], pd.tau[i].unwrap_or(f64::INFINITY), ret.rbar[i]]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcf::FcfPath;
    use crate::treasury::{simulate, DebtSchedule, DefaultMode, PayoffRule, TermLoan};

    const POLICY: RatePolicy = RatePolicy { r_f: 0.01, lgd: 0.6 };

    #[test]
    fn zero_pd_prices_at_risk_free() {
        assert_eq!(rate_from_pd(0.0, &POLICY).unwrap(), 0.01);
    }

    #[test]
    fn half_pd() {
        let r = rate_from_pd(0.5, &POLICY).unwrap();
        assert!((r - 0.31 / 0.70).abs() < 1e-15);
    }

    #[test]
    fn certain_default_full_loss_is_unpriceable() {
        let p = RatePolicy { r_f: 0.01, lgd: 1.0 };
        assert!(matches!(rate_from_pd(1.0, &p), Err(Error::Unpriceable { .. })));
    }

    #[test]
    fn certain_default_partial_loss() {
        let r = rate_from_pd(1.0, &POLICY).unwrap();
        assert!((r - 1.525).abs() < 1e-12);
    }

    #[test]
    fn probability_out_of_range() {
        assert!(rate_from_pd(1.5, &POLICY).is_err());
    }

    fn rules() -> RunRules {
        RunRules { t_ss: 5, horizon: 40, mode: DefaultMode::LiteralScan, payoff: PayoffRule::NetDebt }
    }

    fn ensemble_of(flows: &[f64]) -> PathEnsemble {
        let paths = flows.iter().map(|&f| FcfPath::from_values(vec![f; 40], 5).unwrap()).collect();
        PathEnsemble::from_paths(paths, 0).unwrap()
    }

    #[test]
    fn single_path_return_equals_mean() {
        let ens = ensemble_of(&[700.0]);
        let debt = DebtSchedule {
            d_s0: 2000.0,
            loans: vec![TermLoan { amount: 1000.0, issue_t: 1, first_repay_t: 2, n_installments: 10 }],
        }
        .profile(40)
        .unwrap();
        let eval = Evaluator::new(&ens, &debt, rules(), POLICY, 1.01).unwrap();
        for r in [0.02, 0.2, 0.6] {
            let path = simulate(&ens.paths()[0], &debt, r, &rules()).unwrap();
            assert_eq!(eval.expected_return(r).unwrap(), path_return(&path, &debt, &POLICY, 1.01));
        }
    }

    #[test]
    fn recovery_zero_when_everything_lost() {
        assert_eq!(recovery(2000.0, 300.0, 2000.0, 1.0, 1.3), 0.0);
        // excess over d_s0 is a full loss even at LGD = 0
        assert_eq!(recovery(2500.0, 0.0, 2000.0, 0.0, 1.0), -500.0 + 2000.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = rate_grid(0.001, 0.999, 200);
        assert_eq!(g.len(), 200);
        assert_eq!(g[0], 0.001);
        assert_eq!(g[199], 0.999);
    }

    #[test]
    fn alpha_must_exceed_one() {
        let ens = ensemble_of(&[1.0]);
        let debt = DebtSchedule { d_s0: 1.0, loans: vec![] }.profile(40).unwrap();
        assert!(Evaluator::new(&ens, &debt, rules(), POLICY, 1.0).is_err());
    }
}
