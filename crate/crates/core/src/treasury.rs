//! Short term net financial position (STNFP) dynamics.
//!
//! ```text
//! D_{S,t} = D_{S,t-1} - C_t
//! C_t     = F_t - S_t
//! S_t     = c_t + I_{L,t} + I_{S,t}
//! I_{S,t} = r max(0, D_{S,t-1})      I_{L,t} = r d_{L,t-1}
//! ```
//!
//! Interest accrues on the balance at the beginning of the period. A cash
//! surplus (negative STNFP) earns nothing.
//!
//! A path defaults when the STNFP grows (`C_t <= 0`) after the steady state.
//! Once `F` and `K = c_t + I_{L,t}` are constant, growth at one period forces
//! growth at every later period, so checking `C_{t_ss+1}` alone is enough;
//! [`DefaultMode::OneStep`] uses that shortcut while
//! [`DefaultMode::LiteralScan`] checks every period.

use serde::{Deserialize, Serialize};

use crate::csv::{fmt_num, write_table};
use crate::error::{Error, Result};
use crate::fcf::FcfPath;

/// Term loan repaid in equal principal instalments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermLoan {
    pub amount: f64,
    pub issue_t: usize,
    pub first_repay_t: usize,
    pub n_installments: usize,
}

impl TermLoan {
    pub fn validate(&self, idx: usize) -> Result<()> {
        let field = |f: &str| format!("debt.loans[{idx}].{f}");
        if !(self.amount > 0.0) || !self.amount.is_finite() {
            return Err(Error::config(field("amount"), "must be > 0"));
        }
        if self.first_repay_t <= self.issue_t {
            return Err(Error::config(field("first_repay_t"), "must be > issue_t"));
        }
        if self.n_installments < 1 {
            return Err(Error::config(field("n_installments"), "must be >= 1"));
        }
        Ok(())
    }

    pub fn last_repay_t(&self) -> usize {
        self.first_repay_t + self.n_installments - 1
    }

    /// Principal outstanding after period `t`'s flows.
    pub fn outstanding(&self, t: usize) -> f64 {
        if t < self.issue_t {
            return 0.0;
        }
        let paid = (t + 1).saturating_sub(self.first_repay_t).min(self.n_installments);
        if paid == self.n_installments {
            0.0
        } else {
            self.amount - self.amount * paid as f64 / self.n_installments as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebtSchedule {
    /// Initial STNFP `d_{S,0}`.
    pub d_s0: f64,
    #[serde(default)]
    pub loans: Vec<TermLoan>,
}

impl DebtSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_s0 > 0.0) || !self.d_s0.is_finite() {
            return Err(Error::config("debt.d_s0", "must be > 0"));
        }
        for (i, l) in self.loans.iter().enumerate() {
            l.validate(i)?;
        }
        Ok(())
    }

    /// Re-spreads every loan over `years` instalments.
    pub fn with_maturity(&self, years: usize) -> Self {
        let mut s = self.clone();
        for l in &mut s.loans {
            l.n_installments = years;
        }
        s
    }

    pub fn with_d_s0(&self, d_s0: f64) -> Self {
        Self { d_s0, ..self.clone() }
    }

    /// Resolves the schedule into per-period series over `horizon`.
    pub fn profile(&self, horizon: usize) -> Result<DebtProfile> {
        self.validate()?;
        let (d_l, c) = term_debt_series(&self.loans, horizon)?;
        Ok(DebtProfile { d_s0: self.d_s0, d_l, c })
    }
}

/// Term debt series `d_{L,t}` (`t = 0..=horizon`) and `c_t` (index `t`,
/// `c[0] = 0`).
pub fn term_debt_series(loans: &[TermLoan], horizon: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    for (i, l) in loans.iter().enumerate() {
        l.validate(i)?;
        if l.last_repay_t() > horizon {
            return Err(Error::config(
                format!("debt.loans[{i}]"),
                format!("last instalment at t={} is beyond horizon {horizon}", l.last_repay_t()),
            ));
        }
    }
    let d_l: Vec<f64> = (0..=horizon)
        .map(|t| loans.iter().map(|l| l.outstanding(t)).sum())
        .collect();
    if let Some(t) = d_l.iter().position(|&d| d < -1e-9) {
        return Err(Error::Internal(format!("negative term debt {} at t={t}", d_l[t])));
    }
    let mut c = vec![0.0; horizon + 1];
    for t in 1..=horizon {
        c[t] = d_l[t - 1] - d_l[t];
    }
    Ok((d_l, c))
}

/// A debt schedule resolved over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DebtProfile {
    pub d_s0: f64,
    d_l: Vec<f64>,
    c: Vec<f64>,
}

impl DebtProfile {
    pub fn horizon(&self) -> usize {
        self.c.len() - 1
    }

    #[inline]
    pub fn d_l(&self, t: usize) -> f64 {
        self.d_l[t]
    }

    #[inline]
    pub fn c(&self, t: usize) -> f64 {
        self.c[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DefaultMode {
    /// Default iff some `C_t <= 0` with `t_ss < t <= horizon`.
    #[default]
    #[serde(rename = "literal")]
    LiteralScan,
    /// Default iff `C_{t_ss+1} <= 0`.
    #[serde(rename = "one-step")]
    OneStep,
}

impl std::str::FromStr for DefaultMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" | "literal-scan" => Ok(Self::LiteralScan),
            "one-step" => Ok(Self::OneStep),
            other => Err(Error::config("sim.default_mode", format!("unknown mode `{other}`"))),
        }
    }
}

impl DefaultMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LiteralScan => "literal",
            Self::OneStep => "one-step",
        }
    }
}

/// When a surviving path counts as repaid and stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffRule {
    /// Net debt `D_{S,t} + d_{L,t} <= 0`: cash on hand covers the term debt.
    #[default]
    NetDebt,
    /// Term debt fully amortised and `D_{S,t} <= 0`.
    FullRepayment,
}

impl PayoffRule {
    #[inline]
    fn is_paid(&self, d_s: f64, d_l: f64) -> bool {
        match self {
            Self::NetDebt => d_s + d_l <= 0.0,
            Self::FullRepayment => d_l == 0.0 && d_s <= 0.0,
        }
    }
}

/// Why the recorded series stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathEnd {
    Default,
    PaidOff,
    Horizon,
}

/// Stopping rules for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunRules {
    pub t_ss: usize,
    pub horizon: usize,
    pub mode: DefaultMode,
    pub payoff: PayoffRule,
}

impl RunRules {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.t_ss {
            return Err(Error::config(
                "sim.horizon",
                format!("must be > t_ss ({}), got {}", self.t_ss, self.horizon),
            ));
        }
        Ok(())
    }
}

/// Treasury series for `t = 1..=t_end` (`d_s` and `d_l` also hold `t = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TreasuryPath {
    pub d_s: Vec<f64>,
    pub d_l: Vec<f64>,
    pub f: Vec<f64>,
    pub c_term: Vec<f64>,
    pub i_l: Vec<f64>,
    pub i_s: Vec<f64>,
    pub s: Vec<f64>,
    pub c_flow: Vec<f64>,
    pub end: PathEnd,
}

impl TreasuryPath {
    pub fn t_end(&self) -> usize {
        self.c_flow.len()
    }

    pub fn defaulted(&self) -> bool {
        self.end == PathEnd::Default
    }

    /// `C_t` for `t >= 1`.
    #[inline]
    pub fn c_at(&self, t: usize) -> f64 {
        self.c_flow[t - 1]
    }

    /// Long-format CSV: one row per period.
    pub fn to_csv_rows(&self, path_index: usize, out: &mut String) {
        for t in 1..=self.t_end() {
            let k = t - 1;
            let cells = [
                path_index.to_string(),
                t.to_string(),
                fmt_num(self.f[k]),
                fmt_num(self.c_term[k]),
                fmt_num(self.i_l[k]),
                fmt_num(self.i_s[k]),
                fmt_num(self.s[k]),
                fmt_num(self.c_flow[k]),
                fmt_num(self.d_s[t]),
                fmt_num(self.d_l[t]),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }

    pub const CSV_HEADER: &'static str = "path,t,f,c_term,i_l,i_s,s,c_flow,d_s,d_l\n";
}

/// One period of the recursion, handed to a [`Recorder`].
#[derive(Debug, Clone, Copy)]
pub struct Period {
    pub t: usize,
    pub f: f64,
    pub c_term: f64,
    pub i_l: f64,
    pub i_s: f64,
    pub s: f64,
    pub c_flow: f64,
    pub d_s: f64,
    pub d_l: f64,
}

/// Observes each period as the recursion runs.
pub trait Recorder {
    fn record(&mut self, p: &Period);
}

impl Recorder for () {
    #[inline]
    fn record(&mut self, _: &Period) {}
}

impl Recorder for TreasuryPath {
    fn record(&mut self, p: &Period) {
        self.f.push(p.f);
        self.c_term.push(p.c_term);
        self.i_l.push(p.i_l);
        self.i_s.push(p.i_s);
        self.s.push(p.s);
        self.c_flow.push(p.c_flow);
        self.d_s.push(p.d_s);
        self.d_l.push(p.d_l);
    }
}

/// Terminal state of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub end: PathEnd,
    pub t_end: usize,
    pub d_s_end: f64,
    pub d_l_end: f64,
}

impl Outcome {
    pub fn defaulted(&self) -> bool {
        self.end == PathEnd::Default
    }
}

pub(crate) fn check_rate(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidRate(r));
    }
    Ok(())
}

fn check_cover(fcf: &FcfPath, debt: &DebtProfile, horizon: usize) -> Result<()> {
    if fcf.horizon() < horizon || debt.horizon() < horizon {
        return Err(Error::config(
            "sim.horizon",
            format!(
                "{horizon} exceeds the FCF ({}) or debt ({}) horizon",
                fcf.horizon(),
                debt.horizon()
            ),
        ));
    }
    Ok(())
}

#[inline]
fn period(fcf: &FcfPath, debt: &DebtProfile, r: f64, t: usize, d_s_prev: f64) -> Period {
    let f = fcf.at(t);
    let c_term = debt.c(t);
    let i_l = r * debt.d_l(t - 1);
    let i_s = r * d_s_prev.max(0.0);
    let s = c_term + i_l + i_s;
    let c_flow = f - s;
    Period {
        t,
        f,
        c_term,
        i_l,
        i_s,
        s,
        c_flow,
        d_s: d_s_prev - c_flow,
        d_l: debt.d_l(t),
    }
}

/// Runs the recursion until default, repayment or the horizon.
///
/// Inputs are assumed validated; see [`simulate`].
pub fn run_path<R: Recorder>(fcf: &FcfPath, debt: &DebtProfile, r: f64, rules: &RunRules, rec: &mut R) -> Outcome {
    let mut d_s = debt.d_s0;
    for t in 1..=rules.horizon {
        let p = period(fcf, debt, r, t, d_s);
        rec.record(&p);
        d_s = p.d_s;
        let defaulted = match rules.mode {
            DefaultMode::LiteralScan => t > rules.t_ss && p.c_flow <= 0.0,
            DefaultMode::OneStep => t == rules.t_ss + 1 && p.c_flow <= 0.0,
        };
        let end = if defaulted {
            Some(PathEnd::Default)
        } else if rules.payoff.is_paid(p.d_s, p.d_l) {
            Some(PathEnd::PaidOff)
        } else {
            None
        };
        if let Some(end) = end {
            return Outcome { end, t_end: t, d_s_end: p.d_s, d_l_end: p.d_l };
        }
    }
    Outcome {
        end: PathEnd::Horizon,
        t_end: rules.horizon,
        d_s_end: d_s,
        d_l_end: debt.d_l(rules.horizon),
    }
}

fn empty_path(debt: &DebtProfile, capacity: usize) -> TreasuryPath {
    let mut d_s = Vec::with_capacity(capacity + 1);
    let mut d_l = Vec::with_capacity(capacity + 1);
    d_s.push(debt.d_s0);
    d_l.push(debt.d_l(0));
    TreasuryPath {
        d_s,
        d_l,
        f: Vec::with_capacity(capacity),
        c_term: Vec::with_capacity(capacity),
        i_l: Vec::with_capacity(capacity),
        i_s: Vec::with_capacity(capacity),
        s: Vec::with_capacity(capacity),
        c_flow: Vec::with_capacity(capacity),
        end: PathEnd::Horizon,
    }
}

/// Evolves the treasury through the full horizon with no stopping rule.
pub fn evolve_treasury(fcf: &FcfPath, debt: &DebtProfile, r: f64, horizon: usize) -> Result<TreasuryPath> {
    check_rate(r)?;
    check_cover(fcf, debt, horizon)?;
    let mut path = empty_path(debt, horizon);
    let mut d_s = debt.d_s0;
    for t in 1..=horizon {
        let p = period(fcf, debt, r, t, d_s);
        path.record(&p);
        d_s = p.d_s;
    }
    Ok(path)
}

/// Evolves the treasury until default, repayment or the horizon, keeping
/// every period.
pub fn simulate(fcf: &FcfPath, debt: &DebtProfile, r: f64, rules: &RunRules) -> Result<TreasuryPath> {
    check_rate(r)?;
    rules.validate()?;
    check_cover(fcf, debt, rules.horizon)?;
    let mut path = empty_path(debt, rules.horizon);
    let out = run_path(fcf, debt, r, rules, &mut path);
    path.end = out.end;
    Ok(path)
}

/// Applies the default test to a recorded path over `(t_ss, horizon]`,
/// clipped to the periods the path covers.
pub fn detect_default(path: &TreasuryPath, t_ss: usize, mode: DefaultMode, horizon: usize) -> Result<bool> {
    if horizon <= t_ss {
        return Err(Error::config("sim.horizon", format!("must be > t_ss ({t_ss})")));
    }
    let last = horizon.min(path.t_end());
    Ok(match mode {
        DefaultMode::LiteralScan => (t_ss + 1..=last).any(|t| path.c_at(t) <= 0.0),
        DefaultMode::OneStep => t_ss + 1 <= last && path.c_at(t_ss + 1) <= 0.0,
    })
}

/// Checks the irreversibility property on a recorded path: once the STNFP
/// stops decreasing at some `t >= t_ss` it never decreases again, and once
/// it strictly increases it keeps strictly increasing.
///
/// Only meaningful when `F_t` and `c_t + I_{L,t}` are constant from `t_ss`.
pub fn check_irreversibility(path: &TreasuryPath, t_ss: usize) -> bool {
    let start = t_ss.max(1);
    let last = path.t_end();
    if start > last {
        return true;
    }
    let d = &path.d_s;
    let holds_after = |pred: &dyn Fn(usize) -> bool| match (start..=last).find(|&t| pred(t)) {
        Some(tbar) => (tbar..=last).all(|t| pred(t)),
        None => true,
    };
    holds_after(&|t| d[t] >= d[t - 1]) && holds_after(&|t| d[t] > d[t - 1])
}

/// Treasury series of many paths as one CSV document.
pub fn paths_to_csv<'a>(paths: impl IntoIterator<Item = &'a TreasuryPath>) -> String {
    let mut out = String::from(TreasuryPath::CSV_HEADER);
    for (i, p) in paths.into_iter().enumerate() {
        p.to_csv_rows(i, &mut out);
    }
    out
}

/// `t, d_l, c` rows for a debt profile.
pub fn profile_to_csv(debt: &DebtProfile) -> String {
    write_table(
        &["t", "d_l", "c"],
        (0..=debt.horizon()).map(|t| vec![t as f64, debt.d_l(t), debt.c(t)]),
    )
}
