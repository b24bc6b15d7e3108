//! Batch front end: resolve a scenario from a preset or config file, run one
//! command and write its artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eqcredit_core::csv::{fmt_num, write_table};
use eqcredit_core::equilibrium::{estimator_spread, max_sustainable_debt, restructure_compare, solve_scenario};
use eqcredit_core::pricing::curves_to_csv;
use eqcredit_core::treasury::{paths_to_csv, simulate};
use eqcredit_core::{presets, DefaultMode, Error, RunManifest, Scenario, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const OUT_DIR_ENV: &str = "EQCREDIT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "eqcredit", version, about = "Equilibrium credit pricing under simulated cash flow plans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// PD, tau and expected-return curves over the rate grid.
    Curves(ScenarioArgs),
    /// Curves plus r_min, r_fix and r_max.
    Solve(ScenarioArgs),
    /// Largest initial STNFP with an equilibrium rate.
    Maxdebt(ScenarioArgs),
    /// Base scenario against a restructured variant on the same paths.
    Compare {
        #[command(flatten)]
        base: ScenarioArgs,
        #[command(flatten)]
        variant: VariantArgs,
    },
    /// Repeats `solve` over consecutive seeds.
    Spread {
        #[command(flatten)]
        base: ScenarioArgs,
        #[arg(long, default_value_t = 100)]
        seeds: usize,
    },
    /// Re-executes the run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = "eqcredit-out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// TOML (or .json) scenario file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// case-a, case-b or case-c. Used when no --config is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// literal | one-step
    #[arg(long)]
    pub mode: Option<DefaultMode>,
    /// Term loan maturity in years.
    #[arg(long)]
    pub maturity: Option<usize>,
    #[arg(long)]
    pub lgd: Option<f64>,
    /// Initial short term net financial position.
    #[arg(long = "d-s0")]
    pub d_s0: Option<f64>,
    #[arg(long, env = OUT_DIR_ENV, default_value = "eqcredit-out")]
    pub out: PathBuf,
    /// Also write fcf_paths.csv and treasury.csv.
    #[arg(long)]
    pub dump_paths: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VariantArgs {
    /// Variant scenario file; overrides below apply on top of it.
    #[arg(long)]
    pub variant_config: Option<PathBuf>,
    #[arg(long)]
    pub variant_maturity: Option<usize>,
    #[arg(long)]
    pub variant_lgd: Option<f64>,
    #[arg(long = "variant-d-s0")]
    pub variant_d_s0: Option<f64>,
    /// Multiplies every noise variance.
    #[arg(long)]
    pub variant_variance_scale: Option<f64>,
    /// Multiplies every noise mean.
    #[arg(long)]
    pub variant_bias_scale: Option<f64>,
}

/// Problem with the user's input rather than the engine.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig { .. }) => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

pub fn load_config(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let cfg = if path.extension().is_some_and(|e| e == "json") {
        ScenarioConfig::from_json(&text)
    } else {
        ScenarioConfig::from_toml(&text)
    };
    Ok(cfg?)
}

impl ScenarioArgs {
    pub fn resolve(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => presets::by_name(name).ok_or_else(|| {
                ConfigError(format!("unknown preset `{name}` (expected one of {})", presets::NAMES.join(", ")))
            })?,
            (None, None) => presets::case_a(),
        };
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(n) = self.samples {
            cfg = cfg.with_samples(n);
        }
        if let Some(m) = self.mode {
            cfg = cfg.with_mode(m);
        }
        if let Some(y) = self.maturity {
            cfg = cfg.with_maturity(y);
        }
        if let Some(l) = self.lgd {
            cfg = cfg.with_lgd(l);
        }
        if let Some(d) = self.d_s0 {
            cfg = cfg.with_d_s0(d);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl VariantArgs {
    pub fn resolve(&self, base: &ScenarioConfig) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.variant_config {
            Some(path) => load_config(path)?,
            None => base.clone(),
        };
        if let Some(y) = self.variant_maturity {
            cfg = cfg.with_maturity(y);
        }
        if let Some(l) = self.variant_lgd {
            cfg = cfg.with_lgd(l);
        }
        if let Some(d) = self.variant_d_s0 {
            cfg = cfg.with_d_s0(d);
        }
        if let Some(k) = self.variant_variance_scale {
            cfg.plan = cfg.plan.with_variance_scaled(k);
        }
        if let Some(k) = self.variant_bias_scale {
            cfg.plan = cfg.plan.with_bias_scaled(k);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_common(dir: &Path, manifest: &RunManifest) -> anyhow::Result<()> {
    write_json(dir, "manifest.json", manifest)?;
    write(dir, "scenario.toml", &manifest.config.to_toml())?;
    Ok(())
}

fn dump_paths(dir: &Path, scenario: &Scenario, r: f64) -> anyhow::Result<()> {
    write(dir, "fcf_paths.csv", &scenario.ensemble.to_csv())?;
    let rules = scenario.config.rules();
    let paths = scenario
        .ensemble
        .paths()
        .iter()
        .map(|f| simulate(f, &scenario.debt, r, &rules))
        .collect::<Result<Vec<_>, _>>()?;
    write(dir, "treasury.csv", &paths_to_csv(&paths))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n.a.".into(), fmt_num)
}

/// Runs a curves command. Returns a one-line summary.
fn run_curves(cfg: &ScenarioConfig, out: &Path, dump: bool) -> anyhow::Result<String> {
    let scenario = Scenario::prepare(cfg)?;
    let ev = scenario.evaluator();
    let (pd, ret) = ev.curves(&cfg.solver.curve_grid())?;
    prepare_out(out)?;
    write(out, "curves.csv", &curves_to_csv(&pd, &ret))?;
    write_common(out, &RunManifest::new("curves", cfg))?;
    if dump {
        dump_paths(out, &scenario, cfg.policy.r_f)?;
    }
    Ok(format!("curves: {} rates, {} tau points out of range", pd.rates.len(), pd.tau_out_of_range()))
}

fn run_solve(cfg: &ScenarioConfig, out: &Path, dump: bool) -> anyhow::Result<String> {
    let scenario = Scenario::prepare(cfg)?;
    let report = solve_scenario(&scenario)?;
    prepare_out(out)?;
    write(out, "curves.csv", &report.curves.to_csv())?;
    write_json(out, "report.json", &report)?;
    write_common(out, &report.manifest)?;
    if dump {
        dump_paths(out, &scenario, report.r_min.unwrap_or(cfg.policy.r_f))?;
    }
    Ok(format!(
        "verdict={} r_min={} r_fix={} r_max={}",
        serde_json::to_value(report.verdict)?.as_str().unwrap_or_default(),
        opt(report.r_min),
        opt(report.r_fix),
        fmt_num(report.r_max)
    ))
}

fn run_maxdebt(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<String> {
    let scenario = Scenario::prepare(cfg)?;
    let search = max_sustainable_debt(&scenario)?;
    prepare_out(out)?;
    let rows = search.probes.iter().map(|p| vec![p.d_s0, p.r_min.unwrap_or(f64::NAN)]);
    write(out, "debt_probes.csv", &write_table(&["d_s0", "r_min"], rows))?;
    write_json(out, "report.json", &search)?;
    write_common(out, &search.manifest)?;
    Ok(format!(
        "status={} d_s0={} tangency_rate={} r_fix={}",
        serde_json::to_value(search.status)?.as_str().unwrap_or_default(),
        opt(search.debt),
        opt(search.tangency_rate),
        opt(search.r_fix_at_boundary)
    ))
}

fn run_compare(base: &ScenarioConfig, variant: &ScenarioConfig, out: &Path) -> anyhow::Result<String> {
    let b = Scenario::prepare(base)?;
    let v = b.rebase(variant)?;
    let cmp = restructure_compare(&b, &v)?;
    prepare_out(out)?;
    write(out, "base_curves.csv", &cmp.base.curves.to_csv())?;
    write(out, "variant_curves.csv", &cmp.variant.curves.to_csv())?;
    write_json(out, "report.json", &cmp)?;
    write_common(out, &cmp.manifest)?;
    write(out, "variant.toml", &variant.to_toml())?;
    Ok(format!(
        "delta r_min={} r_fix={} r_max={}",
        opt(cmp.delta.r_min),
        opt(cmp.delta.r_fix),
        fmt_num(cmp.delta.r_max)
    ))
}

fn run_spread(cfg: &ScenarioConfig, seeds: &[u64], out: &Path) -> anyhow::Result<String> {
    let spread = estimator_spread(cfg, seeds)?;
    prepare_out(out)?;
    let rows = (0..seeds.len()).map(|i| {
        vec![
            seeds[i] as f64,
            spread.r_min[i].unwrap_or(f64::NAN),
            spread.r_fix[i].unwrap_or(f64::NAN),
            spread.r_max[i],
        ]
    });
    write(out, "spread.csv", &write_table(&["seed", "r_min", "r_fix", "r_max"], rows))?;
    write_json(out, "report.json", &spread)?;
    write_common(out, &spread.manifest)?;
    Ok(format!(
        "r_min median={} iqr={} missing={}",
        opt(spread.r_min_summary.median),
        opt(spread.r_min_summary.iqr),
        spread.r_min_summary.missing
    ))
}

fn rerun(manifest: &Path, out: &Path) -> anyhow::Result<String> {
    let text = fs::read_to_string(manifest).map_err(|e| ConfigError(format!("{}: {e}", manifest.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", manifest.display())))?;
    m.config.validate()?;
    match m.command.as_str() {
        "curves" => run_curves(&m.config, out, false),
        "solve" => run_solve(&m.config, out, false),
        "maxdebt" => run_maxdebt(&m.config, out),
        "compare" => {
            let variant = m.variant.as_ref().ok_or_else(|| ConfigError("manifest has no variant".into()))?;
            run_compare(&m.config, variant, out)
        }
        "spread" => {
            let seeds = m.seeds.as_ref().ok_or_else(|| ConfigError("manifest has no seeds".into()))?;
            run_spread(&m.config, seeds, out)
        }
        other => Err(ConfigError(format!("unknown command `{other}` in manifest")).into()),
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<String> {
    match &cli.command {
        Command::Curves(a) => run_curves(&a.resolve()?, &a.out, a.dump_paths),
        Command::Solve(a) => run_solve(&a.resolve()?, &a.out, a.dump_paths),
        Command::Maxdebt(a) => run_maxdebt(&a.resolve()?, &a.out),
        Command::Compare { base, variant } => {
            let b = base.resolve()?;
            let v = variant.resolve(&b)?;
            run_compare(&b, &v, &base.out)
        }
        Command::Spread { base, seeds } => {
            let cfg = base.resolve()?;
            let first = cfg.sim.seed;
            let list: Vec<u64> = (0..*seeds as u64).map(|i| first + i).collect();
            run_spread(&cfg, &list, &base.out)
        }
        Command::Rerun { manifest, out } => rerun(manifest, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
