use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use singlet_core::checks::invariant_suite;
use singlet_core::config::{ProtocolKind, RunConfig};
use singlet_core::measurement::PopulationRecord;
use singlet_core::parallel::try_par_map;
use singlet_core::protocol::{error_budget, run_ensemble, Ablation, Schedule};
use singlet_core::rates::{compute_effective_rates, integrate_rate_equations, steady_state_closed_form, RatePopulations};

const HEADER: [&str; 8] = ["time_or_step", "P_S", "P_T", "P_uu", "P_dd", "P_a", "P_leak", "nbar_mode3"];
const POPULATION_SUM_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "singlet", version, about = "Dissipative singlet-state pumping simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled preset (continuous_fig2, stepwise_fig3).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory; defaults to `outputs.dir` of the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `params.nbar=0.2`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Channel selection, e.g. `-spontaneous,-mode4` or `sideband,carrier`.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    channels: Option<String>,
    /// Number of Gauss–Hermite nodes for the r average (odd).
    #[arg(long, value_name = "N")]
    quadrature: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Master-equation run of the continuous protocol.
    RunContinuous(Common),
    /// Master-equation run of the stepwise protocol.
    RunStepwise(Common),
    /// Effective rate model: rates, closed-form steady state and time series.
    RateModel {
        #[command(flatten)]
        common: Common,
        /// Preparation-rate formula (weak, broadened, thermal, thermal-consistent).
        #[arg(long)]
        variant: Option<String>,
    },
    /// Steady state of the baseline and of each ablation.
    ErrorBudget {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ablations; defaults to the standard four.
        #[arg(long)]
        ablations: Option<String>,
    },
    /// Run the invariant suite on the configured model.
    Validate(Common),
    /// Compare the baseline with doubled truncations and a tighter tolerance.
    Convergence(Common),
}

#[derive(Debug)]
enum CliError {
    Core(singlet_core::Error),
    Io(String),
    Check(String),
}

impl From<singlet_core::Error> for CliError {
    fn from(e: singlet_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Check(_) => 3,
            CliError::Io(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "validation",
            3 => "numerical",
            _ => "io",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) | CliError::Check(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::RunContinuous(c) => run(&c, ProtocolKind::Continuous),
        Command::RunStepwise(c) => run(&c, ProtocolKind::Stepwise),
        Command::RateModel { common, variant } => rate_model(&common, variant.as_deref()),
        Command::ErrorBudget { common, ablations } => budget(&common, ablations.as_deref()),
        Command::Validate(c) => validate(&c),
        Command::Convergence(c) => convergence(&c),
    }
}

fn load(common: &Common, protocol: Option<ProtocolKind>) -> CliResult<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(ch) = &common.channels {
        overrides.push(format!("model.channels=\"{ch}\""));
    }
    if let Some(n) = common.quadrature {
        overrides.push(format!("ensemble.nodes={n}"));
    }
    if let Some(p) = protocol {
        let name = match p {
            ProtocolKind::Continuous => "continuous",
            ProtocolKind::Stepwise => "stepwise",
        };
        overrides.push(format!("protocol=\"{name}\""));
    }
    let cfg = match (&common.config, &common.preset) {
        (Some(path), _) => RunConfig::load(path, &overrides)?,
        (None, Some(name)) => RunConfig::preset(name, &overrides)?,
        (None, None) => {
            let name = match protocol {
                Some(ProtocolKind::Stepwise) => "stepwise_fig3",
                _ => "continuous_fig2",
            };
            RunConfig::preset(name, &overrides)?
        }
    };
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.outputs.dir));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_manifest(dir: &Path, cfg: &RunConfig, extra: &[(String, String)]) -> CliResult<()> {
    let mut text = String::new();
    for (k, v) in cfg.manifest()?.iter().chain(extra) {
        text.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(dir.join(&cfg.outputs.manifest), text)?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn write_populations(path: &Path, records: &[PopulationRecord]) -> CliResult<()> {
    for r in records {
        let dev = (r.total() - 1.0).abs();
        if !(dev <= POPULATION_SUM_TOL) {
            return Err(CliError::Check(format!(
                "populations at {} sum to 1 {:+.3e}, beyond {POPULATION_SUM_TOL:e}",
                r.time,
                r.total() - 1.0
            )));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in records {
        let mut row = vec![r.time.to_string()];
        row.extend(r.values().iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn summary(label: &str, r: &PopulationRecord) -> String {
    format!(
        "{label}: P_S={:.4} P_T={:.4} P_uu={:.4} P_dd={:.4} P_a={:.4} P_leak={:.4} nbar={:.4}",
        r.p_s, r.p_t, r.p_uu, r.p_dd, r.p_a, r.p_leak, r.nbar_mode3
    )
}

fn run(common: &Common, protocol: ProtocolKind) -> CliResult<()> {
    let cfg = load(common, Some(protocol))?;
    let dir = out_dir(common, &cfg)?;
    let params = cfg.to_params()?;
    let schedule = cfg.schedule()?;
    let ensemble = cfg.ensemble();
    eprintln!(
        "running {} ({} nodes, parallel={})",
        cfg.name,
        ensemble.nodes,
        singlet_core::parallel::is_parallel()
    );
    let start = Instant::now();
    let series = run_ensemble(&params, &schedule, &ensemble)?;
    let steady = schedule.steady(&series)?;
    write_populations(&dir.join(&cfg.outputs.csv), &series.records)?;
    let d = series.diagnostics;
    write_manifest(
        &dir,
        &cfg,
        &[
            ("diagnostics.max_trace_drift".into(), d.max_trace_drift.to_string()),
            ("diagnostics.min_eigenvalue".into(), d.min_eigenvalue.to_string()),
            ("diagnostics.steps".into(), d.stats.accepted.to_string()),
            ("diagnostics.rejected".into(), d.stats.rejected.to_string()),
        ],
    )?;
    println!("{}", summary("steady", &steady));
    println!(
        "trace drift {:.2e}, min eigenvalue {:.2e}, {:.1} s; wrote {}",
        d.max_trace_drift,
        d.min_eigenvalue,
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn rate_model(common: &Common, variant: Option<&str>) -> CliResult<()> {
    let mut overrides = common.overrides.clone();
    if let Some(v) = variant {
        overrides.push(format!("rate_model.variant=\"{v}\""));
    }
    let cfg = load(&Common { overrides, ..common.clone() }, None)?;
    let dir = out_dir(common, &cfg)?;
    let params = cfg.to_params()?;
    let rates = compute_effective_rates(&params, cfg.variant()?)?;
    let include_leak = cfg.rate_model.include_leak;

    let mut extra: Vec<(String, String)> = rates.fields().iter().map(|(k, v)| (format!("rates.{k}"), v.to_string())).collect();
    for (k, v) in &extra {
        println!("{k} = {v}");
    }
    match steady_state_closed_form(&rates) {
        Ok(ss) => {
            println!("steady-state fidelity F = {:.4}, error E = {:.4}", ss.fidelity, ss.error);
            extra.push(("steady.fidelity".into(), ss.fidelity.to_string()));
            extra.push(("steady.error".into(), ss.error.to_string()));
        }
        Err(e) => println!("no closed-form steady state: {e}"),
    }

    let times = cfg.continuous_schedule()?.sample_times;
    let traj = integrate_rate_equations(&rates, RatePopulations::down_down(), 0.0, &times, include_leak)?;
    let mut w = csv::Writer::from_path(dir.join("rate_model.csv"))?;
    w.write_record(["time", "P_S", "P_T", "P_uu", "P_dd", "P_leak"])?;
    for (t, p) in &traj {
        w.write_record([t, &p.p_s, &p.p_t, &p.p_uu, &p.p_dd, &p.p_leak].map(|v| v.to_string()))?;
    }
    w.flush()?;
    write_manifest(&dir, &cfg, &extra)?;
    Ok(())
}

fn budget(common: &Common, ablations: Option<&str>) -> CliResult<()> {
    let cfg = load(common, None)?;
    let dir = out_dir(common, &cfg)?;
    let list = match ablations {
        Some(s) => Ablation::parse_list(s)?,
        None => Ablation::standard(),
    };
    let rows = error_budget(&cfg.to_params()?, &cfg.schedule()?, &cfg.ensemble(), &list)?;
    let mut w = csv::Writer::from_path(dir.join("error_budget.csv"))?;
    w.write_record(["ablation", "channels", "P_S", "P_T", "P_uu", "P_dd", "P_a", "P_leak", "nbar_mode3", "delta_P_S"])?;
    for row in &rows {
        let mut rec = vec![row.label.clone(), row.channels.clone()];
        rec.extend(row.steady.values().iter().map(f64::to_string));
        rec.push(row.delta_p_s.to_string());
        w.write_record(&rec)?;
        println!("{:<18} P_S={:.4} ΔP_S={:+.4}", row.label, row.steady.p_s, row.delta_p_s);
    }
    w.flush()?;
    write_manifest(&dir, &cfg, &[("ablations".into(), rows[1..].iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join(","))])?;
    Ok(())
}

fn validate(common: &Common) -> CliResult<()> {
    let cfg = load(common, None)?;
    let checks = invariant_suite(&cfg.to_params()?, &cfg.channels()?, cfg.truncation()?, cfg.tol()?, cfg.variant()?)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{:<32} {:>10.3e} <= {:<8.1e} {verdict}", c.name, c.value, c.tolerance);
        if !c.passed() {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        println!("configuration `{}` is valid", cfg.name);
        Ok(())
    } else {
        Err(CliError::Check(format!("invariants violated: {}", failed.join(", "))))
    }
}

fn convergence(common: &Common) -> CliResult<()> {
    let cfg = load(common, None)?;
    let dir = out_dir(common, &cfg)?;
    let params = cfg.to_params()?;
    let base = cfg.schedule()?;
    let ensemble = cfg.ensemble();

    let mut doubled = base.clone();
    *doubled.truncation_mut() = doubled.truncation_mut().doubled();
    let mut tight = base.clone();
    *tight.tol_mut() *= 0.5;
    let variants: Vec<(&str, Schedule)> = vec![("baseline", base), ("doubled-truncation", doubled), ("halved-tolerance", tight)];
    let steady = try_par_map(&variants, |(_, s)| s.steady(&run_ensemble(&params, s, &ensemble)?))?;

    let mut w = csv::Writer::from_path(dir.join("convergence.csv"))?;
    w.write_record(["variant", "P_S", "P_T", "P_uu", "P_dd", "P_a", "P_leak", "nbar_mode3", "delta_P_S", "max_abs_delta"])?;
    let b = steady[0];
    for ((label, _), st) in variants.iter().zip(&steady) {
        let max_delta = st.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let mut rec = vec![label.to_string()];
        rec.extend(st.values().iter().map(f64::to_string));
        rec.push((st.p_s - b.p_s).to_string());
        rec.push(max_delta.to_string());
        w.write_record(&rec)?;
        println!("{label:<20} P_S={:.5} ΔP_S={:+.2e} max|Δ|={max_delta:.2e}", st.p_s, st.p_s - b.p_s);
    }
    w.flush()?;
    write_manifest(&dir, &cfg, &[])?;
    Ok(())
}
