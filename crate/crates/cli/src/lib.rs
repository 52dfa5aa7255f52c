//! Command implementations behind the `comdf` binary.
//!
//! Exit codes: 0 success, 1 infeasible design or violated precondition,
//! 2 unreadable or invalid input.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use comdf_core::analysis::{
    block_traces, build_error_system, gap_sweep, steady_state, GapReport,
};
use comdf_core::consensus::StabilityMargins;
use comdf_core::linalg::spectral_radius;
use comdf_core::model::check_observability;
use comdf_core::scenario::ScenarioFile;
use comdf_core::sim::{run_monte_carlo, ScenarioConfig};
use comdf_core::Error;

#[derive(Debug, Parser)]
#[command(name = "comdf", version, about = "Distributed filtering with measurement consensus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Consensus gains, spectra and the fusion-depth threshold.
    Design(Common),
    /// Steady-state covariance gap against the centralized filter.
    Gap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        l_min: usize,
        #[arg(long, default_value_t = 40)]
        l_max: usize,
    },
    /// Monte Carlo mean squared error per sensor and time step.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// First time step of the steady-state averaging window
        /// (default: half the horizon).
        #[arg(long)]
        steady_from: Option<usize>,
        /// Where to write the summary JSON (default: next to `--out`).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    pub file: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Machine-readable output on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Infeasible(_) => 1,
            Self::Input(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::Dimension(_)
            | Error::NotSquare { .. }
            | Error::NonFinite { .. }
            | Error::InvalidModel(_) => Self::Input(e.to_string()),
            Error::NotStronglyConnected => Self::Infeasible(format!("assumption 1 violated: {e}")),
            _ => Self::Infeasible(e.to_string()),
        }
    }
}

/// What a command produced: text for stdout and stderr.
#[derive(Debug, Default)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
}

pub fn run(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Design(common) => cmd_design(common),
        Command::Gap {
            common,
            l_min,
            l_max,
        } => cmd_gap(common, *l_min, *l_max),
        Command::Simulate {
            common,
            steady_from,
            summary,
        } => cmd_simulate(common, *steady_from, summary.as_deref()),
    }
}

pub fn load_config(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioFile::load(&common.file)?.to_config()?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Debug, Serialize)]
pub struct DesignReport {
    pub sensors: usize,
    pub strongly_connected: bool,
    pub observable: bool,
    pub mu_table: Vec<Vec<f64>>,
    pub rho_g: f64,
    pub norm_g: f64,
    pub closed_loop_norm: f64,
    pub closed_loop_radius: f64,
    pub gain_norm: f64,
    pub ca_norm: f64,
    /// `None` when `||G|| >= 1` or `||A - KCA|| >= 1`; see `l0_note`.
    pub l0: Option<f64>,
    pub l0_note: String,
    pub feasible: bool,
}

pub fn design_report(cfg: &ScenarioConfig) -> Result<DesignReport, CliError> {
    let strongly_connected = cfg.graph.is_strongly_connected();
    if !strongly_connected {
        return Err(Error::NotStronglyConnected.into());
    }
    let (c, _) = cfg.suite.augment();
    let observable = check_observability(&c, cfg.plant.a());
    if !observable {
        return Err(CliError::Infeasible(
            "the stacked sensor suite does not observe the plant".into(),
        ));
    }
    let design = cfg.consensus_design()?;
    let gains = cfg.gains()?;
    let margins = StabilityMargins::new(&design, &gains.k, &gains.c, &gains.a)?;
    let (l0, l0_note) = match margins.l0() {
        Ok(v) if v < 0.0 => (Some(v), "every l >= 1 is sufficient".to_string()),
        Ok(v) => (Some(v), format!("any integer l > {v:.4} is sufficient")),
        Err(e) => (None, format!("threshold undefined: {e}")),
    };
    let rho_g = design.rho_g();
    Ok(DesignReport {
        sensors: cfg.suite.len(),
        strongly_connected,
        observable,
        mu_table: design.mu().rows().to_vec(),
        rho_g,
        norm_g: design.norm_g(),
        closed_loop_norm: margins.closed_loop,
        closed_loop_radius: spectral_radius(&gains.closed_loop())?,
        gain_norm: margins.gain,
        ca_norm: margins.ca,
        l0,
        l0_note,
        feasible: rho_g < 1.0,
    })
}

fn design_text(r: &DesignReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "sensors              {}", r.sensors);
    let _ = writeln!(s, "strongly connected   {}", r.strongly_connected);
    let _ = writeln!(s, "observable           {}", r.observable);
    let _ = writeln!(s, "rho(G)               {:.6}", r.rho_g);
    let _ = writeln!(s, "||G||_2              {:.6}", r.norm_g);
    let _ = writeln!(s, "||A - KCA||_2        {:.6}", r.closed_loop_norm);
    let _ = writeln!(s, "rho(A - KCA)         {:.6}", r.closed_loop_radius);
    let _ = writeln!(s, "||K||_2              {:.6}", r.gain_norm);
    let _ = writeln!(s, "||CA||_2             {:.6}", r.ca_norm);
    let _ = writeln!(s, "l0                   {}", r.l0_note);
    let _ = writeln!(s, "mu table:");
    for row in &r.mu_table {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "  {}", cells.join(" "));
    }
    s
}

pub fn cmd_design(common: &Common) -> Result<Output, CliError> {
    let cfg = load_config(common)?;
    let report = design_report(&cfg)?;
    let json = to_json(&report);
    if let Some(path) = &common.out {
        write_file(path, &json)?;
    }
    if !report.feasible {
        return Err(CliError::Infeasible(format!(
            "fusion matrix does not contract: rho(G) = {}",
            report.rho_g
        )));
    }
    Ok(Output {
        stdout: if common.json { json } else { design_text(&report) },
        stderr: String::new(),
    })
}

#[derive(Debug, Serialize)]
struct GapFooter<'a> {
    #[serde(flatten)]
    summary: &'a comdf_core::analysis::GapSummary,
}

/// Gap CSV with a trailing `# {json}` line holding the fitted constants.
pub fn gap_csv(report: &GapReport) -> String {
    let footer = serde_json::to_string(&GapFooter {
        summary: &report.summary,
    })
    .expect("summary serializes");
    format!("{}# {footer}\n", report.to_csv())
}

pub fn cmd_gap(common: &Common, l_min: usize, l_max: usize) -> Result<Output, CliError> {
    if l_min > l_max {
        return Err(CliError::Input(format!("--l-min {l_min} exceeds --l-max {l_max}")));
    }
    let cfg = load_config(common)?;
    let design = cfg.consensus_design()?;
    if design.rho_g() >= 1.0 {
        return Err(CliError::Infeasible(format!(
            "fusion matrix does not contract: rho(G) = {}",
            design.rho_g()
        )));
    }
    let gains = cfg.gains()?;
    let ls: Vec<usize> = (l_min..=l_max).collect();
    let report = gap_sweep(&cfg.plant, &cfg.suite, &gains, &design, &ls)?;
    let csv = gap_csv(&report);
    let mut out = Output::default();
    match &common.out {
        Some(path) => write_file(path, &csv)?,
        None if !common.json => out.stdout = csv,
        None => {}
    }
    if common.json {
        out.stdout = to_json(&report);
    }
    if report.summary.unstable_count > 0 {
        out.stderr = format!(
            "{} fusion depth(s) leave the error dynamics unstable; rows marked `unstable`\n",
            report.summary.unstable_count
        );
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub trials: usize,
    pub horizon: usize,
    pub fusion_steps: usize,
    pub seed: u64,
    /// Averaging window `[from, to)` over time steps.
    pub window: [usize; 2],
    pub steady_mse: Vec<f64>,
    pub central_steady_mse: f64,
    /// Traces of the diagonal blocks of the steady distributed covariance;
    /// `None` when the error dynamics are unstable at this depth.
    pub analytic_traces: Option<Vec<f64>>,
    pub analytic_central_trace: f64,
    /// Trace of the Riccati solution (one-step prediction covariance).
    pub riccati_trace: f64,
}

pub fn simulate(cfg: &ScenarioConfig, steady_from: Option<usize>) -> Result<(String, SimulateSummary), CliError> {
    let series = run_monte_carlo(cfg)?;
    let from = steady_from.unwrap_or(cfg.horizon / 2);
    let to = cfg.horizon + 1;
    let (steady_mse, central_steady_mse) = series.steady(from, to)?;

    let design = cfg.consensus_design()?;
    let gains = cfg.gains()?;
    let sys = build_error_system(&cfg.plant, &cfg.suite, &gains, &design, cfg.fusion_steps)?;
    let n = cfg.plant.state_dim();
    let (analytic_traces, analytic_central_trace) = match steady_state(&sys) {
        Ok(st) => (
            Some(block_traces(&st.p_l, cfg.suite.len(), n)),
            st.central_block.trace(),
        ),
        Err(Error::Precondition(_)) => {
            let base = build_error_system(&cfg.plant, &cfg.suite, &gains, &design, 200)?;
            (None, steady_state(&base)?.central_block.trace())
        }
        Err(e) => return Err(e.into()),
    };
    Ok((
        series.to_csv(),
        SimulateSummary {
            trials: cfg.trials,
            horizon: cfg.horizon,
            fusion_steps: cfg.fusion_steps,
            seed: cfg.seed,
            window: [from, to],
            steady_mse,
            central_steady_mse,
            analytic_traces,
            analytic_central_trace,
            riccati_trace: gains.p.trace(),
        },
    ))
}

fn summary_text(s: &SimulateSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} trials, {} steps, l = {}, steady window [{}, {})",
        s.trials, s.horizon, s.fusion_steps, s.window[0], s.window[1]
    );
    let _ = writeln!(out, "sensor  steady MSE      analytic");
    for (i, m) in s.steady_mse.iter().enumerate() {
        let a = s
            .analytic_traces
            .as_ref()
            .map_or("-".to_string(), |t| format!("{:.6}", t[i]));
        let _ = writeln!(out, "{:<6}  {:<14.6}  {a}", i + 1, m);
    }
    let _ = writeln!(
        out,
        "central {:<14.6}  {:.6}",
        s.central_steady_mse, s.analytic_central_trace
    );
    out
}

fn default_summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("mse".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.summary.json"))
}

pub fn cmd_simulate(
    common: &Common,
    steady_from: Option<usize>,
    summary_path: Option<&Path>,
) -> Result<Output, CliError> {
    let cfg = load_config(common)?;
    let (csv, summary) = simulate(&cfg, steady_from)?;
    let json = to_json(&summary);
    let summary_path = summary_path
        .map(Path::to_path_buf)
        .or_else(|| common.out.as_deref().map(default_summary_path));
    if let Some(path) = &summary_path {
        write_file(path, &json)?;
    }
    let report = if common.json { json } else { summary_text(&summary) };
    match &common.out {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(Output {
                stdout: report,
                stderr: String::new(),
            })
        }
        None => Ok(Output {
            stdout: csv,
            stderr: report,
        }),
    }
}
