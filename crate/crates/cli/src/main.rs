//! Command-line front end: model validation, path simulation, averaged-drift
//! evaluation, and the experiment runners, with manifests and CSV outputs.
//!
//! Exit codes: 0 on success, 2 on validation failure (assumption witnesses
//! printed) or invalid input, 3 when a run is dominated by blow-ups.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use slowfast_core::averaging::averaged_drift;
use slowfast_core::catalog::builtin_model;
use slowfast_core::experiments::{
    resolve_averaging_config, run_convergence, run_khasminskii, run_mixing, run_moments,
    ExperimentConfig,
};
use slowfast_core::noise::SeedManifest;
use slowfast_core::solver::{solve_coupled, TrajectoryRecord};
use slowfast_core::spectral::Field;
use slowfast_core::validate::validate_assumptions;
use slowfast_core::{Error as CoreError, ModelSpec};

use config::{parse_initial_data, FileConfig};
use output::{resolve_out_dir, OutputWriter, RunManifest};

#[derive(Parser)]
#[command(
    name = "slowfast",
    version,
    about = "Spectral simulator and verification harness for two-time-scale stochastic reaction-diffusion systems"
)]
struct Cli {
    /// TOML configuration file; flags override its scalars.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Catalog model name (cubic-gl, linear, deterministic-cubic).
    #[arg(long, global = true)]
    model: Option<String>,
    /// Master seed for all substreams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $SLOWFAST_OUT_DIR, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for path ensembles (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model hypotheses by quasi-random falsification.
    Validate {
        /// Sample budget (>= 1000).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Integrate coupled slow-fast paths and write the trajectories.
    Simulate {
        #[arg(long)]
        x0: Option<String>,
        #[arg(long)]
        y0: Option<String>,
        /// Time-scale separation epsilon.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Estimate the averaged drift at a frozen slow state.
    Average {
        /// Slow state (zero | eK[:amp] | coeffs:...).
        #[arg(long)]
        x: Option<String>,
    },
    /// Averaging-principle convergence study over an epsilon grid.
    Converge {
        /// Comma-separated epsilon grid, strictly decreasing.
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Fit the exponential forgetting rate of the fast equation.
    Mix {
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Ensemble moments of sup-norms across the epsilon grid.
    Moments {
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Windowed auxiliary fast motion versus the coupled fast component.
    Khasminskii {
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        paths: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<InputError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Marker for input/validation errors that exit with code 2.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for InputError {}

fn input_err(msg: String) -> anyhow::Error {
    anyhow!(InputError(msg))
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(workers) = cli.workers {
        // Ignore the error when a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    let mut config = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(|e| input_err(format!("{e:#}")))?,
        None => FileConfig::default(),
    };
    if let Some(model) = &cli.model {
        config.model.name = model.clone();
    }
    let seed = cli.seed.unwrap_or(0);
    let manifest = SeedManifest::new(seed);
    let out_dir = resolve_out_dir(cli.out.clone());

    let overrides = config
        .resolved_overrides()
        .map_err(|e| input_err(format!("{e:#}")))?;
    let model = match builtin_model(&config.model.name, &overrides) {
        Ok(m) => m,
        Err(
            e @ (CoreError::UnknownModel(_)
            | CoreError::UnknownOverride(_)
            | CoreError::InvalidModel(_)
            | CoreError::InvalidParameter(_)),
        ) => {
            return Err(input_err(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    };

    match cli.command {
        Command::Validate { budget } => cmd_validate(&model, &config, budget, seed, out_dir),
        Command::Simulate { x0, y0, eps, paths } => {
            cmd_simulate(&model, &mut config, x0, y0, eps, paths, &manifest, out_dir)
        }
        Command::Average { x } => cmd_average(&model, &config, x, &manifest, out_dir),
        Command::Converge { eps, paths } => {
            apply_grid_flags(&mut config, eps, paths)?;
            cmd_converge(&model, &config, &manifest, out_dir)
        }
        Command::Mix { pairs } => {
            if let Some(p) = pairs {
                config.experiment.mixing_pairs = p;
            }
            cmd_mix(&model, &config, &manifest, out_dir)
        }
        Command::Moments { eps, paths } => {
            apply_grid_flags(&mut config, eps, paths)?;
            cmd_moments(&model, &config, &manifest, out_dir)
        }
        Command::Khasminskii { eps, paths } => {
            apply_grid_flags(&mut config, eps, paths)?;
            cmd_khasminskii(&model, &config, &manifest, out_dir)
        }
    }
}

fn apply_grid_flags(
    config: &mut FileConfig,
    eps: Option<String>,
    paths: Option<usize>,
) -> Result<()> {
    if let Some(eps) = eps {
        let grid: Vec<f64> = eps
            .split(',')
            .map(|tok| tok.trim().parse::<f64>().context("bad epsilon value"))
            .collect::<Result<_>>()
            .map_err(|e| input_err(format!("{e:#}")))?;
        config.experiment.eps_grid = grid;
    }
    if let Some(p) = paths {
        config.experiment.paths = p;
    }
    Ok(())
}

fn experiment_config(config: &FileConfig) -> Result<ExperimentConfig> {
    config
        .experiment_config()
        .map_err(|e| input_err(format!("{e:#}")))
}

fn csv_quote(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn realize(spec: &str, model: &ModelSpec) -> Result<Field> {
    let data = parse_initial_data(spec).map_err(|e| input_err(format!("{e:#}")))?;
    data.realize(&model.basis)
        .map_err(|e| input_err(e.to_string()))
}

fn cmd_validate(
    model: &ModelSpec,
    config: &FileConfig,
    budget: Option<usize>,
    seed: u64,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let budget = budget.unwrap_or(config.experiment.budget);
    let report = validate_assumptions(model, budget, seed);
    let manifest = RunManifest::new("validate", seed, config)?;
    let mut writer = OutputWriter::new(out_dir, manifest)?;

    let mut csv = String::from("check,status,fitted,witness\n");
    for check in &report.checks {
        let fitted = check
            .fitted
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ");
        let witness = check
            .witness
            .as_ref()
            .map(|w| w.inequality.clone())
            .unwrap_or_default();
        let status = format!("{:?}", check.status).to_lowercase();
        csv.push_str(&format!(
            "{},{},{},{}\n",
            check.name,
            status,
            csv_quote(&fitted),
            csv_quote(&witness)
        ));
    }
    writer.write_text("assumptions.csv", &csv)?;
    writer.write_report("validate_report.json", &report)?;
    writer.finish()?;

    if report.all_pass() {
        println!("validate: all checks pass at budget {budget}");
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in report.failures() {
            if let Some(w) = &failure.witness {
                eprintln!(
                    "FAIL {}: {} (lhs = {:.6e}, rhs = {:.6e} at t = {:.4}, xi = {:.4}, x = {:.4}, y = {:.4})",
                    failure.name, w.inequality, w.lhs, w.rhs, w.t, w.xi, w.x, w.y
                );
            } else {
                eprintln!("FAIL {}", failure.name);
            }
        }
        Ok(ExitCode::from(2))
    }
}

#[derive(Serialize)]
struct SimulateReport {
    paths: usize,
    blowups: usize,
    stopped: usize,
    epsilon: f64,
    stopping_times: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    model: &ModelSpec,
    config: &mut FileConfig,
    x0: Option<String>,
    y0: Option<String>,
    eps: Option<f64>,
    paths: Option<usize>,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    if let Some(s) = x0 {
        config.experiment.x0 = s;
    }
    if let Some(s) = y0 {
        config.experiment.y0 = s;
    }
    if let Some(e) = eps {
        config.experiment.epsilon = e;
    }
    let n_paths = paths.unwrap_or(1);
    let epsilon = config.experiment.epsilon;
    let x0 = realize(&config.experiment.x0, model)?;
    let y0 = realize(&config.experiment.y0, model)?;
    let solver_cfg = config.solver_config();

    let run_manifest = RunManifest::new("simulate", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;

    let n_modes = model.basis.mode_count();
    let mut csv = String::from("path,time,component");
    for k in 1..=n_modes {
        csv.push_str(&format!(",mode_{k}"));
    }
    csv.push('\n');

    let mut blowups = 0;
    let mut stopped = 0;
    let mut stopping_times = Vec::new();
    for path in 0..n_paths as u64 {
        match solve_coupled(model, &x0, &y0, epsilon, &solver_cfg, manifest, path) {
            Ok((u, v)) => {
                if u.stopped() {
                    stopped += 1;
                }
                stopping_times.push(u.stopping_time);
                append_trajectory(&mut csv, path, "slow", &u);
                append_trajectory(&mut csv, path, "fast", &v);
            }
            Err(CoreError::BlowUp { .. }) => {
                blowups += 1;
                stopping_times.push(f64::NAN);
            }
            Err(e) => return Err(e.into()),
        }
    }
    writer.write_text("trajectory.csv", &csv)?;
    writer.write_report(
        "simulate_report.json",
        &SimulateReport {
            paths: n_paths,
            blowups,
            stopped,
            epsilon,
            stopping_times,
        },
    )?;
    writer.finish()?;
    println!("simulate: {n_paths} paths, {stopped} stopped, {blowups} blow-ups");
    if 2 * blowups > n_paths {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn append_trajectory(csv: &mut String, path: u64, component: &str, record: &TrajectoryRecord) {
    for (i, t) in record.times.iter().enumerate() {
        csv.push_str(&format!("{path},{t},{component}"));
        for c in record.states[i].coefficients() {
            csv.push_str(&format!(",{c}"));
        }
        csv.push('\n');
    }
}

#[derive(Serialize)]
struct AverageReport {
    coefficients: Vec<f64>,
    std_err_nodal: Vec<f64>,
    dropped: usize,
    total: usize,
    unreliable: bool,
    burn_in: f64,
    t_avg: f64,
    mixing_rate: f64,
}

fn cmd_average(
    model: &ModelSpec,
    config: &FileConfig,
    x: Option<String>,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let x_spec = x.unwrap_or_else(|| config.experiment.x0.clone());
    let x = realize(&x_spec, model)?;
    let exp_cfg = experiment_config(config)?;
    let (avg_cfg, rate) = resolve_averaging_config(model, &exp_cfg, manifest)?;
    let estimate = averaged_drift(model, &x, &avg_cfg, manifest)?;

    let run_manifest = RunManifest::new("average", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;
    let mut csv = String::from("node,xi,drift,std_err\n");
    let nodal = estimate.drift.nodal();
    for (m, &xi) in model.basis.node_positions().iter().enumerate() {
        csv.push_str(&format!(
            "{m},{xi},{},{}\n",
            nodal[m], estimate.std_err_nodal[m]
        ));
    }
    writer.write_text("drift.csv", &csv)?;
    writer.write_report(
        "average_report.json",
        &AverageReport {
            coefficients: estimate.drift.coefficients().to_vec(),
            std_err_nodal: estimate.std_err_nodal.clone(),
            dropped: estimate.dropped,
            total: estimate.total,
            unreliable: estimate.unreliable,
            burn_in: avg_cfg.burn_in,
            t_avg: avg_cfg.t_avg,
            mixing_rate: rate,
        },
    )?;
    writer.finish()?;
    println!(
        "average: drift estimated from {} members ({} dropped), max se {:.3e}",
        estimate.total,
        estimate.dropped,
        estimate.max_std_err()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_converge(
    model: &ModelSpec,
    config: &FileConfig,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let exp_cfg = experiment_config(config)?;
    let report = run_convergence(model, &exp_cfg, manifest)?;
    let run_manifest = RunManifest::new("converge", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;
    writer.write_text("converge_errors.csv", &report.errors_csv())?;
    writer.write_text("converge_summary.csv", &report.summary_csv())?;
    writer.write_report("converge_report.json", &report)?;
    writer.finish()?;
    let blowups: usize = report.cells.iter().map(|c| c.blowups).sum();
    let total = exp_cfg.paths * report.cells.len();
    for cell in &report.cells {
        println!(
            "converge: eps = {:<8} median = {:.4e} ({} blow-ups)",
            cell.epsilon, cell.median, cell.blowups
        );
    }
    if 2 * blowups > total {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mix(
    model: &ModelSpec,
    config: &FileConfig,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let exp_cfg = experiment_config(config)?;
    let report = run_mixing(model, &exp_cfg, manifest)?;
    let run_manifest = RunManifest::new("mix", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;
    writer.write_text("mixing.csv", &report.csv())?;
    writer.write_report("mixing_report.json", &report)?;
    writer.finish()?;
    println!(
        "mix: delta = {:.4} with 95% CI ({:.4}, {:.4}), reference {:.4}",
        report.delta_hat, report.ci.0, report.ci.1, report.reference_rate
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_moments(
    model: &ModelSpec,
    config: &FileConfig,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let exp_cfg = experiment_config(config)?;
    let report = run_moments(model, &exp_cfg, manifest)?;
    let run_manifest = RunManifest::new("moments", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;
    writer.write_text("moments.csv", &report.csv())?;
    writer.write_report("moments_report.json", &report)?;
    writer.finish()?;
    for band in &report.bands {
        println!(
            "moments: p = {} in [{:.3e}, {:.3e}], factor-2 band {}",
            band.p,
            band.min_moment,
            band.max_moment,
            if band.within_band { "ok" } else { "violated" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_khasminskii(
    model: &ModelSpec,
    config: &FileConfig,
    manifest: &SeedManifest,
    out_dir: PathBuf,
) -> Result<ExitCode> {
    let exp_cfg = experiment_config(config)?;
    let report = run_khasminskii(model, &exp_cfg, manifest)?;
    let run_manifest = RunManifest::new("khasminskii", manifest.master_seed, config)?;
    let mut writer = OutputWriter::new(out_dir, run_manifest)?;
    writer.write_text("khasminskii.csv", &report.csv())?;
    writer.write_report("khasminskii_report.json", &report)?;
    writer.finish()?;
    for cell in &report.cells {
        println!(
            "khasminskii: eps = {:<8} delta = {:.4} sup E||v_hat - v||^2 = {:.4e}",
            cell.epsilon, cell.delta, cell.sup_mean_sq
        );
    }
    println!(
        "khasminskii: decreasing with CI separation: {}",
        report.decreasing_with_separation
    );
    Ok(ExitCode::SUCCESS)
}
