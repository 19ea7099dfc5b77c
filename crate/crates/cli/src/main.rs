//! `revstress` command-line interface.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use revstress::analytics::concentration;
use revstress::balance_sheet::{generate_synthetic, load_balance_sheets, write_balance_sheets, BalanceSheetSet};
use revstress::dynamics::{calibrate_beta, leverage_matrix, LeverageNetwork};
use revstress::experiments::{
    policy_curve, robustness, selective_stress, solve_uniform, sweep_cost, ExperimentReport,
    RobustnessParams, ShockSemantics, SweepGrid,
};
use revstress::reconstruction::{
    ras_reconstruct, read_exposures, write_exposures_with_meta, ExposureMatrix, ExposureMeta,
};
use serde_json::json;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] revstress::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("all {0} rows failed")]
    AllRowsFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use revstress::Error as E;
        match self {
            CliError::Core(E::SpectralNotConverged { .. }) => 3,
            CliError::Core(E::Infeasible { .. }) => 4,
            CliError::Core(_) | CliError::Config(_) => 2,
            CliError::NotConverged(_) | CliError::AllRowsFailed(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "revstress", version, about = "Reverse stress testing for interbank networks")]
struct Cli {
    /// JSON configuration file with flat keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Inputs {
    /// Balance-sheet CSV.
    #[arg(long)]
    balance_sheets: Option<PathBuf>,
    /// Exposure matrix CSV written by `reconstruct`.
    #[arg(long)]
    exposures: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct Scenario {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    loss: Option<f64>,
    /// Calibrate beta so that the spectral radius of beta·Λ equals this value.
    #[arg(long)]
    lambda_max: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct the exposure matrix from balance sheets.
    Reconstruct {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Solve for the minimum-norm worst-case shock.
    Solve {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: Scenario,
    },
    /// Cost and concentration over a (lambda_max, T, loss) grid.
    Sweep {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',')]
        lambda_max_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        loss_levels: Option<Vec<f64>>,
    },
    /// Losses when only a subset of banks is stressed.
    Selective {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        n_random: Option<usize>,
    },
    /// Targeted versus uniform capital injection.
    Policy {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, value_delimiter = ',')]
        lambda_max_values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        phis: Option<Vec<f64>>,
        /// Keep relative shocks fixed instead of absolute losses.
        #[arg(long)]
        fixed_relative: bool,
    },
    /// Ranking stability under equity noise.
    Robustness {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        n_sims: Option<usize>,
        #[arg(long)]
        perturbation: Option<f64>,
    },
    /// Write a synthetic balance-sheet CSV.
    Synth {
        #[arg(long)]
        banks: Option<usize>,
        #[arg(long)]
        size_scale: Option<f64>,
        #[arg(long)]
        heterogeneity: Option<f64>,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_inputs(cfg: &mut RunConfig, inputs: &Inputs) {
    if inputs.balance_sheets.is_some() {
        cfg.balance_sheets = inputs.balance_sheets.clone();
    }
    if inputs.exposures.is_some() {
        cfg.exposures = inputs.exposures.clone();
    }
}

fn apply_scenario(cfg: &mut RunConfig, s: &Scenario) {
    set(&mut cfg.horizon, s.horizon);
    set(&mut cfg.loss, s.loss);
    if s.lambda_max.is_some() {
        cfg.lambda_max = s.lambda_max;
    }
}

fn effective_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.out, cli.out.clone());
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::Reconstruct { inputs, tolerance, max_iterations } => {
            apply_inputs(&mut cfg, inputs);
            set(&mut cfg.ras_tolerance, *tolerance);
            set(&mut cfg.ras_max_iterations, *max_iterations);
        }
        Command::Solve { inputs, scenario } => {
            apply_inputs(&mut cfg, inputs);
            apply_scenario(&mut cfg, scenario);
        }
        Command::Sweep { inputs, lambda_max_values, horizons, loss_levels } => {
            apply_inputs(&mut cfg, inputs);
            set(&mut cfg.lambda_max_values, lambda_max_values.clone());
            set(&mut cfg.horizons, horizons.clone());
            set(&mut cfg.loss_levels, loss_levels.clone());
        }
        Command::Selective { inputs, scenario, fractions, n_random } => {
            apply_inputs(&mut cfg, inputs);
            apply_scenario(&mut cfg, scenario);
            set(&mut cfg.fractions, fractions.clone());
            set(&mut cfg.n_random, *n_random);
        }
        Command::Policy { inputs, scenario, lambda_max_values, phis, fixed_relative } => {
            apply_inputs(&mut cfg, inputs);
            apply_scenario(&mut cfg, scenario);
            set(&mut cfg.lambda_max_values, lambda_max_values.clone());
            set(&mut cfg.phis, phis.clone());
            if *fixed_relative {
                cfg.shock_semantics = ShockSemantics::FixedRelative;
            }
        }
        Command::Robustness { inputs, scenario, n_sims, perturbation } => {
            apply_inputs(&mut cfg, inputs);
            apply_scenario(&mut cfg, scenario);
            set(&mut cfg.n_sims, *n_sims);
            set(&mut cfg.perturbation, *perturbation);
        }
        Command::Synth { banks, size_scale, heterogeneity } => {
            set(&mut cfg.banks, *banks);
            set(&mut cfg.size_scale, *size_scale);
            set(&mut cfg.heterogeneity, *heterogeneity);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_json(cfg: &RunConfig, command: &str) -> serde_json::Value {
    let mut value = serde_json::to_value(cfg).expect("config serializes");
    value["command"] = json!(command);
    value
}

fn create_out(cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| {
        CliError::Config(format!("cannot create output directory {}: {e}", cfg.out.display()))
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(revstress::Error::from)?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn stamp() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
        .to_string()
}

fn load_inputs(cfg: &RunConfig) -> CliResult<(BalanceSheetSet, ExposureMatrix)> {
    let set = load_balance_sheets(cfg.require_balance_sheets()?)?;
    let exposures = read_exposures(cfg.require_exposures()?)?;
    if exposures.len() != set.len() {
        return Err(CliError::Config(format!(
            "exposure matrix has {} banks, balance sheets {}",
            exposures.len(),
            set.len()
        )));
    }
    Ok((set, exposures))
}

/// `beta = 1` unless `lambda_max` asks for a calibration.
fn network_for(lambda: ndarray::Array2<f64>, lambda_max: Option<f64>) -> CliResult<LeverageNetwork> {
    Ok(match lambda_max {
        Some(target) => calibrate_beta(lambda, target)?,
        None => LeverageNetwork::new(lambda, 1.0)?,
    })
}

fn finish_report(mut report: ExperimentReport, cfg: &RunConfig, command: &str) -> CliResult<()> {
    report.set_meta("config", config_json(cfg, command));
    report.set_meta("seed", cfg.seed);
    let (csv, meta) = report.write(&cfg.out, &stamp())?;
    let failed = report.failed_rows();
    println!("wrote {} and {}", csv.display(), meta.display());
    if failed > 0 {
        eprintln!("{failed} of {} rows failed", report.rows.len());
    }
    if !report.rows.is_empty() && failed == report.rows.len() {
        return Err(CliError::AllRowsFailed(failed));
    }
    Ok(())
}

fn cmd_reconstruct(cfg: &RunConfig) -> CliResult<()> {
    let set = load_balance_sheets(cfg.require_balance_sheets()?)?;
    let matrix = ras_reconstruct(&set, cfg.ras_tolerance, cfg.ras_max_iterations)?;
    create_out(cfg)?;
    let path = cfg.out.join("exposures.csv");
    let mut meta = ExposureMeta::from_matrix(&matrix);
    meta.config = Some(config_json(cfg, "reconstruct"));
    write_exposures_with_meta(&matrix, &path, meta)?;
    println!(
        "wrote {} ({} iterations, residual {:e})",
        path.display(),
        matrix.iterations,
        matrix.residual
    );
    if !matrix.converged {
        return Err(CliError::NotConverged(format!(
            "RAS did not reach tolerance {:e} within {} iterations (residual {:e})",
            cfg.ras_tolerance, cfg.ras_max_iterations, matrix.residual
        )));
    }
    Ok(())
}

fn cmd_solve(cfg: &RunConfig) -> CliResult<()> {
    let (set, exposures) = load_inputs(cfg)?;
    let network = network_for(leverage_matrix(&exposures, &set)?, cfg.lambda_max)?;
    let solution = solve_uniform(&network, cfg.horizon, cfg.loss, &cfg.solver_options())?;
    let report = concentration(&solution);
    create_out(cfg)?;
    write_json(&cfg.out.join("solution.json"), &solution.to_json())?;
    report.write_csv(cfg.out.join("concentration.csv"))?;
    let meta = json!({
        "config": config_json(cfg, "solve"),
        "beta": network.beta,
        "lambda_max": network.spectral_radius,
        "converged": solution.converged,
        "iterations": solution.iterations,
        "kkt": solution.kkt,
        "ipr": report.ipr,
    });
    write_json(&cfg.out.join("solution.meta.json"), &meta)?;
    println!("K = {}", solution.cost);
    println!("IPR = {}", report.ipr);
    if !solution.converged {
        return Err(CliError::NotConverged(format!(
            "solver stopped after {} iterations without meeting tolerance",
            solution.iterations
        )));
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let grid = SweepGrid {
        lambda_max_values: cfg.lambda_max_values.clone(),
        horizons: cfg.horizons.clone(),
        loss_levels: cfg.loss_levels.clone(),
    };
    grid.validate()?;
    let (set, exposures) = load_inputs(cfg)?;
    let lambda = leverage_matrix(&exposures, &set)?;
    let report = sweep_cost(&lambda, &grid, &cfg.solver_options())?;
    create_out(cfg)?;
    finish_report(report, cfg, "sweep")
}

fn cmd_selective(cfg: &RunConfig) -> CliResult<()> {
    let (set, exposures) = load_inputs(cfg)?;
    let network = network_for(leverage_matrix(&exposures, &set)?, cfg.lambda_max)?;
    let solution = solve_uniform(&network, cfg.horizon, cfg.loss, &cfg.solver_options())?;
    let n = set.len();
    let fractions = if cfg.fractions.is_empty() {
        (0..=n).map(|k| k as f64 / n as f64).collect()
    } else {
        cfg.fractions.clone()
    };
    let curve = selective_stress(&network, &solution, &fractions, cfg.n_random, cfg.seed)?;
    let mut report = ExperimentReport::new(
        "selective",
        &["fraction", "stressed", "loss_ratio_topk", "loss_ratio_random_mean"],
    );
    for p in &curve {
        report.push(vec![
            p.fraction,
            p.stressed as f64,
            p.loss_ratio_topk,
            p.loss_ratio_random_mean,
        ]);
    }
    report.set_meta("beta", network.beta);
    create_out(cfg)?;
    finish_report(report, cfg, "selective")
}

fn cmd_policy(cfg: &RunConfig) -> CliResult<()> {
    if cfg.lambda_max_values.is_empty() || cfg.phis.is_empty() {
        return Err(CliError::Config("policy grid is empty".into()));
    }
    if cfg.lambda_max_values.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(CliError::Config("lambda_max values must be > 0".into()));
    }
    let (set, exposures) = load_inputs(cfg)?;
    let lambda = leverage_matrix(&exposures, &set)?;
    let options = cfg.solver_options();
    let results: Vec<_> = cfg
        .lambda_max_values
        .par_iter()
        .map(|&target| -> revstress::Result<_> {
            let network = calibrate_beta(lambda.clone(), target)?;
            let solution = solve_uniform(&network, cfg.horizon, cfg.loss, &options)?;
            let curve = policy_curve(
                &set,
                &exposures,
                &solution,
                network.beta,
                &cfg.phis,
                cfg.shock_semantics,
            )?;
            Ok((network.beta, curve))
        })
        .collect();

    let mut report = ExperimentReport::new(
        "policy",
        &["lambda_max", "phi", "beta", "ratio_targeted", "ratio_uniform"],
    );
    for (&target, result) in cfg.lambda_max_values.iter().zip(results) {
        match result {
            Ok((beta, curve)) => {
                for p in curve {
                    report.push(vec![target, p.phi, beta, p.ratio_targeted, p.ratio_uniform]);
                }
            }
            Err(e) => {
                for &phi in &cfg.phis {
                    report.push_error(vec![target, phi], e.to_string());
                }
            }
        }
    }
    report.set_meta("shock_semantics", cfg.shock_semantics);
    create_out(cfg)?;
    finish_report(report, cfg, "policy")
}

fn cmd_robustness(cfg: &RunConfig) -> CliResult<()> {
    let (set, exposures) = load_inputs(cfg)?;
    let baseline = network_for(leverage_matrix(&exposures, &set)?, cfg.lambda_max)?;
    let params = RobustnessParams {
        beta: baseline.beta,
        horizon: cfg.horizon,
        n_sims: cfg.n_sims,
        perturbation: cfg.perturbation,
        seed: cfg.seed,
    };
    let thresholds = vec![cfg.loss; set.len()];
    let result = robustness(&set, &exposures, &thresholds, &params, &cfg.solver_options())?;

    let mut report = ExperimentReport::new(
        "robustness",
        &["bank_id", "baseline_rank", "min_rank", "max_rank"],
    );
    let mut baseline_rank = vec![0usize; set.len()];
    for (pos, &bank) in result.rankings[0].iter().enumerate() {
        baseline_rank[bank] = pos + 1;
    }
    for (bank, &(lo, hi)) in result.stability.per_bank_ranges.iter().enumerate() {
        report.push(vec![
            bank as f64,
            baseline_rank[bank] as f64,
            (lo + 1) as f64,
            (hi + 1) as f64,
        ]);
    }
    report.set_meta("beta", params.beta);
    report.set_meta("beta_handling", "held fixed at baseline calibration");
    report.set_meta("max_abs_rank_change", result.stability.max_abs_change);
    report.set_meta("mean_abs_rank_change", result.stability.mean_abs_change);
    report.set_meta("failures", result.failures);
    report.set_meta("failure_messages", &result.failure_messages);
    println!(
        "max rank change {}, mean {:.4}, {} failed simulations",
        result.stability.max_abs_change, result.stability.mean_abs_change, result.failures
    );
    create_out(cfg)?;
    finish_report(report, cfg, "robustness")?;
    if cfg.n_sims > 0 && result.failures == cfg.n_sims {
        return Err(CliError::AllRowsFailed(result.failures));
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let set = generate_synthetic(cfg.banks, cfg.size_scale, cfg.heterogeneity, cfg.seed)?;
    create_out(cfg)?;
    let path = cfg.out.join("balance_sheets.csv");
    write_balance_sheets(&set, &path)?;
    write_json(&cfg.out.join("balance_sheets.meta.json"), &json!({ "config": config_json(cfg, "synth") }))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = effective_config(cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Reconstruct { .. } => cmd_reconstruct(&cfg),
        Command::Solve { .. } => cmd_solve(&cfg),
        Command::Sweep { .. } => cmd_sweep(&cfg),
        Command::Selective { .. } => cmd_selective(&cfg),
        Command::Policy { .. } => cmd_policy(&cfg),
        Command::Robustness { .. } => cmd_robustness(&cfg),
        Command::Synth { .. } => cmd_synth(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
