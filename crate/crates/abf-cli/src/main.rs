//! `abf` — run orchestration for the bi-channel adaptive biasing force lab.

mod config;
mod pipeline;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "abf",
    about = "Bi-channel adaptive biasing force laboratory",
    long_about = "Simulates the bi-channel ABF model as a particle system and as a \
                  nonlinear Fokker-Planck grid solver, computes the entropy diagnostics, \
                  and checks the measured decay against the spectral-gap rate prediction."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (flat key-value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in scenario preset.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (overrides [output] dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for the particle path (overrides [sde] seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural hypothesis (channel equality outside the exclusion).
    Validate,
    /// Emit the reference free energy and mean force (reference.csv).
    Reference,
    /// Run the grid solver and emit density/bias/entropy CSVs.
    SolvePde,
    /// Run the particle ensemble and emit bin tables and histograms.
    SimulateSde,
    /// Compute entropy identities and decay-rate fits from a finished solve.
    Diagnose,
    /// Assemble the operator, its gap, the LSI estimate and the rate prediction.
    Spectral,
    /// Recompute the summary verdict from the emitted CSVs alone.
    Report,
    /// Full pipeline: validate, reference, solve, diagnose, spectral, verdict.
    Run,
}

fn load_config(cli: &Cli) -> Result<config::RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => config::parse_config(path)?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => bail!("need --config <path> or --preset <name>"),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Report => {
            // report only needs the output directory
            let out = match (&cli.out, &cli.config, &cli.preset) {
                (Some(out), _, _) => out.clone(),
                _ => PathBuf::from(load_config(cli)?.out_dir),
            };
            return pipeline::cmd_report(&out);
        }
        _ => {}
    }
    let cfg = load_config(cli)?;
    let out = PathBuf::from(&cfg.out_dir);
    match &cli.command {
        Command::Validate => pipeline::cmd_validate(&cfg),
        Command::Reference => pipeline::cmd_reference(&cfg, &out),
        Command::SolvePde => {
            let art = pipeline::solve_pde(&cfg, &out)?;
            println!(
                "solved to t = {} at dt = {:.6e}; {} recorded times -> entropy.csv",
                cfg.t_end,
                art.dt,
                art.reports.len()
            );
            Ok(0)
        }
        Command::SimulateSde => {
            let run = pipeline::simulate_sde(&cfg, &out)?;
            println!(
                "simulated {} walkers to t = {} ({} switches); {} records",
                cfg.n_walkers,
                cfg.t_end,
                run.total_switches,
                run.records.len()
            );
            Ok(0)
        }
        Command::Diagnose => {
            let art = pipeline::solve_pde(&cfg, &out)?;
            let diag =
                pipeline::diagnose(&art.reports, art.hyp.r_const(), cfg.fit_window_fraction, &out)?;
            println!(
                "E_m rate {:.6} (R^2 = {:.6}) over [{:.3}, {:.3}]; identities: \
                 decomposition {:.2e}, channel excess {:.2e}",
                diag.em_fit.rate,
                diag.em_fit.r_squared,
                diag.em_fit.window.0,
                diag.em_fit.window.1,
                diag.identities.max_decomposition_gap,
                diag.identities.max_channel_excess
            );
            Ok(0)
        }
        Command::Spectral => {
            if cfg.beta_scan.is_some() {
                return pipeline::cmd_lsi_scan(&cfg, &out);
            }
            let system = cfg.system()?;
            let grid = cfg.grid(&system)?;
            let est = abf::spectral::lsi_estimate(&system, &grid)?;
            let rho = est.rho_lower.unwrap_or(est.rho_poincare);
            let initial = abf::DensityField::initial(&cfg.init, &system, &grid)?;
            let hyp = abf::model::estimate_constants(
                &system,
                &grid,
                &initial.marginal_x(&grid).values,
                Some(rho),
            )?;
            let op = abf::spectral::build_operator(&system, &grid)?;
            let gap = abf::spectral::spectral_gap(&op, 3)?;
            let pred = pipeline::spectral_artifacts(
                &cfg,
                &hyp.with_theta(gap.theta),
                &gap,
                system.lambda_rate(),
                cfg.remark2_mode(),
                &out,
            )?;
            println!(
                "theta = {:.6}, theta_min = {:.6}, Lambda = {:.6}, predicted rate = {:.6} \
                 ([H4] satisfied: {}); rho_poincare = {:.6}, rho_lower = {}",
                pred.theta,
                pred.theta_min,
                pred.lambda_theta,
                pred.predicted_rate,
                pred.h4_satisfied,
                est.rho_poincare,
                est.rho_lower
                    .map(|r| format!("{r:.6}"))
                    .unwrap_or_else(|| "unavailable".into()),
            );
            Ok(0)
        }
        Command::Run => pipeline::cmd_run(&cfg, &out),
        Command::Report => unreachable!(),
    }
}
