//! Command-line front end for the Monte Carlo tracking benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use gmeefp_ckf::experiments::{
    run_monte_carlo, steady_msd, sweep, write_manifest, write_msd_curves, write_sweep,
    ExperimentConfig, MsdCurve, SweepSpec,
};
use gmeefp_ckf::state_space::{make_cv_model, simulate};
use gmeefp_ckf::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gmeefp-ckf",
    version,
    about = "Robust cubature Kalman filtering benchmark: simulate trajectories, run Monte Carlo campaigns, sweep criterion parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration; the built-in tracking scenario is used
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the Monte Carlo runs; defaults to all cores.
    /// Results are identical at any worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit one simulated trajectory as CSV.
    Simulate(CommonArgs),
    /// Run the Monte Carlo campaign over the configured filters.
    Run(CommonArgs),
    /// Sweep criterion parameters over the configured grid.
    Sweep(CommonArgs),
    /// Run all configured filters and print a steady-MSD comparison table.
    Compare(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Simulate(c) | Command::Run(c) | Command::Sweep(c) | Command::Compare(c) => c,
    };
    match dispatch(&cli.command, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownPreset(_) => ExitCode::from(2),
                Error::Io(_) => ExitCode::from(1),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn dispatch(command: &Command, common: &CommonArgs) -> Result<()> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    std::fs::create_dir_all(&common.out)?;

    match command {
        Command::Simulate(_) => cmd_simulate(&cfg, &common.out),
        Command::Run(_) => with_pool(common.workers, || cmd_run(&cfg, &common.out, false)),
        Command::Compare(_) => with_pool(common.workers, || cmd_run(&cfg, &common.out, true)),
        Command::Sweep(_) => with_pool(common.workers, || cmd_sweep(&cfg, &common.out)),
    }
}

fn with_pool<F>(workers: Option<usize>, f: F) -> Result<()>
where
    F: FnOnce() -> Result<()> + Send,
{
    match workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = make_cv_model(cfg.dt, cfg.q_var, cfg.r_nominal)?;
    let x0 = DVector::from_vec(cfg.x0.clone());
    let traj = simulate(
        &model,
        &cfg.process_noise,
        &cfg.measurement_noise,
        &x0,
        cfg.steps,
        cfg.master_seed,
    )?;
    let path = out.join("trajectory.csv");
    let file = std::fs::File::create(&path)?;
    traj.write_csv(file)?;
    println!("wrote {} ({} steps)", path.display(), traj.len());
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig, out: &Path, compare: bool) -> Result<()> {
    let curves = run_monte_carlo(cfg)?;
    write_campaign_outputs(cfg, out, &curves)?;
    if compare {
        print_comparison(cfg, &curves)?;
    } else {
        for curve in &curves {
            let steady = steady_msd(curve, cfg.steady_window)?;
            println!("{:>12}  steady MSD {:7.2} dB", curve.filter, steady);
        }
    }
    println!("wrote {}", out.join("msd_curves.csv").display());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let grid = cfg.sweep.clone().unwrap_or_else(default_sweep_grid);
    let table = sweep(cfg, &grid)?;
    write_sweep(&out.join("sweep.csv"), &table)?;
    write_msd_curves(&out.join("msd_curves.csv"), &table.curves)?;
    write_manifest(
        &out.join("manifest.toml"),
        &cfg.to_toml_string(),
        cfg.master_seed,
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;

    println!("{:>7} {:>7} {:>7} {:>12} {:>7} {:>14}", "alpha2", "beta2", "lambda", "steady_db", "failed", "fallback_rate");
    for cell in &table.cells {
        println!(
            "{:>7} {:>7} {:>7} {:>12.2} {:>7} {:>14.4}",
            cell.alpha2, cell.beta2, cell.lambda, cell.steady_msd_db, cell.failed, cell.fallback_rate
        );
    }
    if table.cells.iter().all(|c| c.failed) {
        return Err(Error::Domain("every sweep cell failed".to_string()));
    }
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}

fn default_sweep_grid() -> SweepSpec {
    SweepSpec {
        base: "gmeefp".to_string(),
        alpha2: vec![2.0, 2.2, 2.4, 2.6, 2.8, 3.2, 4.0],
        beta2: vec![1.0, 2.0, 4.0, 6.0, 8.0],
        lambda: Vec::new(),
    }
}

fn write_campaign_outputs(cfg: &ExperimentConfig, out: &Path, curves: &[MsdCurve]) -> Result<()> {
    write_msd_curves(&out.join("msd_curves.csv"), curves)?;
    write_manifest(
        &out.join("manifest.toml"),
        &cfg.to_toml_string(),
        cfg.master_seed,
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string())?;
    Ok(())
}

fn print_comparison(cfg: &ExperimentConfig, curves: &[MsdCurve]) -> Result<()> {
    println!(
        "{:>12} {:>12} {:>12} {:>14} {:>10}",
        "filter", "steady_db", "final_db", "fallback_rate", "diverged"
    );
    for curve in curves {
        let steady = steady_msd(curve, cfg.steady_window)?;
        println!(
            "{:>12} {:>12.2} {:>12.2} {:>14.4} {:>10}",
            curve.filter,
            steady,
            curve.msd_db.last().copied().unwrap_or(f64::NAN),
            curve.fallback_rate(),
            curve.diverged_runs,
        );
    }
    Ok(())
}
