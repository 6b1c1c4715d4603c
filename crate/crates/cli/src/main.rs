use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use beaconloc::bench::{self, BenchError, ExperimentConfig, ReportFormat};
use beaconloc::env::{load_map, save_map, Preset};
use beaconloc::sim::{save_trajectory, SimError, Trajectory, TrajectorySpec};
use beaconloc::Environment64;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beaconloc", version, about = "Beacon-based planar localization: maps, trajectories, filter benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a preset environment to a map file.
    GenMap {
        #[arg(long)]
        preset: Preset,
        /// Remove one tile so the world loses its translation symmetry.
        #[arg(long)]
        nonsymmetric: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate ground-truth trajectories with measurements.
    Simulate {
        /// Map file or preset name.
        #[arg(long)]
        map: String,
        #[arg(long = "T", default_value_t = 100)]
        steps: usize,
        #[arg(long = "n-traj", default_value_t = 1)]
        n_traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment grid and write results.json and runs.csv.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured worker count.
        #[arg(long, env = "BEACONLOC_WORKERS")]
        workers: Option<usize>,
        /// 10000 trajectories and particle counts up to 10000.
        #[arg(long)]
        full_scale: bool,
    },
    /// Render the accuracy and runtime grids of a results directory.
    Report {
        results: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

/// Failures caused by the invocation rather than by the run.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenMap { preset, nonsymmetric, seed, out } => {
            let env: Environment64 = preset.build(nonsymmetric, seed)?;
            save_map(&env, &out)?;
            log::info!("wrote {} to {}", env.name(), out.display());
        }
        Command::Simulate { map, steps, n_traj, seed, k, out } => simulate(&map, steps, n_traj, seed, k, &out)?,
        Command::Bench { config, out, workers, full_scale } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| match e {
                BenchError::Io { path, source } => UsageError(format!("cannot read config {}: {source}", path.display())),
                other => UsageError(format!("{}: {other}", config.display())),
            })?;
            if full_scale {
                cfg = cfg.full_scale();
            }
            if let Some(w) = workers {
                if w == 0 {
                    return Err(UsageError("--workers must be at least 1".into()).into());
                }
                cfg.workers = w;
            }
            resolve_map_path(&mut cfg, &config);
            let output = bench::run_experiment(&cfg)?;
            bench::write_outputs(&out, &output)?;
            log::info!("wrote {} cells to {}", output.report.rows.len(), out.display());
        }
        Command::Report { results, format } => {
            let report = bench::read_report(&results)?;
            if report.rows.is_empty() {
                anyhow::bail!("no result rows in {}", results.display());
            }
            print!("{}", bench::render_report(&report, format));
        }
    }
    Ok(())
}

/// Map paths in a config are relative to the config file.
fn resolve_map_path(cfg: &mut ExperimentConfig, config: &Path) {
    if cfg.map.parse::<Preset>().is_ok() || Path::new(&cfg.map).is_absolute() {
        return;
    }
    if let Some(dir) = config.parent() {
        let candidate = dir.join(&cfg.map);
        if candidate.exists() {
            cfg.map = candidate.display().to_string();
        }
    }
}

fn simulate(map: &str, steps: usize, n_traj: usize, seed: u64, k: usize, out: &Path) -> anyhow::Result<()> {
    let env: Environment64 = match map.parse::<Preset>() {
        Ok(preset) => preset.build(false, seed)?,
        Err(_) => {
            if !Path::new(map).exists() {
                return Err(UsageError(format!("map file {map} does not exist")).into());
            }
            load_map(map)?
        }
    };
    if steps == 0 || n_traj == 0 {
        return Err(UsageError("--T and --n-traj must be at least 1".into()).into());
    }
    let spec = TrajectorySpec { steps, k_measure: k, ..TrajectorySpec::default() };
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let width = (n_traj - 1).to_string().len().max(4);
    let mut rejected = 0;
    for i in 0..n_traj {
        let traj_seed = bench::trajectory_seed(seed, i as u64);
        match Trajectory::from_seed(&env, &spec, traj_seed) {
            Ok(traj) => {
                let path = out.join(format!("traj_{i:0width$}.csv"));
                save_trajectory(&traj, &path).with_context(|| format!("cannot write {}", path.display()))?;
            }
            Err(SimError::Trapped { .. }) => {
                rejected += 1;
                log::warn!("trajectory {i} rejected: object trapped");
            }
            Err(e) => return Err(e.into()),
        }
    }
    log::info!("wrote {} trajectories to {} ({rejected} rejected)", n_traj - rejected, out.display());
    Ok(())
}
