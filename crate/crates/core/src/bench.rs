//! Experiment orchestration: paired runs of every filter cell on shared
//! trajectories, aggregation, result files and report rendering.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{load_map, EnvError, Environment, Preset};
use crate::filters::{FilterConfig, FilterError, FilterKind, NoiseSetting};
use crate::metrics::{aggregate, mse_random_threshold, AggregateRow, CellMeta, MetricsError, RunSummary};
use crate::sim::{run_filter, SimError, Trajectory, TrajectorySpec};

pub const RESULTS_FILE: &str = "results.json";
pub const RUNS_FILE: &str = "runs.csv";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no results in {0}")]
    NoResults(PathBuf),
}

/// Particle counts to run for one filter kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub particles: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resample_every_step: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roughening: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_measurement_noise: Option<bool>,
}

fn default_settings() -> Vec<NoiseSetting> {
    vec![NoiseSetting::Sigma, NoiseSetting::FourSigma]
}
fn default_trajectories() -> usize {
    500
}
fn default_steps() -> usize {
    100
}
fn default_workers() -> usize {
    1
}
fn default_k() -> usize {
    5
}
fn default_speed() -> [f64; 2] {
    [0.0, 0.5]
}
fn default_q_samples() -> usize {
    crate::filters::DEFAULT_Q_SAMPLES
}

/// An experiment grid. Read from TOML.
///
/// `workers` only affects scheduling and is left out of the echo written
/// to result files, which therefore do not depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name (`world10`, `World18`, `WORLD27`, `labyrinth`) or map file path.
    pub map: String,
    #[serde(default)]
    pub nonsymmetric: bool,
    #[serde(default)]
    pub map_seed: u64,
    pub filters: Vec<FilterSpec>,
    #[serde(default = "default_settings")]
    pub settings: Vec<NoiseSetting>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
    #[serde(default = "default_k")]
    pub k_measure: usize,
    #[serde(default = "default_speed")]
    pub speed_range: [f64; 2],
    #[serde(default = "default_q_samples")]
    pub q_samples: usize,
    /// Zero all wall times and omit the timestamp so that result files are
    /// byte-identical across runs.
    #[serde(default)]
    pub reproducible: bool,
    /// `[PF N, MKF N]` pairs reported side by side with total runtimes.
    #[serde(default)]
    pub runtime_pairs: Vec<[usize; 2]>,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 500 trajectories of 100 steps, both noise
    /// settings, particle grid {100, 500, 1000, 4000} for PF and MKF.
    pub fn desk(map: impl Into<String>) -> Self {
        let grid = vec![100, 500, 1000, 4000];
        Self {
            map: map.into(),
            nonsymmetric: false,
            map_seed: 0,
            filters: [FilterKind::Pf, FilterKind::Mkf]
                .into_iter()
                .map(|kind| FilterSpec {
                    kind,
                    particles: grid.clone(),
                    resample_every_step: None,
                    roughening: None,
                    predicted_measurement_noise: None,
                })
                .collect(),
            settings: default_settings(),
            trajectories: default_trajectories(),
            steps: default_steps(),
            seed: 0,
            workers: default_workers(),
            k_measure: default_k(),
            speed_range: default_speed(),
            q_samples: default_q_samples(),
            reproducible: false,
            runtime_pairs: vec![],
        }
    }

    /// Scales the grid up to 10000 trajectories and up to 10000 particles.
    pub fn full_scale(mut self) -> Self {
        self.trajectories = 10_000;
        for f in &mut self.filters {
            if !f.particles.contains(&10_000) {
                f.particles.push(10_000);
            }
        }
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.into(), source })?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| BenchError::Parse { path: path.into(), reason: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: String| Err(BenchError::Config(m));
        if self.trajectories == 0 || self.steps == 0 || self.workers == 0 {
            return fail("trajectories, steps and workers must be at least 1".into());
        }
        if self.filters.is_empty() || self.settings.is_empty() {
            return fail("at least one filter and one noise setting are required".into());
        }
        if let Some(f) = self.filters.iter().find(|f| f.particles.is_empty() || f.particles.contains(&0)) {
            return fail(format!("filter `{}` needs particle counts of at least 1", f.kind));
        }
        if self.runtime_pairs.iter().any(|p| p[0] == 0 || p[1] == 0) {
            return fail("runtime pairs need particle counts of at least 1".into());
        }
        let [lo, hi] = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return fail(format!("invalid speed range [{lo}, {hi}]"));
        }
        if self.k_measure == 0 || self.q_samples < 2 {
            return fail("k_measure must be at least 1 and q_samples at least 2".into());
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment<f64>, BenchError> {
        match self.map.parse::<Preset>() {
            Ok(preset) => Ok(preset.build(self.nonsymmetric, self.map_seed)?),
            Err(_) => {
                let env = load_map(Path::new(&self.map))?;
                Ok(if self.nonsymmetric { crate::env::make_nonsymmetric(&env, 0)? } else { env })
            }
        }
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec<f64> {
        TrajectorySpec {
            steps: self.steps,
            speed_range: (self.speed_range[0], self.speed_range[1]),
            k_measure: self.k_measure,
            ..TrajectorySpec::default()
        }
    }

    /// Every `(filter, N, setting)` cell, each once, in configuration order;
    /// runtime pairs are appended.
    pub fn cells(&self) -> Vec<Cell> {
        let mut seen = BTreeSet::new();
        let mut cells = Vec::new();
        let mut push = |cell: Cell| {
            if seen.insert((cell.kind, cell.particles, cell.setting)) {
                cells.push(cell);
            }
        };
        for spec in &self.filters {
            for &particles in &spec.particles {
                for &setting in &self.settings {
                    push(Cell { kind: spec.kind, particles, setting, options: FilterOptions::from(spec) });
                }
            }
        }
        let setting = self.settings[0];
        for &[pf, mkf] in &self.runtime_pairs {
            for (kind, particles) in [(FilterKind::Pf, pf), (FilterKind::Mkf, mkf)] {
                let options = self.filters.iter().find(|f| f.kind == kind).map(FilterOptions::from).unwrap_or_default();
                push(Cell { kind, particles, setting, options });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterOptions {
    pub resample_every_step: Option<bool>,
    pub roughening: Option<bool>,
    pub predicted_measurement_noise: Option<bool>,
}

impl From<&FilterSpec> for FilterOptions {
    fn from(f: &FilterSpec) -> Self {
        Self {
            resample_every_step: f.resample_every_step,
            roughening: f.roughening,
            predicted_measurement_noise: f.predicted_measurement_noise,
        }
    }
}

/// One `(filter, N, setting)` combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub kind: FilterKind,
    pub particles: usize,
    pub setting: NoiseSetting,
    pub options: FilterOptions,
}

impl Cell {
    pub fn filter_config(&self, cfg: &ExperimentConfig) -> FilterConfig<f64> {
        let mut fc = FilterConfig::new(self.particles, self.setting);
        fc.k_measure = cfg.k_measure;
        fc.q_samples = cfg.q_samples;
        if let Some(v) = self.options.resample_every_step {
            fc.resample_every_step = v;
        }
        if let Some(v) = self.options.roughening {
            fc.roughening = v;
        }
        fc.predicted_measurement_noise = self.options.predicted_measurement_noise;
        fc
    }

    /// Stable stream identifier of the cell's filter randomness.
    fn stream(&self) -> u64 {
        let kind = match self.kind {
            FilterKind::Pf => 1u64,
            FilterKind::Mkf => 2,
            FilterKind::Ekf => 3,
        };
        let setting = match self.setting {
            NoiseSetting::Sigma => 0u64,
            NoiseSetting::FourSigma => 1,
        };
        (kind << 48) | (setting << 40) | self.particles as u64
    }
}

/// Seed of trajectory `index`: the first word of stream `index` of the
/// master generator.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Generator of one cell's filter run on one trajectory. Trajectory
/// generation uses stream 0 of the same key.
pub fn filter_rng(traj_seed: u64, cell: &Cell) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(traj_seed);
    rng.set_stream(cell.stream());
    rng
}

/// One filter run in the per-run dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub traj_id: usize,
    pub filter: FilterKind,
    #[serde(rename = "N")]
    pub particles: usize,
    pub setting: NoiseSetting,
    pub mse: f64,
    pub fse: f64,
    pub time_s: f64,
    pub traj_seed: u64,
    pub skipped_updates: u64,
    pub weight_resets: u64,
}

/// Total runtime of one cell next to its accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub env: String,
    pub filter: FilterKind,
    #[serde(rename = "N")]
    pub particles: usize,
    #[serde(rename = "FSE")]
    pub fse: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    pub hardware: String,
}

impl Provenance {
    fn current(reproducible: bool) -> Self {
        let timestamp_unix = if reproducible {
            None
        } else {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix,
            hardware: format!("{}-{}, {} logical cpus", std::env::consts::OS, std::env::consts::ARCH, cpus),
        }
    }
}

/// Everything written to the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub environment: String,
    pub rows: Vec<AggregateRow>,
    #[serde(default)]
    pub runtime: Vec<RuntimeRow>,
    pub rejected_trajectories: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub records: Vec<RunRecord>,
}

enum TrajectoryOutcome {
    Rejected,
    Done(Vec<RunRecord>),
}

/// Runs every cell on every trajectory (paired design).
///
/// Trajectory `i` is generated once from [`trajectory_seed`]`(seed, i)`;
/// each cell then filters it with its own generator stream. Work is spread
/// over `workers` threads and collected by index, so results do not depend
/// on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, BenchError> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let cells = cfg.cells();
    let configs: Vec<FilterConfig<f64>> = cells.iter().map(|c| c.filter_config(cfg)).collect();
    for fc in &configs {
        fc.check_environment(&env)?;
    }
    let spec = cfg.trajectory_spec();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let done = AtomicUsize::new(0);
    let report_every = (cfg.trajectories / 10).max(1);
    log::info!(
        "{}: {} trajectories x {} cells on {} worker(s)",
        env.name(),
        cfg.trajectories,
        cells.len(),
        cfg.workers
    );

    let outcomes: Vec<Result<TrajectoryOutcome, BenchError>> = pool.install(|| {
        (0..cfg.trajectories)
            .into_par_iter()
            .map(|i| {
                let out = run_trajectory(cfg, &env, &spec, &cells, &configs, i);
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_multiple_of(report_every) || n == cfg.trajectories {
                    log::info!("{n}/{} trajectories", cfg.trajectories);
                }
                out
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut rejected = 0;
    for outcome in outcomes {
        match outcome? {
            TrajectoryOutcome::Rejected => rejected += 1,
            TrajectoryOutcome::Done(r) => records.extend(r),
        }
    }
    if rejected > 0 {
        log::warn!("{rejected} trajectories rejected (object trapped)");
    }
    if cfg.reproducible {
        records.iter_mut().for_each(|r| r.time_s = 0.0);
    }

    let mse_random = mse_random_threshold(env.width(), env.height());
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        let runs: Vec<RunSummary> = records
            .iter()
            .filter(|r| r.filter == cell.kind && r.particles == cell.particles && r.setting == cell.setting)
            .map(|r| RunSummary {
                mse: r.mse,
                fse: r.fse,
                wall_time: r.time_s,
                incidents: crate::filters::Incidents {
                    skipped_updates: r.skipped_updates,
                    weight_resets: r.weight_resets,
                },
            })
            .collect();
        if runs.is_empty() {
            continue;
        }
        let meta = CellMeta {
            environment: env.name().to_string(),
            filter: cell.kind,
            particles: cell.particles,
            setting: cell.setting,
        };
        rows.push(aggregate(&runs, &meta, mse_random)?);
    }
    let runtime = runtime_rows(cfg, &rows);
    let report = RunReport {
        config: cfg.clone(),
        environment: env.name().to_string(),
        rows,
        runtime,
        rejected_trajectories: rejected,
        provenance: Provenance::current(cfg.reproducible),
    };
    Ok(ExperimentOutput { report, records })
}

fn run_trajectory(
    cfg: &ExperimentConfig,
    env: &Environment<f64>,
    spec: &TrajectorySpec<f64>,
    cells: &[Cell],
    configs: &[FilterConfig<f64>],
    index: usize,
) -> Result<TrajectoryOutcome, BenchError> {
    let seed = trajectory_seed(cfg.seed, index as u64);
    let traj = match Trajectory::from_seed(env, spec, seed) {
        Ok(t) => t,
        Err(SimError::Trapped { .. }) => return Ok(TrajectoryOutcome::Rejected),
        Err(e) => return Err(e.into()),
    };
    let mut records = Vec::with_capacity(cells.len());
    for (cell, fc) in cells.iter().zip(configs) {
        let mut rng = filter_rng(seed, cell);
        let trace = run_filter(cell.kind, env, &traj, fc, &mut rng)?;
        let s = RunSummary::from_trace(&trace, &traj)?;
        records.push(RunRecord {
            traj_id: index,
            filter: cell.kind,
            particles: cell.particles,
            setting: cell.setting,
            mse: s.mse,
            fse: s.fse,
            time_s: s.wall_time,
            traj_seed: seed,
            skipped_updates: s.incidents.skipped_updates,
            weight_resets: s.incidents.weight_resets,
        });
    }
    Ok(TrajectoryOutcome::Done(records))
}

fn runtime_rows(cfg: &ExperimentConfig, rows: &[AggregateRow]) -> Vec<RuntimeRow> {
    let setting = cfg.settings[0];
    let mut out = Vec::new();
    for &[pf, mkf] in &cfg.runtime_pairs {
        for (kind, n) in [(FilterKind::Pf, pf), (FilterKind::Mkf, mkf)] {
            if let Some(r) = rows.iter().find(|r| r.filter == kind && r.particles == n && r.setting == setting) {
                out.push(RuntimeRow {
                    env: r.environment.clone(),
                    filter: kind,
                    particles: n,
                    fse: r.mean_fse,
                    time_s: r.mean_wall_time * r.n_runs as f64,
                });
            }
        }
    }
    out
}

/// Total runtime and accuracy for `(PF N, MKF N)` pairs on the first
/// configured noise setting.
pub fn runtime_benchmark(cfg: &ExperimentConfig, pairs: &[[usize; 2]]) -> Result<RunReport, BenchError> {
    let mut cfg = cfg.clone();
    cfg.runtime_pairs = pairs.to_vec();
    cfg.settings.truncate(1);
    let spec = |kind, particles| FilterSpec {
        kind,
        particles,
        resample_every_step: None,
        roughening: None,
        predicted_measurement_noise: None,
    };
    cfg.filters = vec![
        spec(FilterKind::Pf, pairs.iter().map(|p| p[0]).collect()),
        spec(FilterKind::Mkf, pairs.iter().map(|p| p[1]).collect()),
    ];
    Ok(run_experiment(&cfg)?.report)
}

/// Outcome of matching MKF accuracy to a particle filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuning {
    pub pf: AggregateRow,
    /// Smallest candidate whose mean FSE does not exceed the PF's.
    pub mkf: Option<AggregateRow>,
    pub candidates: Vec<AggregateRow>,
}

/// Runs PF with `pf_particles` and MKF with each candidate count on the
/// first configured setting and picks the cheapest MKF that is at least as
/// accurate.
pub fn tune_mkf(cfg: &ExperimentConfig, pf_particles: usize, candidates: &[usize]) -> Result<Tuning, BenchError> {
    let mut cfg = cfg.clone();
    cfg.settings.truncate(1);
    cfg.runtime_pairs.clear();
    let base = |kind: FilterKind, particles: Vec<usize>| FilterSpec {
        kind,
        particles,
        resample_every_step: None,
        roughening: None,
        predicted_measurement_noise: None,
    };
    cfg.filters = vec![base(FilterKind::Pf, vec![pf_particles]), base(FilterKind::Mkf, candidates.to_vec())];
    let report = run_experiment(&cfg)?.report;
    let pf = report.rows.iter().find(|r| r.filter == FilterKind::Pf).cloned().ok_or(MetricsError::Empty)?;
    let mut mkf_rows: Vec<AggregateRow> = report.rows.into_iter().filter(|r| r.filter == FilterKind::Mkf).collect();
    mkf_rows.sort_by_key(|r| r.particles);
    let mkf = mkf_rows.iter().find(|r| r.mean_fse <= pf.mean_fse).cloned();
    Ok(Tuning { pf, mkf, candidates: mkf_rows })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

/// Writes `results.json` and `runs.csv` into `dir`.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json_path = dir.join(RESULTS_FILE);
    let mut json = serde_json::to_string_pretty(&output.report).expect("report serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(io_err(&json_path))?;

    let csv_path = dir.join(RUNS_FILE);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for r in &output.records {
        w.serialize(r).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> BenchError {
    BenchError::Parse { path: path.to_path_buf(), reason: e.to_string() }
}

pub fn read_report(dir: &Path) -> Result<RunReport, BenchError> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Err(BenchError::NoResults(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Parse { path, reason: e.to_string() })
}

pub fn read_runs(dir: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let path = dir.join(RUNS_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    r.deserialize().collect::<Result<Vec<RunRecord>, _>>().map_err(|e| csv_error(&path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown format `{other}` (expected table or csv)")),
        }
    }
}

pub const USELESS_MARKER: &str = "[useless]";

/// Renders the accuracy grid (rows: environment and N; columns: filter and
/// setting; cells: mean (std) of the FSE) followed by the runtime grid.
pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => render_table(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_table(report: &RunReport) -> String {
    let mut columns: Vec<(FilterKind, NoiseSetting)> = Vec::new();
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in &report.rows {
        if !columns.contains(&(r.filter, r.setting)) {
            columns.push((r.filter, r.setting));
        }
        if !keys.contains(&(r.environment.clone(), r.particles)) {
            keys.push((r.environment.clone(), r.particles));
        }
    }
    columns.sort();
    keys.sort();
    let mut header = vec!["env".to_string(), "N".to_string()];
    header.extend(columns.iter().map(|(f, s)| format!("{f}/{s}")));
    let mut lines = vec![header];
    for (env, n) in &keys {
        let mut line = vec![env.clone(), n.to_string()];
        for (f, s) in &columns {
            let cell = report
                .rows
                .iter()
                .find(|r| &r.environment == env && r.particles == *n && r.filter == *f && r.setting == *s);
            line.push(match cell {
                Some(r) if r.is_useless() => format!("{:.3} ({:.3}) {USELESS_MARKER}", r.mean_fse, r.std_fse),
                Some(r) => format!("{:.3} ({:.3})", r.mean_fse, r.std_fse),
                None => "-".to_string(),
            });
        }
        lines.push(line);
    }
    let mut out = String::from("Final-state error, mean (std)\n");
    out.push_str(&align(&lines));
    if !report.runtime.is_empty() {
        let mut rt = vec![vec!["env".into(), "filter".into(), "N".into(), "FSE".into(), "time_s".into()]];
        for r in &report.runtime {
            rt.push(vec![
                r.env.clone(),
                r.filter.to_string(),
                r.particles.to_string(),
                format!("{:.3}", r.fse),
                format!("{:.3}", r.time_s),
            ]);
        }
        out.push_str("\nRuntime\n");
        out.push_str(&align(&rt));
    }
    if report.rejected_trajectories > 0 {
        let _ = writeln!(out, "\n{} trajectories rejected", report.rejected_trajectories);
    }
    out
}

fn align(lines: &[Vec<String>]) -> String {
    let cols = lines.iter().map(|l| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| lines.iter().filter_map(|l| l.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in lines {
        let cells: Vec<String> = line.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

const AGGREGATE_CSV_HEADER: [&str; 13] = [
    "environment",
    "filter",
    "N",
    "setting",
    "mean_mse",
    "mean_fse",
    "std_fse",
    "mean_wall_time",
    "n_runs",
    "mse_random",
    "skipped_updates",
    "weight_resets",
    "useless",
];

fn render_csv(report: &RunReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AGGREGATE_CSV_HEADER).expect("in-memory write");
    for r in &report.rows {
        w.write_record([
            r.environment.clone(),
            r.filter.to_string(),
            r.particles.to_string(),
            r.setting.to_string(),
            r.mean_mse.to_string(),
            r.mean_fse.to_string(),
            r.std_fse.to_string(),
            r.mean_wall_time.to_string(),
            r.n_runs.to_string(),
            r.mse_random.to_string(),
            r.incidents.skipped_updates.to_string(),
            r.incidents.weight_resets.to_string(),
            r.is_useless().to_string(),
        ])
        .expect("in-memory write");
    }
    let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    if !report.runtime.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &report.runtime {
            w.serialize(r).expect("in-memory write");
        }
        out.push('\n');
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv"));
    }
    out
}

/// Parses the accuracy block of [`render_report`]'s csv output.
pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>, BenchError> {
    let block = text.split("\n\n").next().unwrap_or("");
    let bad = |reason: String| BenchError::Parse { path: PathBuf::from("<csv>"), reason };
    let mut r = csv::Reader::from_reader(block.as_bytes());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != AGGREGATE_CSV_HEADER {
        return Err(bad("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", AGGREGATE_CSV_HEADER[i])));
        let u = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("field {}: {e}", AGGREGATE_CSV_HEADER[i])));
        rows.push(AggregateRow {
            environment: rec[0].to_string(),
            filter: rec[1].parse().map_err(|e: FilterError| bad(e.to_string()))?,
            particles: u(2)? as usize,
            setting: rec[3].parse().map_err(|e: FilterError| bad(e.to_string()))?,
            mean_mse: f(4)?,
            mean_fse: f(5)?,
            std_fse: f(6)?,
            mean_wall_time: f(7)?,
            n_runs: u(8)? as usize,
            mse_random: f(9)?,
            incidents: crate::filters::Incidents { skipped_updates: u(10)?, weight_resets: u(11)? },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(map: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk(map);
        cfg.trajectories = 3;
        cfg.steps = 8;
        cfg.filters[0].particles = vec![30];
        cfg.filters[1].particles = vec![10];
        cfg.reproducible = true;
        cfg
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            map = "world10"
            seed = 7
            [[filters]]
            kind = "pf"
            particles = [100, 1000]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.trajectories, 500);
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.settings, vec![NoiseSetting::Sigma, NoiseSetting::FourSigma]);
        assert_eq!(cfg.cells().len(), 4);
        assert!(ExperimentConfig::from_toml("map = \"world10\"\nfilters = []\n").is_err());
        assert!(ExperimentConfig::from_toml("map = \"world10\"\nbogus = 1\nfilters = []\n").is_err());
    }

    #[test]
    fn cells_are_unique() {
        let mut cfg = tiny("world10");
        cfg.filters[0].particles = vec![30, 30];
        cfg.runtime_pairs = vec![[30, 10]];
        let cells = cfg.cells();
        assert_eq!(cells.len(), 4);
    }

    #[test]
    fn trajectory_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| trajectory_seed(5, i)).collect();
        let set: BTreeSet<u64> = a.iter().copied().collect();
        assert_eq!(set.len(), 100);
        assert_eq!(a[3], trajectory_seed(5, 3));
        assert_ne!(trajectory_seed(6, 3), a[3]);
    }

    #[test]
    fn single_cell_single_run() {
        let mut cfg = tiny("world10");
        cfg.trajectories = 1;
        cfg.filters.truncate(1);
        cfg.settings.truncate(1);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.report.rows.len(), 1);
        assert_eq!(out.report.rows[0].n_runs, 1);
        assert_eq!(out.report.rows[0].std_fse, 0.0);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn paired_design_shares_trajectory_seeds() {
        let out = run_experiment(&tiny("world10")).unwrap();
        for id in 0..3 {
            let seeds: BTreeSet<u64> = out.records.iter().filter(|r| r.traj_id == id).map(|r| r.traj_seed).collect();
            assert_eq!(seeds.len(), 1);
        }
        let cells = out.report.rows.len();
        assert_eq!(cells, 4);
        assert!(out.report.rows.iter().all(|r| r.n_runs + out.report.rejected_trajectories == 3));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = tiny("labyrinth");
        let a = run_experiment(&cfg).unwrap();
        cfg.workers = 3;
        let mut b = run_experiment(&cfg).unwrap();
        b.report.config.workers = 1;
        assert_eq!(a, b);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_outputs(dir_a.path(), &a).unwrap();
        write_outputs(dir_b.path(), &b).unwrap();
        for f in [RESULTS_FILE, RUNS_FILE] {
            assert_eq!(std::fs::read(dir_a.path().join(f)).unwrap(), std::fs::read(dir_b.path().join(f)).unwrap());
        }
        assert_eq!(read_report(dir_a.path()).unwrap(), a.report);
        assert_eq!(read_runs(dir_a.path()).unwrap(), a.records);
    }

    #[test]
    fn runs_csv_columns() {
        let out = run_experiment(&tiny("world10")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &out).unwrap();
        let text = std::fs::read_to_string(dir.path().join(RUNS_FILE)).unwrap();
        assert!(text.starts_with("traj_id,filter,N,setting,mse,fse,time_s,"));
    }

    #[test]
    fn runtime_report_schema() {
        let mut cfg = tiny("world10");
        cfg.reproducible = false;
        let report = runtime_benchmark(&cfg, &[[30, 10]]).unwrap();
        assert_eq!(report.runtime.len(), 2);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(&report.runtime[0]).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "env,filter,N,FSE,time_s");
        assert!(report.runtime.iter().all(|r| r.time_s > 0.0));
    }

    #[test]
    fn rendering_and_csv_round_trip() {
        let out = run_experiment(&tiny("world10")).unwrap();
        let mut report = out.report;
        report.rows[0].mean_mse = 1e9;
        let table = render_report(&report, ReportFormat::Table);
        assert!(table.contains(USELESS_MARKER));
        assert_eq!(table.matches(USELESS_MARKER).count(), 1);
        let csv_text = render_report(&report, ReportFormat::Csv);
        let parsed = parse_aggregate_csv(&csv_text).unwrap();
        assert_eq!(parsed, report.rows);
        let merged_parsed = parsed[1].merge(&parsed[1]).unwrap();
        let merged_orig = report.rows[1].merge(&report.rows[1]).unwrap();
        assert_eq!(merged_parsed, merged_orig);
    }

    #[test]
    fn one_row_table() {
        let mut cfg = tiny("world10");
        cfg.trajectories = 1;
        cfg.filters.truncate(1);
        cfg.settings.truncate(1);
        let report = run_experiment(&cfg).unwrap().report;
        let table = render_report(&report, ReportFormat::Table);
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn tuning_picks_cheapest_matching_candidate() {
        let mut cfg = tiny("world10");
        cfg.trajectories = 2;
        let t = tune_mkf(&cfg, 20, &[5, 10]).unwrap();
        assert_eq!(t.candidates.len(), 2);
        if let Some(m) = &t.mkf {
            assert!(m.mean_fse <= t.pf.mean_fse);
        }
    }
}
