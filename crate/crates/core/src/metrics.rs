//! Losses, the random-guess baseline and aggregation of runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Tiling;
use crate::filters::{FilterKind, Incidents, NoiseSetting};
use crate::models::Pose;
use crate::scalar::Scalar;
use crate::sim::{RunTrace, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {estimates} estimates for {truths} true poses")]
    LengthMismatch { estimates: usize, truths: usize },
    #[error("nothing to aggregate")]
    Empty,
    #[error("cannot merge rows of different cells ({0})")]
    CellMismatch(String),
}

/// Mean squared planar position error over a trace.
pub fn mse<T: Scalar>(estimates: &[Pose<T>], truths: &[Pose<T>]) -> Result<T, MetricsError> {
    if estimates.len() != truths.len() {
        return Err(MetricsError::LengthMismatch { estimates: estimates.len(), truths: truths.len() });
    }
    if estimates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total = estimates.iter().zip(truths).fold(T::zero(), |acc, (e, t)| acc + e.distance_sq(t));
    Ok(total / T::from_count(estimates.len()))
}

/// Squared planar position error of the final estimate.
pub fn fse<T: Scalar>(estimate: &Pose<T>, truth: &Pose<T>) -> T {
    estimate.distance_sq(truth)
}

/// Expected squared distance between two independent uniform points of a
/// `w × h` rectangle, `(w² + h²)/6`; filters doing worse are useless.
pub fn mse_random_threshold<T: Scalar>(w: T, h: T) -> T {
    (w * w + h * h) / T::lit(6.0)
}

/// Final-state error up to the tiling's translation group:
/// `min_g ‖pos(estimate) − pos(truth) − g‖²` over all tile translations `g`.
pub fn symmetry_aware_fse<T: Scalar>(estimate: &Pose<T>, truth: &Pose<T>, tiling: &Tiling<T>) -> T {
    tiling
        .translations()
        .iter()
        .map(|g| {
            let dx = estimate.x - truth.x - g.x;
            let dy = estimate.y - truth.y - g.y;
            dx * dx + dy * dy
        })
        .fold(fse(estimate, truth), |best, v| if v < best { v } else { best })
}

/// Scalar results of one filter run, as kept by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mse: f64,
    pub fse: f64,
    pub wall_time: f64,
    pub incidents: Incidents,
}

impl RunSummary {
    pub fn from_trace<T: Scalar>(trace: &RunTrace<T>, traj: &Trajectory<T>) -> Result<Self, MetricsError> {
        let mse = mse(&trace.estimates, &traj.poses[1..])?;
        let last = trace.estimates.last().ok_or(MetricsError::Empty)?;
        Ok(Self {
            mse: mse.as_f64(),
            fse: fse(last, traj.truth_final()).as_f64(),
            wall_time: trace.wall_time,
            incidents: trace.incidents,
        })
    }
}

/// Identifies one cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellMeta {
    pub environment: String,
    pub filter: FilterKind,
    pub particles: usize,
    pub setting: NoiseSetting,
}

/// Statistics of one cell over its runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub environment: String,
    pub filter: FilterKind,
    pub particles: usize,
    pub setting: NoiseSetting,
    pub mean_mse: f64,
    pub mean_fse: f64,
    /// Unbiased sample standard deviation; 0 for a single run.
    pub std_fse: f64,
    pub mean_wall_time: f64,
    pub n_runs: usize,
    /// `(w² + h²)/6` of the map, for the uselessness flag.
    pub mse_random: f64,
    pub incidents: Incidents,
}

impl AggregateRow {
    pub fn meta(&self) -> CellMeta {
        CellMeta {
            environment: self.environment.clone(),
            filter: self.filter,
            particles: self.particles,
            setting: self.setting,
        }
    }

    /// Whether the mean MSE exceeds the random-guess level.
    pub fn is_useless(&self) -> bool {
        self.mean_mse > self.mse_random
    }

    fn m2_fse(&self) -> f64 {
        if self.n_runs > 1 {
            self.std_fse * self.std_fse * (self.n_runs - 1) as f64
        } else {
            0.0
        }
    }

    /// Combines the statistics of two disjoint sets of runs of one cell.
    pub fn merge(&self, other: &AggregateRow) -> Result<AggregateRow, MetricsError> {
        if self.meta() != other.meta() {
            return Err(MetricsError::CellMismatch(format!("{:?} vs {:?}", self.meta(), other.meta())));
        }
        let (na, nb) = (self.n_runs as f64, other.n_runs as f64);
        let n = na + nb;
        let mean = |a: f64, b: f64| (na * a + nb * b) / n;
        let delta = other.mean_fse - self.mean_fse;
        let m2 = self.m2_fse() + other.m2_fse() + delta * delta * na * nb / n;
        let n_runs = self.n_runs + other.n_runs;
        let mut incidents = self.incidents;
        incidents.absorb(other.incidents);
        Ok(AggregateRow {
            mean_mse: mean(self.mean_mse, other.mean_mse),
            mean_fse: mean(self.mean_fse, other.mean_fse),
            std_fse: if n_runs > 1 { (m2 / (n_runs - 1) as f64).sqrt() } else { 0.0 },
            mean_wall_time: mean(self.mean_wall_time, other.mean_wall_time),
            n_runs,
            incidents,
            ..self.clone()
        })
    }
}

/// Sample means, and the unbiased standard deviation of the FSE.
pub fn aggregate(runs: &[RunSummary], meta: &CellMeta, mse_random: f64) -> Result<AggregateRow, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = runs.len() as f64;
    let mean_of = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_fse = mean_of(|r| r.fse);
    let std_fse = if runs.len() > 1 {
        (runs.iter().map(|r| (r.fse - mean_fse).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut incidents = Incidents::default();
    runs.iter().for_each(|r| incidents.absorb(r.incidents));
    Ok(AggregateRow {
        environment: meta.environment.clone(),
        filter: meta.filter,
        particles: meta.particles,
        setting: meta.setting,
        mean_mse: mean_of(|r| r.mse),
        mean_fse,
        std_fse,
        mean_wall_time: mean_of(|r| r.wall_time),
        n_runs: runs.len(),
        mse_random,
        incidents,
    })
}

/// [`aggregate`] over full traces.
pub fn aggregate_traces<T: Scalar>(
    runs: &[(RunTrace<T>, Trajectory<T>)],
    meta: &CellMeta,
    mse_random: f64,
) -> Result<AggregateRow, MetricsError> {
    let summaries =
        runs.iter().map(|(trace, traj)| RunSummary::from_trace(trace, traj)).collect::<Result<Vec<_>, _>>()?;
    aggregate(&summaries, meta, mse_random)
}
