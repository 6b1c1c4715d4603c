//! Ground-truth trajectories and the closed-loop filter runner.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::filters::{
    ekf_predict, ekf_update, mkf_init, mkf_step, pf_init, pf_step, FilterConfig, FilterError, FilterKind, GaussianBelief,
    Incidents, PlanarModel,
};
use crate::models::{measure, motion_step, Control, Measurement, MeasurementNoiseModel, MotionNoise, MotionNoiseModel, Pose};
use crate::scalar::{uniform, Scalar};

/// Heading redraws per step before the object counts as trapped.
pub const MAX_HEADING_ATTEMPTS: usize = 100;
/// Fresh starts before a trajectory is rejected.
pub const MAX_RESTARTS: usize = 100;
/// Standard deviation of the ground-truth range noise.
pub const TRUTH_RANGE_SIGMA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("object trapped in every one of {restarts} restarts")]
    Trapped { restarts: usize },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("trajectory file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// How trajectories are generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec<T> {
    pub steps: usize,
    /// Commanded speed `u ~ U[lo, hi]`, drawn once per trajectory.
    pub speed_range: (T, T),
    pub k_measure: usize,
    /// Truth-side range noise `ζ ~ N(0, σ²)`.
    pub range_sigma: T,
    pub truth_motion: MotionNoiseModel<T>,
}

impl<T: Scalar> Default for TrajectorySpec<T> {
    fn default() -> Self {
        Self {
            steps: 100,
            speed_range: (T::zero(), T::lit(0.5)),
            k_measure: 5,
            range_sigma: T::lit(TRUTH_RANGE_SIGMA),
            truth_motion: MotionNoiseModel::truth(),
        }
    }
}

/// `T + 1` poses, `T` noise-free controls and `T` noisy measurements; the
/// measurement at index `t` is taken at pose `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub poses: Vec<Pose<T>>,
    pub controls: Vec<Control<T>>,
    pub measurements: Vec<Measurement<T>>,
    /// Seed the trajectory was generated from, when known.
    pub seed: Option<u64>,
    /// Fresh starts needed because the object got trapped.
    pub restarts: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn from_seed(env: &Environment<T>, spec: &TrajectorySpec<T>, seed: u64) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traj = generate_trajectory(env, spec, &mut rng)?;
        traj.seed = Some(seed);
        Ok(traj)
    }

    pub fn truth_final(&self) -> &Pose<T> {
        self.poses.last().expect("trajectory holds at least the start pose")
    }

    fn validate(&self) -> Result<(), SimError> {
        let t = self.controls.len();
        if self.poses.len() != t + 1 || self.measurements.len() != t {
            return Err(SimError::Invalid(format!(
                "{} poses, {} controls, {} measurements",
                self.poses.len(),
                t,
                self.measurements.len()
            )));
        }
        Ok(())
    }
}

/// Simulates one trajectory.
///
/// Each step first tries the commanded heading change `Δφ = 0`; if the
/// noiseless or the noisy swept segment collides, `Δφ` is redrawn from
/// `U[0, 2π)`. A trapped object restarts from a fresh pose.
pub fn generate_trajectory<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    spec: &TrajectorySpec<T>,
    rng: &mut R,
) -> Result<Trajectory<T>, SimError> {
    if spec.steps == 0 {
        return Err(SimError::Invalid("at least one step is required".into()));
    }
    if spec.k_measure > env.beacons().len() {
        return Err(FilterError::from(crate::models::ModelError::TooManyBeacons {
            requested: spec.k_measure,
            available: env.beacons().len(),
        })
        .into());
    }
    let range_noise = MeasurementNoiseModel::new(spec.range_sigma * spec.range_sigma);
    for restarts in 0..MAX_RESTARTS {
        let start = env.sample_free_pose(rng)?;
        let u = uniform(rng, spec.speed_range.0, spec.speed_range.1);
        if let Some((poses, controls, measurements)) = simulate_from(env, spec, &range_noise, start, u, rng) {
            return Ok(Trajectory { poses, controls, measurements, seed: None, restarts });
        }
    }
    Err(SimError::Trapped { restarts: MAX_RESTARTS })
}

type Simulated<T> = (Vec<Pose<T>>, Vec<Control<T>>, Vec<Measurement<T>>);

fn simulate_from<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    spec: &TrajectorySpec<T>,
    range_noise: &MeasurementNoiseModel<T>,
    start: Pose<T>,
    u: T,
    rng: &mut R,
) -> Option<Simulated<T>> {
    let mut poses = Vec::with_capacity(spec.steps + 1);
    let mut controls = Vec::with_capacity(spec.steps);
    let mut measurements = Vec::with_capacity(spec.steps);
    poses.push(start);
    let mut pose = start;
    for _ in 0..spec.steps {
        let (control, next) = choose_move(env, spec, &pose, u, rng)?;
        let zeta = range_noise.sample(spec.k_measure, rng);
        let z = measure(env, &next, spec.k_measure, &zeta).ok()?;
        poses.push(next);
        controls.push(control);
        measurements.push(z);
        pose = next;
    }
    Some((poses, controls, measurements))
}

fn choose_move<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    spec: &TrajectorySpec<T>,
    pose: &Pose<T>,
    u: T,
    rng: &mut R,
) -> Option<(Control<T>, Pose<T>)> {
    let from = pose.position();
    for attempt in 0..MAX_HEADING_ATTEMPTS {
        let dphi = if attempt == 0 { T::zero() } else { uniform(rng, T::zero(), T::two_pi()) };
        let control = Control::new(u, dphi);
        let planned = motion_step(pose, &control, &MotionNoise::zero());
        if env.segment_collides(&from, &planned.position()) {
            continue;
        }
        let next = motion_step(pose, &control, &spec.truth_motion.sample(rng));
        if env.segment_collides(&from, &next.position()) || env.collides(&next.position()) {
            continue;
        }
        return Some((control, next));
    }
    None
}

/// Output of one filter run over one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T> {
    pub estimates: Vec<Pose<T>>,
    /// Squared position error at each step.
    pub per_step_error: Vec<T>,
    /// Seconds spent filtering, excluding set-up of the trajectory.
    pub wall_time: f64,
    pub incidents: Incidents,
}

/// Runs one filter over a trajectory without knowledge of the start pose.
///
/// Particle filters start from poses spread uniformly over free space; the
/// EKF starts at the free-space centroid with heading `π` and the prior
/// covariance.
pub fn run_filter<T: Scalar, R: Rng + ?Sized>(
    kind: FilterKind,
    env: &Environment<T>,
    traj: &Trajectory<T>,
    cfg: &FilterConfig<T>,
    rng: &mut R,
) -> Result<RunTrace<T>, SimError> {
    traj.validate()?;
    cfg.check_environment(env)?;
    if let Some(z) = traj.measurements.iter().find(|z| z.len() != cfg.k_measure) {
        return Err(SimError::Invalid(format!("measurement of {} ranges, filter expects {}", z.len(), cfg.k_measure)));
    }
    let model = PlanarModel::new(env, cfg, kind);
    let steps = traj.steps();
    let mut estimates = Vec::with_capacity(steps);
    let mut incidents = Incidents::default();
    let clock = Instant::now();
    match kind {
        FilterKind::Pf => {
            let mut set = pf_init(env, cfg.particles, rng)?;
            for (c, z) in traj.controls.iter().zip(&traj.measurements) {
                let out = pf_step(&mut set, c, z, &model, cfg, rng);
                incidents.absorb(out.incidents);
                estimates.push(out.estimate);
            }
        }
        FilterKind::Mkf => {
            let p0 = cfg.initial_covariance_for(env);
            let mut set = mkf_init(env, cfg.particles, &p0, rng)?;
            for (c, z) in traj.controls.iter().zip(&traj.measurements) {
                let out = mkf_step(&mut set, c, z, &model, cfg, rng);
                incidents.absorb(out.incidents);
                estimates.push(out.estimate);
            }
        }
        FilterKind::Ekf => {
            let centroid = env.free_space().centroid;
            let mean = Vector3::new(centroid.x, centroid.y, T::pi());
            let mut belief = GaussianBelief::new(mean, cfg.initial_covariance_for(env));
            for (c, z) in traj.controls.iter().zip(&traj.measurements) {
                let predicted = ekf_predict(&belief, c, &model, rng);
                belief = match ekf_update(&predicted, z, &model) {
                    Ok(b) => b,
                    Err(_) => {
                        incidents.skipped_updates += 1;
                        predicted
                    }
                };
                estimates.push(Pose::from_vector(&belief.mean));
            }
        }
    }
    let wall_time = clock.elapsed().as_secs_f64();
    let per_step_error = estimates.iter().zip(&traj.poses[1..]).map(|(e, p)| e.distance_sq(p)).collect();
    Ok(RunTrace { estimates, per_step_error, wall_time, incidents })
}

/// Writes a trajectory as delimited text: a `# seed=` comment, a header,
/// then one row per pose. Row `t = 0` holds the start pose with empty
/// control and measurement columns; row `t` holds the control that led to
/// pose `t` and the measurement taken there.
pub fn write_trajectory<T: Scalar, W: Write>(traj: &Trajectory<T>, mut out: W) -> Result<(), SimError> {
    traj.validate()?;
    let k = traj.measurements.first().map_or(0, |m| m.len());
    match traj.seed {
        Some(seed) => writeln!(out, "# seed={seed}")?,
        None => writeln!(out, "# seed=")?,
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["t", "x", "y", "phi", "u", "dphi"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=k).map(|j| format!("b{j}")));
    header.extend((1..=k).map(|j| format!("d{j}")));
    w.write_record(&header)?;
    for (t, pose) in traj.poses.iter().enumerate() {
        let mut row = vec![t.to_string(), fmt(pose.x), fmt(pose.y), fmt(pose.phi)];
        if t == 0 {
            row.extend(std::iter::repeat_n(String::new(), 2 + 2 * k));
        } else {
            let c = &traj.controls[t - 1];
            let z = &traj.measurements[t - 1];
            if z.len() != k {
                return Err(SimError::Invalid("measurements of varying length".into()));
            }
            row.push(fmt(c.u));
            row.push(fmt(c.dphi));
            row.extend(z.beacon_indices.iter().map(|i| i.to_string()));
            row.extend(z.distances.iter().map(|&d| fmt(d)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt<T: Scalar>(v: T) -> String {
    format!("{}", v.as_f64())
}

/// Reads a trajectory written by [`write_trajectory`].
pub fn read_trajectory<T: Scalar, R: Read>(input: R) -> Result<Trajectory<T>, SimError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let seed = first
        .trim()
        .strip_prefix("# seed=")
        .ok_or_else(|| SimError::Format("missing `# seed=` line".into()))?;
    let seed = if seed.is_empty() {
        None
    } else {
        Some(seed.parse::<u64>().map_err(|e| SimError::Format(format!("bad seed `{seed}`: {e}")))?)
    };
    let mut csv_reader = csv::Reader::from_reader(reader);
    let k = (csv_reader.headers()?.len().checked_sub(6)).ok_or_else(|| SimError::Format("too few columns".into()))? / 2;
    let num = |s: &str, what: &str, line: usize| -> Result<f64, SimError> {
        s.parse::<f64>().map_err(|_| SimError::Format(format!("row {line}: bad {what} `{s}`")))
    };
    let mut traj = Trajectory { poses: vec![], controls: vec![], measurements: vec![], seed, restarts: 0 };
    for (line, record) in csv_reader.records().enumerate() {
        let record = record?;
        if record.len() != 6 + 2 * k {
            return Err(SimError::Format(format!("row {line}: expected {} fields", 6 + 2 * k)));
        }
        let t: usize = record[0].parse().map_err(|_| SimError::Format(format!("row {line}: bad step index")))?;
        if t != line {
            return Err(SimError::Format(format!("row {line}: step index {t} out of order")));
        }
        let pose = Pose {
            x: T::lit(num(&record[1], "x", line)?),
            y: T::lit(num(&record[2], "y", line)?),
            phi: T::lit(num(&record[3], "phi", line)?),
        };
        traj.poses.push(pose);
        if t == 0 {
            continue;
        }
        traj.controls.push(Control::new(T::lit(num(&record[4], "u", line)?), T::lit(num(&record[5], "dphi", line)?)));
        let beacon_indices = (0..k)
            .map(|j| record[6 + j].parse::<usize>().map_err(|_| SimError::Format(format!("row {line}: bad beacon index"))))
            .collect::<Result<Vec<_>, _>>()?;
        let distances = (0..k)
            .map(|j| num(&record[6 + k + j], "distance", line).map(T::lit))
            .collect::<Result<Vec<_>, _>>()?;
        traj.measurements.push(Measurement { beacon_indices, distances });
    }
    if traj.poses.is_empty() {
        return Err(SimError::Format("no rows".into()));
    }
    traj.validate()?;
    Ok(traj)
}

pub fn save_trajectory<T: Scalar>(traj: &Trajectory<T>, path: &Path) -> Result<(), SimError> {
    let file = std::fs::File::create(path)?;
    write_trajectory(traj, std::io::BufWriter::new(file))
}

pub fn load_trajectory<T: Scalar>(path: &Path) -> Result<Trajectory<T>, SimError> {
    read_trajectory(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Preset, Rect};
    use crate::filters::NoiseSetting;
    use nalgebra::Point2;

    fn open_world() -> Environment<f64> {
        let beacons = (0..6).map(|i| Point2::new(1.0 + 3.0 * (i % 3) as f64, 2.0 + 5.0 * (i / 3) as f64)).collect();
        Environment::new("open", 10.0, 10.0, vec![], beacons).unwrap()
    }

    #[test]
    fn noiseless_open_world_is_straight_until_a_wall() {
        let env = open_world();
        let spec = TrajectorySpec {
            steps: 5,
            speed_range: (0.3, 0.3),
            truth_motion: MotionNoiseModel::Uniform { radial_half_width: 0.0, angular_half_width: 0.0 },
            ..TrajectorySpec::default()
        };
        let traj = generate_trajectory(&env, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let start = traj.poses[0];
        let dir = Point2::new(start.phi.cos(), start.phi.sin());
        let straight = traj.controls.iter().all(|c| c.dphi == 0.0);
        if straight {
            let end = traj.truth_final();
            let len = ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt();
            assert!((len - 5.0 * 0.3).abs() < 1e-12);
            assert!(((end.x - start.x) - len * dir.x).abs() < 1e-12);
        }
        for w in traj.poses.windows(2) {
            assert!((w[0].distance_sq(&w[1]).sqrt() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectories_avoid_obstacles_and_respect_noise_support() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let spec = TrajectorySpec::default();
        for seed in 0..200 {
            let traj = Trajectory::from_seed(&env, &spec, seed).unwrap();
            assert_eq!(traj.poses.len(), 101);
            assert_eq!(traj.measurements.len(), 100);
            for (w, c) in traj.poses.windows(2).zip(&traj.controls) {
                assert!(!env.collides(&w[1].position()));
                assert!(!env.segment_collides(&w[0].position(), &w[1].position()));
                let step = w[0].distance_sq(&w[1]).sqrt();
                assert!((step - c.u).abs() <= 0.02 + 1e-12, "speed {step} vs {}", c.u);
                let turn = crate::scalar::angle_diff(w[1].phi, crate::scalar::wrap_angle(w[0].phi + c.dphi));
                assert!(turn.abs() <= 0.01 * std::f64::consts::TAU + 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let env = Preset::Labyrinth.build::<f64>(false, 1).unwrap();
        let spec = TrajectorySpec::default();
        let a = Trajectory::from_seed(&env, &spec, 77).unwrap();
        let b = Trajectory::from_seed(&env, &spec, 77).unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_trajectory(&a, &mut bytes_a).unwrap();
        write_trajectory(&b, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn trajectory_file_round_trip() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let traj = Trajectory::from_seed(&env, &TrajectorySpec { steps: 7, ..Default::default() }, 5).unwrap();
        let mut bytes = Vec::new();
        write_trajectory(&traj, &mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("# seed=5\nt,x,y,phi,u,dphi,b1,"));
        let back: Trajectory<f64> = read_trajectory(&bytes[..]).unwrap();
        assert_eq!(back, Trajectory { restarts: 0, ..traj });
        assert!(read_trajectory::<f64, _>(&b"t,x\n"[..]).is_err());
    }

    #[test]
    fn trapped_object_is_rejected() {
        // A pocket of free space shorter than any step of length 0.5.
        let env = Environment::new(
            "cage",
            1.0,
            1.0,
            vec![Rect::new(0.0, 0.0, 1.0, 0.45), Rect::new(0.0, 0.55, 1.0, 1.0), Rect::new(0.2, 0.45, 1.0, 0.55)],
            vec![Point2::new(0.5, 0.5)],
        )
        .unwrap();
        let spec = TrajectorySpec { k_measure: 1, speed_range: (0.5, 0.5), steps: 50, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(generate_trajectory(&env, &spec, &mut rng), Err(SimError::Trapped { .. })));
    }

    #[test]
    fn single_particle_at_truth_tracks_exactly() {
        let env = open_world();
        let spec = TrajectorySpec {
            steps: 20,
            range_sigma: 0.0,
            truth_motion: MotionNoiseModel::Uniform { radial_half_width: 0.0, angular_half_width: 0.0 },
            ..TrajectorySpec::default()
        };
        let traj = Trajectory::from_seed(&env, &spec, 9).unwrap();
        let mut cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        cfg.motion_var_radial = 0.0;
        cfg.motion_var_angular = 0.0;
        cfg.predicted_measurement_noise = Some(false);
        let model = PlanarModel::new(&env, &cfg, FilterKind::Pf);
        let mut set = crate::filters::ParticleSet::uniform(vec![traj.poses[0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (t, (c, z)) in traj.controls.iter().zip(&traj.measurements).enumerate() {
            let out = pf_step(&mut set, c, z, &model, &cfg, &mut rng);
            assert_eq!(out.estimate.distance_sq(&traj.poses[t + 1]), 0.0);
        }
    }

    #[test]
    fn run_filter_is_deterministic_and_sized() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let traj = Trajectory::from_seed(&env, &TrajectorySpec { steps: 15, ..Default::default() }, 2).unwrap();
        for kind in [FilterKind::Pf, FilterKind::Mkf, FilterKind::Ekf] {
            let cfg = FilterConfig::new(40, NoiseSetting::FourSigma);
            let a = run_filter(kind, &env, &traj, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let b = run_filter(kind, &env, &traj, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(a.estimates, b.estimates);
            assert_eq!(a.per_step_error.len(), 15);
            assert!(a.per_step_error.iter().all(|e| *e >= 0.0));
        }
    }

    #[test]
    fn mismatched_measurement_length_is_rejected() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let traj = Trajectory::from_seed(&env, &TrajectorySpec { steps: 3, k_measure: 4, ..Default::default() }, 2).unwrap();
        let cfg = FilterConfig::new(10, NoiseSetting::Sigma);
        let err = run_filter(FilterKind::Pf, &env, &traj, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, SimError::Invalid(_)));
    }
}
