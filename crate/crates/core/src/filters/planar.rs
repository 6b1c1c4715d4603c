use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;

use super::ekf::{EkfModel, MeasurementLinearization, StatePrediction};
use super::pf::ParticleModel;
use super::weights::weighted_pose_mean;
use super::{FilterConfig, FilterError, FilterKind};
use crate::env::Environment;
use crate::models::{
    isotropic_log_density, motion_jacobian, motion_step, Control, Measurement, MeasurementNoiseModel, ModelError,
    MotionNoise, MotionNoiseModel, Pose, DEGENERATE_DISTANCE,
};
use crate::scalar::{gaussian, wrap_angle, Scalar};

/// Sampled process covariance expressed in the frame aligned with the new
/// heading `φ + Δφ`.
///
/// The deviations `f(x, c, 0) − f(x, c, η)` depend on the pose only through
/// a rotation by the new heading, so one set of draws yields the covariance
/// for every pose: `Q = G Q_local Gᵀ` with `G = diag(Rot(φ + Δφ), 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingFrameCovariance<T: Scalar>(pub Matrix3<T>);

impl<T: Scalar> HeadingFrameCovariance<T> {
    /// `(1/s) Σ vᵢ vᵢᵀ` over `s` draws `ηᵢ ~ N(0, M)`.
    pub fn sample<R: Rng + ?Sized>(u: T, motion: &MotionNoiseModel<T>, samples: usize, rng: &mut R) -> Self {
        let mut q = Matrix3::zeros();
        for _ in 0..samples {
            let eta = motion.sample(rng);
            let (s, c) = eta.angular.sin_cos();
            let step = u + eta.radial;
            let v = Vector3::new(u - step * c, -step * s, -eta.angular);
            q += v * v.transpose();
        }
        Self(q / T::from_count(samples))
    }

    pub fn rotated(&self, heading: T) -> Matrix3<T> {
        let (s, c) = heading.sin_cos();
        let (zero, one) = (T::zero(), T::one());
        let g = Matrix3::new(c, -s, zero, s, c, zero, zero, zero, one);
        let q = g * self.0 * g.transpose();
        (q + q.transpose()) * T::lit(0.5)
    }
}

/// The unicycle and range-beacon models bound to one map and one set of
/// filter hyperparameters.
#[derive(Debug, Clone)]
pub struct PlanarModel<'a, T: Scalar> {
    pub env: &'a Environment<T>,
    pub k: usize,
    /// Gaussian `N(0, M)` assumed by the filter.
    pub motion: MotionNoiseModel<T>,
    pub measurement: MeasurementNoiseModel<T>,
    pub q_samples: usize,
    pub predicted_measurement_noise: bool,
}

impl<'a, T: Scalar> PlanarModel<'a, T> {
    pub fn new(env: &'a Environment<T>, cfg: &FilterConfig<T>, kind: FilterKind) -> Self {
        Self {
            env,
            k: cfg.k_measure,
            motion: MotionNoiseModel::gaussian(cfg.motion_var_radial, cfg.motion_var_angular),
            measurement: MeasurementNoiseModel::new(cfg.measurement_var),
            q_samples: cfg.q_samples,
            predicted_measurement_noise: cfg.predicted_measurement_noise_for(kind),
        }
    }

    /// `log L(z* | pose)` against the pose's own nearest beacons, with `zeta`
    /// added to the prediction when given.
    fn log_likelihood_with(&self, pose: &Pose<T>, z_star: &[T], zeta: Option<&[T]>) -> T {
        let mut nearest = Vec::with_capacity(z_star.len());
        self.env.k_nearest_into(&pose.position(), z_star.len(), &mut nearest);
        let mut r2 = T::zero();
        for (j, (&z, &(_, d))) in z_star.iter().zip(&nearest).enumerate() {
            let pred = match zeta {
                Some(zeta) => d + zeta[j],
                None => d,
            };
            r2 += (z - pred) * (z - pred);
        }
        isotropic_log_density(r2, z_star.len(), self.measurement.var)
    }

    /// Noiseless log-likelihood of `z*` for a hypothesis.
    pub fn log_likelihood(&self, pose: &Pose<T>, z_star: &Measurement<T>) -> T {
        self.log_likelihood_with(pose, &z_star.distances, None)
    }
}

impl<T: Scalar> EkfModel<T> for PlanarModel<'_, T> {
    type Control = Control<T>;
    type Observation = Measurement<T>;
    type ProcessDraws = HeadingFrameCovariance<T>;

    fn draw_process<R: Rng + ?Sized>(&self, control: &Control<T>, rng: &mut R) -> HeadingFrameCovariance<T> {
        HeadingFrameCovariance::sample(control.u, &self.motion, self.q_samples, rng)
    }

    fn predict_state(
        &self,
        mean: &Vector3<T>,
        control: &Control<T>,
        draws: &HeadingFrameCovariance<T>,
    ) -> StatePrediction<T> {
        let pose = Pose { x: mean[0], y: mean[1], phi: mean[2] };
        let next = motion_step(&pose, control, &MotionNoise::zero());
        StatePrediction {
            mean: next.to_vector(),
            jacobian: motion_jacobian(&pose, control),
            process_covariance: draws.rotated(pose.phi + control.dphi),
        }
    }

    fn linearize_measurement(
        &self,
        mean: &Vector3<T>,
        z_star: &Measurement<T>,
    ) -> Result<MeasurementLinearization<T>, FilterError> {
        let k = z_star.len();
        let mut nearest = Vec::with_capacity(k);
        let p = nalgebra::Point2::new(mean[0], mean[1]);
        self.env.k_nearest_into(&p, k, &mut nearest);
        if nearest.len() < k {
            return Err(ModelError::TooManyBeacons { requested: k, available: nearest.len() }.into());
        }
        let eps = T::lit(DEGENERATE_DISTANCE);
        let mut h = DMatrix::zeros(k, 3);
        let mut innovation = DVector::zeros(k);
        for (row, &(i, d)) in nearest.iter().enumerate() {
            if d < eps {
                return Err(ModelError::DegenerateGeometry { index: i, distance: d.as_f64() }.into());
            }
            let b = &self.env.beacons()[i];
            h[(row, 0)] = (p.x - b.x) / d;
            h[(row, 1)] = (p.y - b.y) / d;
            innovation[row] = z_star.distances[row] - d;
        }
        Ok(MeasurementLinearization { innovation, jacobian: h, noise: self.measurement.covariance(k) })
    }

    fn normalize_state(&self, mean: Vector3<T>) -> Vector3<T> {
        Vector3::new(mean[0], mean[1], wrap_angle(mean[2]))
    }
}

impl<T: Scalar> ParticleModel<T> for PlanarModel<'_, T> {
    type State = Pose<T>;
    type Control = Control<T>;
    type Observation = Measurement<T>;
    type Estimate = Pose<T>;

    fn propagate<R: Rng + ?Sized>(&self, state: &Pose<T>, control: &Control<T>, rng: &mut R) -> Pose<T> {
        motion_step(state, control, &self.motion.sample(rng))
    }

    fn log_likelihood<R: Rng + ?Sized>(&self, state: &Pose<T>, z_star: &Measurement<T>, rng: &mut R) -> T {
        if self.predicted_measurement_noise {
            let sigma = self.measurement.var.sqrt();
            let zeta: Vec<T> = (0..z_star.len()).map(|_| gaussian(rng, sigma)).collect();
            self.log_likelihood_with(state, &z_star.distances, Some(&zeta))
        } else {
            self.log_likelihood_with(state, &z_star.distances, None)
        }
    }

    fn estimate(&self, states: &[Pose<T>], weights: &[T]) -> Pose<T> {
        weighted_pose_mean(states, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Preset, Rect};
    use crate::filters::{ekf_update, GaussianBelief, NoiseSetting};
    use crate::models::{predict_measurement, MotionNoise};
    use nalgebra::Point2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heading_frame_covariance_matches_direct_formula() {
        let motion = MotionNoiseModel::gaussian(0.01f64, 0.05);
        let control = Control::new(0.3, 0.7);
        let pose = Pose::new(2.0, 3.0, 5.9);
        let samples = 64;
        let q = HeadingFrameCovariance::sample(control.u, &motion, samples, &mut ChaCha8Rng::seed_from_u64(9))
            .rotated(pose.phi + control.dphi);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = motion_step(&pose, &control, &MotionNoise::zero()).to_vector();
        let mut direct = Matrix3::zeros();
        for _ in 0..samples {
            let eta = motion.sample(&mut rng);
            let other = motion_step(&pose, &control, &eta);
            let mut d = mean - other.to_vector();
            d[2] = crate::scalar::angle_diff(mean[2], other.phi);
            direct += d * d.transpose();
        }
        direct /= samples as f64;
        assert!((q - direct).norm() <= 1e-12 * direct.norm());
    }

    #[test]
    fn process_covariance_converges_to_monte_carlo() {
        let motion = MotionNoiseModel::gaussian(0.02f64 * 0.02, 0.0628f64 * 0.0628);
        let control = Control::new(0.4, 0.2);
        let heading = 1.1 + control.dphi;
        let q = HeadingFrameCovariance::sample(control.u, &motion, 100_000, &mut ChaCha8Rng::seed_from_u64(1))
            .rotated(heading);
        // Independent oracle: push samples through the world-frame motion step.
        let pose = Pose::new(1.0, 1.0, 1.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let eta = MotionNoise {
                radial: crate::scalar::gaussian(&mut rng, 0.02),
                angular: crate::scalar::gaussian(&mut rng, 0.0628),
            };
            samples.push(motion_step(&pose, &control, &eta));
        }
        let m = motion_step(&pose, &control, &MotionNoise::zero());
        let mut oracle = Matrix3::zeros();
        for s in &samples {
            let d = Vector3::new(m.x - s.x, m.y - s.y, crate::scalar::angle_diff(m.phi, s.phi));
            oracle += d * d.transpose();
        }
        oracle /= n as f64;
        assert!((q - oracle).norm() < 0.05 * oracle.norm(), "{q} vs {oracle}");
    }

    #[test]
    fn noiseless_limit_propagates_linearly() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let mut cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        cfg.motion_var_radial = 1e-24;
        cfg.motion_var_angular = 1e-24;
        let model = PlanarModel::new(&env, &cfg, FilterKind::Ekf);
        let b = GaussianBelief::new(Vector3::new(3.0, 4.0, 0.5), Matrix3::identity());
        let c = Control::new(0.3, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = crate::filters::ekf_predict(&b, &c, &model, &mut rng);
        let f = motion_jacobian(&Pose::new(3.0, 4.0, 0.5), &c);
        assert!((p.covariance - f * f.transpose()).norm() < 1e-8);

        let still = crate::filters::ekf_predict(&b, &Control::zero(), &model, &mut rng);
        assert!((still.covariance - b.covariance).norm() < 1e-8);
        assert!((still.mean - b.mean).norm() < 1e-15);
    }

    #[test]
    fn update_against_far_beacon_is_one_dimensional() {
        // A lone far beacon on the x axis measures x almost linearly.
        let env = Environment::new("far", 2000.0, 10.0, vec![], vec![Point2::new(1000.0, 5.0)]).unwrap();
        let mut cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        cfg.k_measure = 1;
        cfg.measurement_var = 0.5;
        let model = PlanarModel::new(&env, &cfg, FilterKind::Ekf);
        let prior = GaussianBelief::new(Vector3::new(2.0, 5.0, 0.0), Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)));
        let z = Measurement { beacon_indices: vec![0], distances: vec![997.0] };
        let post = ekf_update(&prior, &z, &model).unwrap();
        // Range decreases with x: z = 1000 − x, innovation −1, H = −1.
        let gain: f64 = 2.0 / 2.5;
        assert!((post.mean[0] - (2.0 + gain)).abs() < 1e-8);
        assert!((post.covariance[(0, 0)] - (1.0 - gain) * 2.0).abs() < 1e-8);
    }

    #[test]
    fn linearization_matches_model_functions() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        let model = PlanarModel::new(&env, &cfg, FilterKind::Mkf);
        let pose = Pose::new(3.3, 7.1, 2.0);
        let z_star = Measurement { beacon_indices: vec![], distances: vec![1.0, 2.0, 3.0, 4.0, 5.0] };
        let lin = model.linearize_measurement(&pose.to_vector(), &z_star).unwrap();
        let pred = predict_measurement(&env, &pose, 5, None).unwrap();
        let h = crate::models::measurement_jacobian(&env, &pose, &pred.beacon_indices).unwrap();
        assert_eq!(lin.jacobian, h);
        for j in 0..5 {
            assert_eq!(lin.innovation[j], z_star.distances[j] - pred.distances[j]);
        }
    }

    #[test]
    fn update_on_a_beacon_is_degenerate() {
        let env = Environment::new("b", 4.0, 4.0, vec![Rect::new(3.0, 3.0, 3.5, 3.5)], vec![Point2::new(1.0, 1.0)]).unwrap();
        let mut cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        cfg.k_measure = 1;
        let model = PlanarModel::new(&env, &cfg, FilterKind::Ekf);
        let prior = GaussianBelief::new(Vector3::new(1.0, 1.0, 0.0), Matrix3::identity());
        let z = Measurement { beacon_indices: vec![0], distances: vec![0.5] };
        assert!(matches!(
            ekf_update(&prior, &z, &model),
            Err(FilterError::Model(ModelError::DegenerateGeometry { .. }))
        ));
    }

    #[test]
    fn tiled_hypotheses_share_likelihood_bits() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let cfg = FilterConfig::new(1, NoiseSetting::Sigma);
        let model = PlanarModel::new(&env, &cfg, FilterKind::Mkf);
        let z = Measurement { beacon_indices: vec![], distances: vec![0.9, 1.5, 2.2, 3.1, 3.3] };
        // Near tile centers the five nearest beacons all belong to the tile.
        let a = Pose::new(2.5, 2.0, 0.3);
        let b = Pose::new(7.5, 2.0, 0.3);
        let c = Pose::new(2.5, 7.0, 0.3);
        let la = model.log_likelihood(&a, &z);
        assert_eq!(la.to_bits(), model.log_likelihood(&b, &z).to_bits());
        assert_eq!(la.to_bits(), model.log_likelihood(&c, &z).to_bits());
    }
}
