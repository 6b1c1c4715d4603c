use nalgebra::Matrix3;
use rand::Rng;

use super::ekf::{ekf_predict_with, ekf_update, EkfModel, GaussianBelief};
use super::planar::PlanarModel;
use super::resample::{gather, multinomial_indices};
use super::weights::{effective_sample_size, normalize_log_weights, weighted_pose_mean};
use super::{FilterConfig, Incidents, StepOutcome};
use crate::env::{EnvError, Environment};
use crate::models::{motion_step, Control, Measurement, MotionNoiseModel, Pose};
use crate::scalar::Scalar;

/// Particles that each carry an EKF mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanParticleSet<T: Scalar> {
    pub states: Vec<Pose<T>>,
    pub covariances: Vec<Matrix3<T>>,
    pub weights: Vec<T>,
}

impl<T: Scalar> KalmanParticleSet<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Uniform poses over free space, each with covariance `p0`.
pub fn mkf_init<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    n: usize,
    p0: &Matrix3<T>,
    rng: &mut R,
) -> Result<KalmanParticleSet<T>, EnvError> {
    let states = (0..n).map(|_| env.sample_free_pose(rng)).collect::<Result<Vec<_>, _>>()?;
    let w = T::one() / T::from_count(n);
    Ok(KalmanParticleSet { covariances: vec![*p0; n], weights: vec![w; n], states })
}

/// One multiparticle step: a particle-wise EKF predict and update, weighting
/// by the noiseless likelihood at the updated mean, the estimate, then joint
/// resampling of (state, covariance) pairs followed by roughening.
///
/// The process-covariance draws are shared by all particles of the step.
pub fn mkf_step<T: Scalar, R: Rng + ?Sized>(
    set: &mut KalmanParticleSet<T>,
    control: &Control<T>,
    z_star: &Measurement<T>,
    model: &PlanarModel<'_, T>,
    cfg: &FilterConfig<T>,
    rng: &mut R,
) -> StepOutcome<Pose<T>> {
    let mut incidents = Incidents::default();
    let draws = model.draw_process(control, rng);
    let mut log_w = Vec::with_capacity(set.len());
    for ((state, cov), &w) in set.states.iter_mut().zip(set.covariances.iter_mut()).zip(&set.weights) {
        let prior = GaussianBelief::new(state.to_vector(), *cov);
        let predicted = ekf_predict_with(&prior, control, model, &draws);
        let posterior = match ekf_update(&predicted, z_star, model) {
            Ok(b) => b,
            Err(_) => {
                incidents.skipped_updates += 1;
                predicted
            }
        };
        *state = Pose::from_vector(&posterior.mean);
        *cov = posterior.covariance;
        log_w.push(w.ln() + model.log_likelihood(state, z_star));
    }
    if !normalize_log_weights(&mut log_w) {
        incidents.weight_resets += 1;
    }
    set.weights = log_w;
    let estimate = weighted_pose_mean(&set.states, &set.weights);
    let neff = effective_sample_size(&set.weights);
    let resampled = cfg.should_resample(neff, set.len());
    if resampled {
        let idx = multinomial_indices(&set.weights, rng);
        set.states = gather(&set.states, &idx);
        set.covariances = gather(&set.covariances, &idx);
        let uniform = T::one() / T::from_count(set.len());
        set.weights.iter_mut().for_each(|w| *w = uniform);
        if cfg.roughening {
            roughen(set, &model.motion, rng);
        }
    }
    StepOutcome { estimate, effective_sample_size: neff, resampled, incidents }
}

/// Replaces each state by `f(x, 0, η)`, `η ~ motion`; covariances and
/// weights are untouched.
pub fn roughen<T: Scalar, R: Rng + ?Sized>(set: &mut KalmanParticleSet<T>, motion: &MotionNoiseModel<T>, rng: &mut R) {
    let zero = Control::zero();
    for state in set.states.iter_mut() {
        *state = motion_step(state, &zero, &motion.sample(rng));
    }
}
