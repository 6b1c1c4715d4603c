use rand::Rng;

use super::resample::multinomial_resample;
use super::weights::{effective_sample_size, normalize_log_weights};
use super::{FilterConfig, Incidents, StepOutcome};
use crate::env::{EnvError, Environment};
use crate::models::Pose;
use crate::scalar::Scalar;

/// A system a bootstrap particle filter can run on.
pub trait ParticleModel<T: Scalar> {
    type State: Clone;
    type Control;
    type Observation: ?Sized;
    type Estimate;

    /// Draws the next state from the motion model.
    fn propagate<R: Rng + ?Sized>(&self, state: &Self::State, control: &Self::Control, rng: &mut R) -> Self::State;

    /// `log L(z* | state)` up to an additive constant shared by all states.
    fn log_likelihood<R: Rng + ?Sized>(&self, state: &Self::State, observation: &Self::Observation, rng: &mut R) -> T;

    fn estimate(&self, states: &[Self::State], weights: &[T]) -> Self::Estimate;
}

/// Weighted particle ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<S, T> {
    pub states: Vec<S>,
    pub weights: Vec<T>,
}

impl<S, T: Scalar> ParticleSet<S, T> {
    /// Equal weights `1/N`.
    pub fn uniform(states: Vec<S>) -> Self {
        let w = T::one() / T::from_count(states.len());
        let weights = vec![w; states.len()];
        Self { states, weights }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `n` poses drawn uniformly over free space, equally weighted.
pub fn pf_init<T: Scalar, R: Rng + ?Sized>(
    env: &Environment<T>,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet<Pose<T>, T>, EnvError> {
    let states = (0..n).map(|_| env.sample_free_pose(rng)).collect::<Result<Vec<_>, _>>()?;
    Ok(ParticleSet::uniform(states))
}

/// One propagate/weight/estimate/resample cycle.
pub fn pf_step<T, M, R>(
    set: &mut ParticleSet<M::State, T>,
    control: &M::Control,
    observation: &M::Observation,
    model: &M,
    cfg: &FilterConfig<T>,
    rng: &mut R,
) -> StepOutcome<M::Estimate>
where
    T: Scalar,
    M: ParticleModel<T>,
    R: Rng + ?Sized,
{
    let mut log_w = Vec::with_capacity(set.len());
    for (state, &w) in set.states.iter_mut().zip(&set.weights) {
        *state = model.propagate(state, control, rng);
        log_w.push(w.ln() + model.log_likelihood(state, observation, rng));
    }
    let mut incidents = Incidents::default();
    if !normalize_log_weights(&mut log_w) {
        incidents.weight_resets += 1;
    }
    set.weights = log_w;
    let estimate = model.estimate(&set.states, &set.weights);
    let neff = effective_sample_size(&set.weights);
    let resampled = cfg.should_resample(neff, set.len());
    if resampled {
        multinomial_resample(&mut set.states, &mut set.weights, rng);
    }
    StepOutcome { estimate, effective_sample_size: neff, resampled, incidents }
}
