//! Linear-Gaussian systems the estimators can also run on. They share the
//! generic recursions with the planar model, which makes exact Kalman
//! solutions available for comparison.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;

use super::ekf::{EkfModel, MeasurementLinearization, StatePrediction};
use super::pf::ParticleModel;
use super::FilterError;
use crate::scalar::{gaussian, Scalar};

/// `x' = A x + B c + w`, `z = C x + v` with `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianSystem<T: Scalar> {
    pub a: Matrix3<T>,
    pub b: Matrix3<T>,
    pub q: Matrix3<T>,
    pub c: DMatrix<T>,
    pub r: DMatrix<T>,
}

impl<T: Scalar> EkfModel<T> for LinearGaussianSystem<T> {
    type Control = Vector3<T>;
    type Observation = DVector<T>;
    type ProcessDraws = ();

    fn draw_process<R: Rng + ?Sized>(&self, _control: &Vector3<T>, _rng: &mut R) {}

    fn predict_state(&self, mean: &Vector3<T>, control: &Vector3<T>, _draws: &()) -> StatePrediction<T> {
        StatePrediction { mean: self.a * mean + self.b * control, jacobian: self.a, process_covariance: self.q }
    }

    fn linearize_measurement(
        &self,
        mean: &Vector3<T>,
        observation: &DVector<T>,
    ) -> Result<MeasurementLinearization<T>, FilterError> {
        let predicted = &self.c * DVector::from_column_slice(mean.as_slice());
        Ok(MeasurementLinearization { innovation: observation - predicted, jacobian: self.c.clone(), noise: self.r.clone() })
    }
}

/// Scalar random walk `x' = a x + c + w`, `z = x + v`, for particle methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLinearGaussian<T> {
    pub a: T,
    pub process_var: T,
    pub measurement_var: T,
}

impl<T: Scalar> ParticleModel<T> for ScalarLinearGaussian<T> {
    type State = T;
    type Control = T;
    type Observation = T;
    type Estimate = T;

    fn propagate<R: Rng + ?Sized>(&self, state: &T, control: &T, rng: &mut R) -> T {
        self.a * *state + *control + gaussian(rng, self.process_var.sqrt())
    }

    fn log_likelihood<R: Rng + ?Sized>(&self, state: &T, observation: &T, _rng: &mut R) -> T {
        let r = *observation - *state;
        -r * r / (T::lit(2.0) * self.measurement_var)
    }

    fn estimate(&self, states: &[T], weights: &[T]) -> T {
        states.iter().zip(weights).fold(T::zero(), |acc, (&x, &w)| acc + w * x)
    }
}
