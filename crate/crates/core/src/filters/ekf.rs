use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::Rng;

use super::FilterError;
use crate::scalar::Scalar;

/// Innovation covariances whose condition estimate exceeds this are treated
/// as singular and the update is skipped.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Mean and covariance of a Gaussian over the 3-dimensional state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief<T: Scalar> {
    pub mean: Vector3<T>,
    pub covariance: Matrix3<T>,
}

impl<T: Scalar> GaussianBelief<T> {
    pub fn new(mean: Vector3<T>, covariance: Matrix3<T>) -> Self {
        Self { mean, covariance }
    }

    /// Symmetric within `tol` and eigenvalues `≥ -tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        covariance_is_valid(&self.covariance, tol)
    }
}

pub(crate) fn symmetrize<T: Scalar>(p: &Matrix3<T>) -> Matrix3<T> {
    (p + p.transpose()) * T::lit(0.5)
}

pub(crate) fn covariance_is_valid<T: Scalar>(p: &Matrix3<T>, tol: f64) -> bool {
    let p64: Matrix3<f64> = p.map(|v| v.as_f64());
    if !p64.iter().all(|v| v.is_finite()) {
        return false;
    }
    if (p64 - p64.transpose()).amax() > tol {
        return false;
    }
    let eig = SymmetricEigen::new(p64);
    eig.eigenvalues.iter().all(|&l| l >= -tol)
}

/// Output of the motion side of a model: the propagated mean, its Jacobian
/// and the process covariance to add.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePrediction<T: Scalar> {
    pub mean: Vector3<T>,
    pub jacobian: Matrix3<T>,
    pub process_covariance: Matrix3<T>,
}

/// Output of the measurement side: `z* − z`, `H` and `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLinearization<T: Scalar> {
    pub innovation: DVector<T>,
    pub jacobian: DMatrix<T>,
    pub noise: DMatrix<T>,
}

/// A system the EKF recursion can run on.
///
/// Process randomness is drawn separately from its use so that one draw can
/// serve many beliefs within a step.
pub trait EkfModel<T: Scalar> {
    type Control;
    type Observation: ?Sized;
    type ProcessDraws;

    fn draw_process<R: Rng + ?Sized>(&self, control: &Self::Control, rng: &mut R) -> Self::ProcessDraws;

    fn predict_state(&self, mean: &Vector3<T>, control: &Self::Control, draws: &Self::ProcessDraws) -> StatePrediction<T>;

    fn linearize_measurement(
        &self,
        mean: &Vector3<T>,
        observation: &Self::Observation,
    ) -> Result<MeasurementLinearization<T>, FilterError>;

    /// Maps an updated mean back onto the state manifold (e.g. wraps angles).
    fn normalize_state(&self, mean: Vector3<T>) -> Vector3<T> {
        mean
    }
}

/// Prediction step with fresh process draws.
pub fn ekf_predict<T: Scalar, M: EkfModel<T>, R: Rng + ?Sized>(
    belief: &GaussianBelief<T>,
    control: &M::Control,
    model: &M,
    rng: &mut R,
) -> GaussianBelief<T> {
    let draws = model.draw_process(control, rng);
    ekf_predict_with(belief, control, model, &draws)
}

/// Prediction step with given process draws: `P ← F P Fᵀ + Q`.
pub fn ekf_predict_with<T: Scalar, M: EkfModel<T>>(
    belief: &GaussianBelief<T>,
    control: &M::Control,
    model: &M,
    draws: &M::ProcessDraws,
) -> GaussianBelief<T> {
    let pred = model.predict_state(&belief.mean, control, draws);
    let f = pred.jacobian;
    let p = f * belief.covariance * f.transpose() + pred.process_covariance;
    GaussianBelief { mean: pred.mean, covariance: symmetrize(&p) }
}

/// Measurement update. On error the caller keeps the prior belief.
pub fn ekf_update<T: Scalar, M: EkfModel<T>>(
    belief: &GaussianBelief<T>,
    observation: &M::Observation,
    model: &M,
) -> Result<GaussianBelief<T>, FilterError> {
    let lin = model.linearize_measurement(&belief.mean, observation)?;
    let h = &lin.jacobian;
    let p = DMatrix::from_column_slice(3, 3, belief.covariance.as_slice());
    let pht = &p * h.transpose();
    let s = h * &pht + &lin.noise;
    let s = (&s + s.transpose()) * T::lit(0.5);
    let s_inv = match s.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => return Err(FilterError::SingularInnovation { condition: f64::INFINITY }),
    };
    // tr(S)·tr(S⁻¹) bounds the spectral condition number from above.
    let condition = s.trace().as_f64() * s_inv.trace().as_f64();
    if !condition.is_finite() || condition > MAX_INNOVATION_CONDITION {
        return Err(FilterError::SingularInnovation { condition });
    }
    let k = &pht * &s_inv;
    let dx = &k * &lin.innovation;
    let mean = model.normalize_state(belief.mean + Vector3::new(dx[0], dx[1], dx[2]));
    let kh = &k * h;
    let i_kh = Matrix3::identity() - Matrix3::from_column_slice(kh.as_slice());
    let cov = i_kh * belief.covariance;
    Ok(GaussianBelief { mean, covariance: symmetrize(&cov) })
}
