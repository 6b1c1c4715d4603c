//! Unicycle motion model and range-only beacon measurement model.
//!
//! The object state is a [`Pose`] `(x, y, phi)`. A [`Control`] `(u, dphi)`
//! moves it by
//!
//! ```text
//! x' = x + (u + eta_r) cos(phi + dphi + eta_phi)
//! y' = y + (u + eta_r) sin(phi + dphi + eta_phi)
//! phi' = phi + dphi + eta_phi
//! ```
//!
//! and the sensor reports the distances to the `k` nearest beacons, each
//! corrupted by additive Gaussian noise.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::scalar::{gaussian, uniform, wrap_angle, Scalar};

/// Beacon distances below this are treated as a degenerate linearization point.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

/// Half-width of the simulator's uniform radial speed noise.
pub const TRUTH_RADIAL_HALF_WIDTH: f64 = 0.02;

/// Half-width of the simulator's uniform heading noise, in turns (multiplied by 2π).
pub const TRUTH_ANGULAR_HALF_WIDTH_TURNS: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("requested {requested} beacons but the environment has {available}")]
    TooManyBeacons { requested: usize, available: usize },
    #[error("beacon index {index} out of range ({available} beacons)")]
    InvalidBeacon { index: usize, available: usize },
    #[error("measurement length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("noise vector has {got} entries, expected {expected}")]
    NoiseLength { expected: usize, got: usize },
    #[error("position coincides with beacon {index} (distance {distance:e}); jacobian undefined")]
    DegenerateGeometry { index: usize, distance: f64 },
}

/// Planar pose; `phi` is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Pose<T> {
    pub x: T,
    pub y: T,
    pub phi: T,
}

impl<T: Scalar> Pose<T> {
    pub fn new(x: T, y: T, phi: T) -> Self {
        Self { x, y, phi: wrap_angle(phi) }
    }

    pub fn position(&self) -> Point2<T> {
        Point2::new(self.x, self.y)
    }

    pub fn to_vector(&self) -> Vector3<T> {
        Vector3::new(self.x, self.y, self.phi)
    }

    /// Builds a pose from a state vector, wrapping the heading.
    pub fn from_vector(v: &Vector3<T>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// Squared planar distance to another pose (heading ignored).
    pub fn distance_sq(&self, other: &Pose<T>) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Commanded speed and heading change for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Control<T> {
    pub u: T,
    pub dphi: T,
}

impl<T: Scalar> Control<T> {
    pub fn new(u: T, dphi: T) -> Self {
        Self { u, dphi }
    }

    pub fn zero() -> Self {
        Self { u: T::zero(), dphi: T::zero() }
    }
}

/// One realization of the motion noise: radial and heading components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionNoise<T> {
    pub radial: T,
    pub angular: T,
}

impl<T: Scalar> MotionNoise<T> {
    pub fn zero() -> Self {
        Self { radial: T::zero(), angular: T::zero() }
    }
}

/// Distribution of the motion noise.
///
/// The simulator perturbs the true object with a uniform law while the
/// filters assume a Gaussian with covariance `M = diag(var_radial, var_angular)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "law", rename_all = "snake_case")]
pub enum MotionNoiseModel<T> {
    Uniform { radial_half_width: T, angular_half_width: T },
    Gaussian { var_radial: T, var_angular: T },
}

impl<T: Scalar> MotionNoiseModel<T> {
    /// The ground-truth engine noise: `eta_r ~ U[-0.02, 0.02]`, `eta_phi = 2π·U[-0.01, 0.01]`.
    pub fn truth() -> Self {
        Self::Uniform {
            radial_half_width: T::lit(TRUTH_RADIAL_HALF_WIDTH),
            angular_half_width: T::two_pi() * T::lit(TRUTH_ANGULAR_HALF_WIDTH_TURNS),
        }
    }

    pub fn gaussian(var_radial: T, var_angular: T) -> Self {
        Self::Gaussian { var_radial, var_angular }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MotionNoise<T> {
        match *self {
            Self::Uniform { radial_half_width, angular_half_width } => MotionNoise {
                radial: uniform(rng, -radial_half_width, radial_half_width),
                angular: uniform(rng, -angular_half_width, angular_half_width),
            },
            Self::Gaussian { var_radial, var_angular } => MotionNoise {
                radial: gaussian(rng, var_radial.sqrt()),
                angular: gaussian(rng, var_angular.sqrt()),
            },
        }
    }

    /// Covariance of the law as a `(var_radial, var_angular)` pair.
    pub fn variances(&self) -> (T, T) {
        match *self {
            Self::Uniform { radial_half_width: a, angular_half_width: b } => {
                let three = T::lit(3.0);
                (a * a / three, b * b / three)
            }
            Self::Gaussian { var_radial, var_angular } => (var_radial, var_angular),
        }
    }
}

/// Isotropic Gaussian range noise, `R = var · I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MeasurementNoiseModel<T> {
    pub var: T,
}

impl<T: Scalar> MeasurementNoiseModel<T> {
    pub fn new(var: T) -> Self {
        Self { var }
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<T> {
        let sigma = self.var.sqrt();
        (0..k).map(|_| gaussian(rng, sigma)).collect()
    }

    pub fn covariance(&self, k: usize) -> DMatrix<T> {
        DMatrix::from_diagonal_element(k, k, self.var)
    }
}

/// Distances to `k` beacons together with the beacon indices they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Measurement<T> {
    pub beacon_indices: Vec<usize>,
    pub distances: Vec<T>,
}

impl<T: Scalar> Measurement<T> {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// Applies the unicycle update with explicit noise.
pub fn motion_step<T: Scalar>(pose: &Pose<T>, control: &Control<T>, noise: &MotionNoise<T>) -> Pose<T> {
    let heading = pose.phi + control.dphi + noise.angular;
    let step = control.u + noise.radial;
    let (s, c) = heading.sin_cos();
    Pose {
        x: pose.x + step * c,
        y: pose.y + step * s,
        phi: wrap_angle(heading),
    }
}

/// `∂f/∂x` of the noiseless motion step.
pub fn motion_jacobian<T: Scalar>(pose: &Pose<T>, control: &Control<T>) -> Matrix3<T> {
    let (s, c) = (pose.phi + control.dphi).sin_cos();
    let (zero, one) = (T::zero(), T::one());
    Matrix3::new(
        one, zero, -control.u * s, //
        zero, one, control.u * c, //
        zero, zero, one,
    )
}

/// Noisy measurement of the true pose: the `k` nearest beacons plus `zeta`.
pub fn measure<T: Scalar>(
    env: &Environment<T>,
    pose: &Pose<T>,
    k: usize,
    zeta: &[T],
) -> Result<Measurement<T>, ModelError> {
    if zeta.len() != k {
        return Err(ModelError::NoiseLength { expected: k, got: zeta.len() });
    }
    let nearest = env.k_nearest_beacons(&pose.position(), k)?;
    Ok(Measurement {
        beacon_indices: nearest.iter().map(|&(i, _)| i).collect(),
        distances: nearest.iter().zip(zeta).map(|(&(_, d), &z)| d + z).collect(),
    })
}

/// Noiseless measurement a hypothesis at `pose` would produce.
///
/// Without an association the `k` beacons nearest to the hypothesis are used
/// in ascending order, which keeps symmetric layouts ambiguous. With an
/// association the distances to exactly those beacons are returned in the
/// given order.
pub fn predict_measurement<T: Scalar>(
    env: &Environment<T>,
    pose: &Pose<T>,
    k: usize,
    association: Option<&[usize]>,
) -> Result<Measurement<T>, ModelError> {
    match association {
        None => measure(env, pose, k, &vec![T::zero(); k]),
        Some(indices) => {
            let p = pose.position();
            let distances = indices
                .iter()
                .map(|&i| {
                    env.beacons()
                        .get(i)
                        .map(|b| crate::env::point_distance(&p, b))
                        .ok_or(ModelError::InvalidBeacon { index: i, available: env.beacons().len() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Measurement { beacon_indices: indices.to_vec(), distances })
        }
    }
}

/// `∂g/∂x` for the listed beacons; the heading column is zero.
pub fn measurement_jacobian<T: Scalar>(
    env: &Environment<T>,
    pose: &Pose<T>,
    beacon_indices: &[usize],
) -> Result<DMatrix<T>, ModelError> {
    let mut h = DMatrix::zeros(beacon_indices.len(), 3);
    let eps = T::lit(DEGENERATE_DISTANCE);
    for (row, &i) in beacon_indices.iter().enumerate() {
        let b = env
            .beacons()
            .get(i)
            .ok_or(ModelError::InvalidBeacon { index: i, available: env.beacons().len() })?;
        let dx = pose.x - b.x;
        let dy = pose.y - b.y;
        let d = (dx * dx + dy * dy).sqrt();
        if d < eps {
            return Err(ModelError::DegenerateGeometry { index: i, distance: d.as_f64() });
        }
        h[(row, 0)] = dx / d;
        h[(row, 1)] = dy / d;
    }
    Ok(h)
}

/// Log-density of an isotropic Gaussian with variance `var` per component,
/// given the squared norm of the residual.
#[inline]
pub fn isotropic_log_density<T: Scalar>(residual_sq: T, k: usize, var: T) -> T {
    let half = T::lit(0.5);
    let kf = T::from_count(k);
    -half * kf * (T::two_pi() * var).ln() - half * residual_sq / var
}

/// `log N(z_star; z_pred, var·I)`.
pub fn log_likelihood<T: Scalar>(
    z_star: &Measurement<T>,
    z_pred: &Measurement<T>,
    noise: &MeasurementNoiseModel<T>,
) -> Result<T, ModelError> {
    if z_star.len() != z_pred.len() {
        return Err(ModelError::LengthMismatch { left: z_star.len(), right: z_pred.len() });
    }
    let r2 = z_star
        .distances
        .iter()
        .zip(&z_pred.distances)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(isotropic_log_density(r2, z_star.len(), noise.var))
}

pub fn sample_motion_noise<T: Scalar, R: Rng + ?Sized>(model: &MotionNoiseModel<T>, rng: &mut R) -> MotionNoise<T> {
    model.sample(rng)
}

pub fn sample_measurement_noise<T: Scalar, R: Rng + ?Sized>(
    model: &MeasurementNoiseModel<T>,
    k: usize,
    rng: &mut R,
) -> Vec<T> {
    model.sample(k, rng)
}
