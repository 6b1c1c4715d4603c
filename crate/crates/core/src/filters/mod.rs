//! The three estimators: extended Kalman filter, particle filter with
//! stochastic resampling, and the multiparticle Kalman filter in which every
//! particle carries its own EKF mean and covariance.

mod ekf;
pub mod linear;
mod mkf;
mod pf;
mod planar;
mod resample;
mod weights;

pub use ekf::{
    ekf_predict, ekf_predict_with, ekf_update, EkfModel, GaussianBelief, MeasurementLinearization, StatePrediction,
    MAX_INNOVATION_CONDITION,
};
pub use mkf::{mkf_init, mkf_step, roughen, KalmanParticleSet};
pub use pf::{pf_init, pf_step, ParticleModel, ParticleSet};
pub use planar::{HeadingFrameCovariance, PlanarModel};
pub use resample::{multinomial_indices, multinomial_resample};
pub use weights::{circular_mean, effective_sample_size, normalize_log_weights, weighted_pose_mean};

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::models::ModelError;
use crate::scalar::Scalar;

/// Ground-truth radial speed noise scale used for the filters' `M₀`.
pub const SIGMA_R0: f64 = 0.02;
/// Ground-truth heading noise scale, in turns, used for the filters' `M₀`.
pub const SIGMA_PHI0_TURNS: f64 = 0.01;
/// Ground-truth range noise variance, `R₀ = σ²_d0 · I`.
pub const SIGMA_D0_SQ: f64 = 0.01;
/// Default sample count for the sampled process covariance.
pub const DEFAULT_Q_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("invalid filter configuration: {0}")]
    Config(String),
}

/// Recoverable events counted while filtering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incidents {
    /// Kalman updates skipped because of a singular innovation or degenerate geometry.
    pub skipped_updates: u64,
    /// Steps in which every weight underflowed and weights were reset to uniform.
    pub weight_resets: u64,
}

impl Incidents {
    pub fn absorb(&mut self, other: Incidents) {
        self.skipped_updates += other.skipped_updates;
        self.weight_resets += other.weight_resets;
    }
}

/// Result of one particle-filter or multiparticle step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    /// Weighted estimate, computed from the post-update weights before resampling.
    pub estimate: S,
    pub effective_sample_size: usize,
    pub resampled: bool,
    pub incidents: Incidents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Pf,
    Mkf,
    Ekf,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Pf => "pf",
            FilterKind::Mkf => "mkf",
            FilterKind::Ekf => "ekf",
        }
    }

    /// Whether the hypothesis-side prediction is perturbed by `ζ`: the
    /// particle filter adds it, the Kalman-based filters predict noiselessly.
    pub fn default_predicted_measurement_noise(&self) -> bool {
        matches!(self, FilterKind::Pf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pf" => Ok(FilterKind::Pf),
            "mkf" => Ok(FilterKind::Mkf),
            "ekf" => Ok(FilterKind::Ekf),
            other => Err(FilterError::Config(format!("unknown filter kind `{other}`"))),
        }
    }
}

/// Scale of the assumed motion noise: `Σ` means `M = M₀`, `4Σ` means
/// `M = 4M₀`; both use `R = 2R₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseSetting {
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "4sigma")]
    FourSigma,
}

impl NoiseSetting {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseSetting::Sigma => "sigma",
            NoiseSetting::FourSigma => "4sigma",
        }
    }

    pub fn motion_scale(&self) -> f64 {
        match self {
            NoiseSetting::Sigma => 1.0,
            NoiseSetting::FourSigma => 4.0,
        }
    }
}

impl fmt::Display for NoiseSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseSetting {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigma" | "Σ" => Ok(NoiseSetting::Sigma),
            "4sigma" | "4Σ" => Ok(NoiseSetting::FourSigma),
            other => Err(FilterError::Config(format!("unknown noise setting `{other}`"))),
        }
    }
}

/// Filter hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<T> {
    pub particles: usize,
    pub k_measure: usize,
    /// Diagonal of the assumed motion covariance `M`.
    pub motion_var_radial: T,
    pub motion_var_angular: T,
    /// Per-component variance of `R`.
    pub measurement_var: T,
    /// `None` selects `diag(wh/12, wh/12, (2π)²/12)` for the map at hand.
    pub initial_covariance: Option<Matrix3<T>>,
    /// Sample count `s` of the sampled process covariance.
    pub q_samples: usize,
    pub resample_every_step: bool,
    /// With `resample_every_step == false`, resample when `N_eff ≤ fraction · N`.
    pub neff_threshold_fraction: T,
    /// `None` follows [`FilterKind::default_predicted_measurement_noise`].
    pub predicted_measurement_noise: Option<bool>,
    /// Perturb resampled multiparticle states with `N(0, M)` motion noise.
    pub roughening: bool,
}

impl<T: Scalar> FilterConfig<T> {
    pub fn new(particles: usize, setting: NoiseSetting) -> Self {
        let scale = setting.motion_scale();
        let sigma_phi0 = SIGMA_PHI0_TURNS * std::f64::consts::TAU;
        Self {
            particles,
            k_measure: 5,
            motion_var_radial: T::lit(scale * SIGMA_R0 * SIGMA_R0),
            motion_var_angular: T::lit(scale * sigma_phi0 * sigma_phi0),
            measurement_var: T::lit(2.0 * SIGMA_D0_SQ),
            initial_covariance: None,
            q_samples: DEFAULT_Q_SAMPLES,
            resample_every_step: true,
            neff_threshold_fraction: T::lit(0.5),
            predicted_measurement_noise: None,
            roughening: true,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let fail = |m: &str| Err(FilterError::Config(m.to_string()));
        if self.particles == 0 {
            return fail("particle count must be at least 1");
        }
        if self.k_measure == 0 {
            return fail("k_measure must be at least 1");
        }
        if self.q_samples < 2 {
            return fail("q_samples must be at least 2");
        }
        if !(self.motion_var_radial >= T::zero() && self.motion_var_angular >= T::zero()) {
            return fail("motion variances must be non-negative");
        }
        let r = self.measurement_var.as_f64();
        if r.is_nan() || r <= 0.0 {
            return fail("measurement variance must be positive");
        }
        if !(self.neff_threshold_fraction > T::zero() && self.neff_threshold_fraction <= T::one()) {
            return fail("neff_threshold_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn check_environment(&self, env: &Environment<T>) -> Result<(), FilterError> {
        self.validate()?;
        if self.k_measure > env.beacons().len() {
            return Err(ModelError::TooManyBeacons { requested: self.k_measure, available: env.beacons().len() }.into());
        }
        Ok(())
    }

    pub fn initial_covariance_for(&self, env: &Environment<T>) -> Matrix3<T> {
        self.initial_covariance.unwrap_or_else(|| default_initial_covariance(env))
    }

    pub fn predicted_measurement_noise_for(&self, kind: FilterKind) -> bool {
        self.predicted_measurement_noise.unwrap_or_else(|| kind.default_predicted_measurement_noise())
    }

    /// Whether a step over `n` particles with this effective sample size should resample.
    pub fn should_resample(&self, neff: usize, n: usize) -> bool {
        self.resample_every_step || T::from_count(neff) <= self.neff_threshold_fraction * T::from_count(n)
    }
}

/// `diag(wh/12, wh/12, (2π)²/12)`: uniform spread over the map and heading.
pub fn default_initial_covariance<T: Scalar>(env: &Environment<T>) -> Matrix3<T> {
    let twelve = T::lit(12.0);
    let area = env.width() * env.height() / twelve;
    let two_pi = T::two_pi();
    Matrix3::from_diagonal(&nalgebra::Vector3::new(area, area, two_pi * two_pi / twelve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Preset;

    #[test]
    fn initial_covariance_for_ten_by_ten() {
        let env = Preset::World10.build::<f64>(false, 0).unwrap();
        let p0 = default_initial_covariance(&env);
        assert!((p0[(0, 0)] - 100.0 / 12.0).abs() < 1e-12);
        assert!((p0[(1, 1)] - 8.333333333333334).abs() < 1e-12);
        assert!((p0[(2, 2)] - 3.289868133696453).abs() < 1e-12);
        assert_eq!(p0[(0, 1)], 0.0);
    }

    #[test]
    fn setting_scales_motion_only() {
        let a = FilterConfig::<f64>::new(10, NoiseSetting::Sigma);
        let b = FilterConfig::<f64>::new(10, NoiseSetting::FourSigma);
        assert!((b.motion_var_radial / a.motion_var_radial - 4.0).abs() < 1e-12);
        assert!((b.motion_var_angular / a.motion_var_angular - 4.0).abs() < 1e-12);
        assert_eq!(a.measurement_var, b.measurement_var);
        assert!((a.measurement_var - 0.02).abs() < 1e-15);
        assert!((a.motion_var_angular.sqrt() - 0.01 * std::f64::consts::TAU).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = FilterConfig::<f64>::new(0, NoiseSetting::Sigma);
        assert!(c.validate().is_err());
        c.particles = 3;
        c.q_samples = 1;
        assert!(c.validate().is_err());
        c.q_samples = 2;
        assert!(c.validate().is_ok());
        c.neff_threshold_fraction = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn resample_policy() {
        let mut c = FilterConfig::<f64>::new(100, NoiseSetting::Sigma);
        assert!(c.should_resample(100, 100));
        c.resample_every_step = false;
        assert!(!c.should_resample(51, 100));
        assert!(c.should_resample(50, 100));
    }

    #[test]
    fn names_parse() {
        for k in [FilterKind::Pf, FilterKind::Mkf, FilterKind::Ekf] {
            assert_eq!(k.name().parse::<FilterKind>().unwrap(), k);
        }
        assert_eq!("4sigma".parse::<NoiseSetting>().unwrap(), NoiseSetting::FourSigma);
        assert!(FilterKind::Pf.default_predicted_measurement_noise());
        assert!(!FilterKind::Mkf.default_predicted_measurement_noise());
    }
}
