//! Planar localization with range-only beacon measurements.
//!
//! The crate provides grid-world maps with beacons and rectangular
//! obstacles, the unicycle motion and range measurement models, three
//! estimators (EKF, particle filter, multiparticle Kalman filter), a
//! trajectory simulator, loss functions and a benchmark harness.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the usual double-precision instantiation.

pub mod bench;
pub mod env;
pub mod filters;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

pub type Environment64 = env::Environment<f64>;
pub type Environment32 = env::Environment<f32>;
pub type Pose64 = models::Pose<f64>;
pub type Pose32 = models::Pose<f32>;
pub type Control64 = models::Control<f64>;
pub type Measurement64 = models::Measurement<f64>;
pub type FilterConfig64 = filters::FilterConfig<f64>;
pub type GaussianBelief64 = filters::GaussianBelief<f64>;
pub type KalmanParticleSet64 = filters::KalmanParticleSet<f64>;
pub type ParticleSet64 = filters::ParticleSet<models::Pose<f64>, f64>;
