use crate::models::Pose;
use crate::scalar::{wrap_angle, Scalar};

/// Turns per-particle log weights into normalized weights in place.
///
/// Returns `false` when no weight survives (all `-inf` or non-finite); the
/// weights are then reset to uniform.
pub fn normalize_log_weights<T: Scalar>(log_weights: &mut [T]) -> bool {
    let n = log_weights.len();
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| w.as_f64().is_finite())
        .fold(None, |m: Option<T>, w| Some(m.map_or(w, |m| if w > m { w } else { m })));
    let uniform = T::one() / T::from_count(n);
    let Some(max) = max else {
        log_weights.iter_mut().for_each(|w| *w = uniform);
        return false;
    };
    let mut total = T::zero();
    for w in log_weights.iter_mut() {
        *w = if w.as_f64().is_finite() { (*w - max).exp() } else { T::zero() };
        total += *w;
    }
    let total64 = total.as_f64();
    if total64 <= 0.0 || !total64.is_finite() {
        log_weights.iter_mut().for_each(|w| *w = uniform);
        return false;
    }
    log_weights.iter_mut().for_each(|w| *w /= total);
    true
}

/// `⌊1 / Σ wᵢ²⌋`, clamped to `[1, N]`.
///
/// A relative slack of `1e-9` absorbs rounding so that exactly uniform
/// weights report `N`.
pub fn effective_sample_size<T: Scalar>(weights: &[T]) -> usize {
    let n = weights.len();
    if n == 0 {
        return 0;
    }
    let sum_sq = weights.iter().fold(0.0, |acc, &w| {
        let w = w.as_f64();
        acc + w * w
    });
    if sum_sq.is_nan() || sum_sq <= 0.0 {
        return 1;
    }
    let inv = 1.0 / sum_sq;
    ((inv * (1.0 + 1e-9)).floor() as usize).clamp(1, n)
}

/// Weighted circular mean `atan2(Σ w sin φ, Σ w cos φ)` in `[0, 2π)`.
pub fn circular_mean<T: Scalar>(angles: impl Iterator<Item = T>, weights: &[T]) -> T {
    let (s, c) = angles.zip(weights).fold((T::zero(), T::zero()), |(s, c), (a, &w)| {
        let (sa, ca) = a.sin_cos();
        (s + w * sa, c + w * ca)
    });
    wrap_angle(s.atan2(c))
}

/// Weighted mean position with a circular mean heading.
pub fn weighted_pose_mean<T: Scalar>(poses: &[Pose<T>], weights: &[T]) -> Pose<T> {
    let (x, y) = poses
        .iter()
        .zip(weights)
        .fold((T::zero(), T::zero()), |(x, y), (p, &w)| (x + w * p.x, y + w * p.y));
    Pose { x, y, phi: circular_mean(poses.iter().map(|p| p.phi), weights) }
}
