use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::scalar::Scalar;

/// Draws `weights.len()` indices i.i.d. from `Multinomial(w)`.
///
/// A single particle is returned as-is without consuming randomness.
pub fn multinomial_indices<T: Scalar, R: Rng + ?Sized>(weights: &[T], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if n <= 1 {
        return (0..n).collect();
    }
    let dist = WeightedIndex::new(weights.iter().map(|w| w.as_f64().max(0.0)))
        .expect("resampling requires normalized non-negative weights");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Copies `v[indices[j]]` into slot `j`.
pub(crate) fn gather<S: Clone>(v: &[S], indices: &[usize]) -> Vec<S> {
    indices.iter().map(|&i| v[i].clone()).collect()
}

/// Stochastic resampling of `states`; weights are reset to `1/N`.
/// Returns the drawn ancestor indices.
pub fn multinomial_resample<S: Clone, T: Scalar, R: Rng + ?Sized>(
    states: &mut Vec<S>,
    weights: &mut [T],
    rng: &mut R,
) -> Vec<usize> {
    let indices = multinomial_indices(weights, rng);
    *states = gather(states, &indices);
    let uniform = T::one() / T::from_count(weights.len());
    weights.iter_mut().for_each(|w| *w = uniform);
    indices
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_weights_clone_the_particle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut states: Vec<u32> = (0..10).collect();
        let mut w = vec![0.0f64; 10];
        w[6] = 1.0;
        multinomial_resample(&mut states, &mut w, &mut rng);
        assert!(states.iter().all(|&s| s == 6));
        assert!(w.iter().all(|&x| x == 0.1));
    }

    #[test]
    fn paired_arrays_stay_paired() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states: Vec<usize> = (0..50).collect();
        let extras: Vec<String> = (0..50).map(|i| format!("P{i}")).collect();
        let w: Vec<f64> = (0..50).map(|i| (i + 1) as f64).map(|x| x / 1275.0).collect();
        let idx = multinomial_indices(&w, &mut rng);
        let (s, e) = (gather(&states, &idx), gather(&extras, &idx));
        for (a, b) in s.iter().zip(&e) {
            assert_eq!(format!("P{a}"), *b);
        }
    }

    #[test]
    fn single_particle_consumes_no_randomness() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let before = rng.clone();
        assert_eq!(multinomial_indices(&[1.0f64], &mut rng), vec![0]);
        assert_eq!(rng, before);
    }
}
