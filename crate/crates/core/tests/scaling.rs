//! Coarse cost check of the multiparticle step. Kept in its own binary so
//! no other test competes for the CPU while it is timed.

use std::time::Instant;

use beaconloc::env::{Environment, Preset};
use beaconloc::filters::{mkf_init, mkf_step, FilterConfig, FilterKind, KalmanParticleSet, NoiseSetting, PlanarModel};
use beaconloc::models::{measure, Control, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Bench<'a> {
    env: &'a Environment<f64>,
    cfg: FilterConfig<f64>,
    initial: KalmanParticleSet<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Bench<'a> {
    fn new(env: &'a Environment<f64>, n: usize) -> Self {
        let cfg = FilterConfig::new(n, NoiseSetting::Sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let initial = mkf_init(env, n, &cfg.initial_covariance_for(env), &mut rng).unwrap();
        Self { env, cfg, initial, rng }
    }

    fn time_step(&mut self) -> f64 {
        let model = PlanarModel::new(self.env, &self.cfg, FilterKind::Mkf);
        let z = measure(self.env, &Pose::new(3.0, 3.5, 0.2), 5, &[0.0; 5]).unwrap();
        let mut set = self.initial.clone();
        let clock = Instant::now();
        mkf_step(&mut set, &Control::new(0.2, 0.0), &z, &model, &self.cfg, &mut self.rng);
        clock.elapsed().as_secs_f64()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn doubling_particles_doubles_step_time() {
    let env: Environment<f64> = Preset::World10.build(false, 0).unwrap();
    let mut small = Bench::new(&env, 2000);
    let mut large = Bench::new(&env, 4000);
    small.time_step();
    large.time_step();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..31 {
        a.push(small.time_step());
        b.push(large.time_step());
    }
    let ratio = median(b) / median(a);
    assert!((ratio - 2.0).abs() <= 0.5, "doubling N changed step time by {ratio:.2}x");
}
