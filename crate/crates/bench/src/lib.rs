//! Fixtures shared by the benchmarks: point_reach-sized networks and a
//! rollout collected from a fresh policy.

use drail_core::env::{Env, EnvConfig};
use drail_core::rng;
use drail_core::trainer::collect_rollout;
use drail_core::{Critic, DenoiserConfig, DrailClassifier, GaussianPolicy, RolloutBuffer};

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;

pub fn denoiser_config() -> DenoiserConfig {
    DenoiserConfig {
        state_dim: STATE_DIM,
        action_dim: ACTION_DIM,
        ..DenoiserConfig::default()
    }
}

pub fn classifier(samples: usize) -> DrailClassifier {
    DrailClassifier::new(denoiser_config(), 1e-3, samples, 1).expect("valid config")
}

pub fn policy_and_critic() -> (GaussianPolicy, Critic) {
    (
        GaussianPolicy::new(STATE_DIM, ACTION_DIM, &[64, 64], -0.5, 2).expect("valid policy"),
        Critic::new(STATE_DIM, &[64, 64], 3).expect("valid critic"),
    )
}

/// A point_reach rollout of `n` steps with GAE already computed.
pub fn rollout(n: usize) -> RolloutBuffer {
    let (policy, critic) = policy_and_critic();
    let mut r = rng::from_seed(4);
    let mut env = Env::new(&EnvConfig::default(), &mut r).expect("default env");
    let (mut buf, _) = collect_rollout(&mut env, &policy, &critic, n, &mut r).expect("rollout");
    buf.compute_gae(0.99, 0.95).expect("gae");
    buf
}
