//! Per-call costs of the inner loops: network passes, discriminator
//! updates, reward labeling, GAE and PPO minibatch gradients.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use drail_bench::{classifier, policy_and_critic, rollout};
use drail_core::discriminator::Pair;
use drail_core::policy::{compute_gae, ppo_minibatch_loss};
use drail_core::rng;
use drail_core::trainer::label_rewards;
use drail_core::{Discriminator, PpoConfig};

fn networks(c: &mut Criterion) {
    let clf = classifier(1);
    let net = clf.denoiser.net();
    let input = vec![0.1; net.in_dim()];
    c.bench_function("denoiser_forward", |b| {
        b.iter(|| net.forward(black_box(&input)).unwrap())
    });
    c.bench_function("denoiser_forward_backward", |b| {
        let mut grad = vec![0.0; net.num_params()];
        b.iter(|| {
            let trace = net.trace(black_box(&input));
            net.backward_into(&trace, &[1.0; 8], &mut grad)
        })
    });
}

fn discriminator(c: &mut Criterion) {
    let buf = rollout(256);
    let pairs: Vec<Pair<'_>> = buf
        .states
        .iter()
        .zip(&buf.env_actions)
        .map(|(s, a)| (&s[..], &a[..]))
        .collect();
    let (expert, agent) = pairs[..256].split_at(128);
    for m in [1, 4] {
        let clf = classifier(m);
        c.bench_function(&format!("classifier_update_128x2_m{m}"), |b| {
            let mut r = rng::from_seed(0);
            b.iter_batched(
                || clf.clone(),
                |mut d| d.update(expert, agent, &mut r).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
}

fn labeling(c: &mut Criterion) {
    let disc = Discriminator::Drail(classifier(1));
    let buf = rollout(2048);
    c.bench_function("label_rewards_2048", |b| {
        let mut r = rng::from_seed(0);
        b.iter_batched(
            || buf.clone(),
            |mut bb| label_rewards(&mut bb, &disc, 20.0, 1, &mut r).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn policy(c: &mut Criterion) {
    let buf = rollout(2048);
    c.bench_function("gae_2048", |b| {
        b.iter(|| {
            compute_gae(black_box(&buf.rewards), &buf.values, &buf.dones, 0.99, 0.95).unwrap()
        })
    });
    let (pol, critic) = policy_and_critic();
    let idx: Vec<usize> = (0..64).collect();
    let cfg = PpoConfig::default();
    c.bench_function("ppo_minibatch_64", |b| {
        b.iter(|| ppo_minibatch_loss(&pol, &critic, &buf, black_box(&buf.advantages), &idx, &cfg))
    });
}

criterion_group!(benches, networks, discriminator, labeling, policy);
criterion_main!(benches);
