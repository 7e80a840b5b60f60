//! Gaussian MLP policy, value critic, GAE and the PPO clipped-surrogate update.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::nn::{
    self, clip_grad_norm, Activation, AdamState, Checkpoint, CheckpointKind, LayerSpec, Mlp,
    ParamStore,
};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Diagonal Gaussian policy with a state-independent learnable `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_log_std: f64,
        seed: u64,
    ) -> Result<Self> {
        let mean = Mlp::new(
            nn::mlp_specs(state_dim, hidden, action_dim, Activation::Tanh),
            seed,
        )?;
        Self::from_parts(mean, vec![init_log_std; action_dim])
    }

    pub fn from_parts(mean: Mlp, log_std: Vec<f64>) -> Result<Self> {
        if log_std.len() != mean.out_dim() {
            return Err(Error::Dim {
                context: "log_std",
                expected: mean.out_dim(),
                actual: log_std.len(),
            });
        }
        check_finite(&log_std, "log_std")?;
        let log_std = log_std
            .into_iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self { mean, log_std })
    }

    /// A single linear layer computing `W s + b` as the mean.
    pub fn linear(
        weights: Vec<f64>,
        bias: Vec<f64>,
        state_dim: usize,
        log_std: f64,
    ) -> Result<Self> {
        let action_dim = bias.len();
        let specs = vec![LayerSpec::new(state_dim, action_dim, Activation::Identity)];
        let mut values = weights;
        values.extend(bias);
        let params = ParamStore::from_values(&specs, values)?.with_names("mean");
        Self::from_parts(Mlp::from_parts(specs, params)?, vec![log_std; action_dim])
    }

    pub fn state_dim(&self) -> usize {
        self.mean.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean.out_dim()
    }

    /// Mean-net parameters followed by `log_std`.
    pub fn num_params(&self) -> usize {
        self.mean.num_params() + self.log_std.len()
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() {
            return Err(Error::Dim {
                context: "policy state",
                expected: self.state_dim(),
                actual: s.len(),
            });
        }
        check_finite(s, "policy state")
    }

    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_state(s)?;
        let mu = self.mean.forward(s)?;
        check_finite(&mu, "policy mean")?;
        Ok(mu)
    }

    /// `a = mean(s) + std * z`, `z ~ N(0, I)`, with its exact log-density.
    pub fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
        let mu = self.mean_action(s)?;
        let a: Vec<f64> = mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect();
        let logp = gaussian_logp(&mu, &self.log_std, &a);
        Ok((a, logp))
    }

    /// `0.5 * sum(1 + ln 2pi + 2 log_std)`
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| 0.5 * (1.0 + (2.0 * PI).ln()) + ls)
            .sum()
    }

    pub fn logp_entropy(&self, s: &[f64], a: &[f64]) -> Result<(f64, f64)> {
        if a.len() != self.action_dim() {
            return Err(Error::Dim {
                context: "policy action",
                expected: self.action_dim(),
                actual: a.len(),
            });
        }
        let mu = self.mean_action(s)?;
        Ok((gaussian_logp(&mu, &self.log_std, a), self.entropy()))
    }

    /// Gradient of `log pi(a|s)` with respect to `[mean params | log_std]`.
    pub fn logp_grad(&self, s: &[f64], a: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_state(s)?;
        let mut grad = vec![0.0; self.num_params()];
        let logp = self.accumulate_logp_grad(s, a, 1.0, &mut grad);
        Ok((logp, grad))
    }

    /// Adds `scale * d log pi(a|s)` into `grad`; returns `log pi(a|s)`.
    fn accumulate_logp_grad(&self, s: &[f64], a: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let trace = self.mean.trace(s);
        let mu = trace.output();
        let logp = gaussian_logp(mu, &self.log_std, a);
        if scale != 0.0 {
            let n_mean = self.mean.num_params();
            let mut upstream = Vec::with_capacity(mu.len());
            for (j, ((m, ls), x)) in mu.iter().zip(&self.log_std).zip(a).enumerate() {
                let var = (2.0 * ls).exp();
                let diff = x - m;
                upstream.push(scale * diff / var);
                grad[n_mean + j] += scale * (diff * diff / var - 1.0);
            }
            self.mean
                .backward_into(&trace, &upstream, &mut grad[..n_mean]);
        }
        logp
    }

    fn apply_flat_update(
        &mut self,
        opt: &mut AdamState,
        grad: &[f64],
        lr_scale: f64,
    ) -> Result<()> {
        let n_mean = self.mean.num_params();
        let mut flat = Vec::with_capacity(self.num_params());
        flat.extend_from_slice(self.mean.params().values());
        flat.extend_from_slice(&self.log_std);
        opt.apply(&mut flat, grad, lr_scale)?;
        self.mean
            .params_mut()
            .values_mut()
            .copy_from_slice(&flat[..n_mean]);
        for (ls, v) in self.log_std.iter_mut().zip(&flat[n_mean..]) {
            *ls = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, critic: Option<&Critic>) -> Checkpoint {
        let mut nets = vec![self.mean.clone()];
        if let Some(c) = critic {
            nets.push(c.net.clone());
        }
        Checkpoint {
            kind: CheckpointKind::Policy,
            nets,
            extra: self.log_std.clone(),
        }
    }

    /// Policy (and critic, when stored) from a policy checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Option<Critic>)> {
        if ckpt.kind != CheckpointKind::Policy {
            return Err(Error::Format(format!(
                "checkpoint kind '{}' is not a policy",
                ckpt.kind.name()
            )));
        }
        let mean = ckpt
            .nets
            .first()
            .cloned()
            .ok_or_else(|| Error::Format("policy checkpoint has no mean network".into()))?;
        let policy = Self::from_parts(mean, ckpt.extra.clone())?;
        let critic = ckpt
            .nets
            .get(1)
            .cloned()
            .map(Critic::from_net)
            .transpose()?;
        Ok((policy, critic))
    }
}

pub fn gaussian_logp(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// State-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(state_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        Self::from_net(Mlp::new(
            nn::mlp_specs(state_dim, hidden, 1, Activation::Tanh),
            seed,
        )?)
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::Dim {
                context: "critic output",
                expected: 1,
                actual: net.out_dim(),
            });
        }
        Ok(Self { net })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.net.forward(s)?[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub rollout_len: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Anneal the policy learning rate linearly to zero over the run; the
    /// critic keeps its base rate.
    pub lr_decay: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.001,
            epochs: 10,
            minibatch_size: 64,
            rollout_len: 2048,
            lr: 3e-4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            lr_decay: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_owned()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("ppo.clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("ppo.gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("ppo.gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_len == 0 {
            return bad("ppo.epochs, ppo.minibatch_size and ppo.rollout_len must be >= 1");
        }
        if !(self.lr >= 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("ppo.lr must be >= 0 and ppo.max_grad_norm > 0");
        }
        Ok(())
    }
}

/// On-policy transitions for one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub states: Vec<Vec<f64>>,
    /// Sampled (unclipped) actions, the ones `log_probs` refer to.
    pub actions: Vec<Vec<f64>>,
    /// Actions as executed by the environment (after clamping); what the
    /// discriminator sees.
    pub env_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    /// `len() + 1` entries once the bootstrap value is pushed.
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        state: Vec<f64>,
        action: Vec<f64>,
        env_action: Vec<f64>,
        log_prob: f64,
        value: f64,
        done: bool,
    ) {
        self.states.push(state);
        self.actions.push(action);
        self.env_actions.push(env_action);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(0.0);
        self.dones.push(done);
    }

    pub fn has_bootstrap(&self) -> bool {
        self.values.len() == self.len() + 1
    }

    /// Fills `advantages` and `returns` by GAE.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// `delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, returns `A + V[..n]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 {
        return Err(Error::Dim {
            context: "GAE values (with bootstrap)",
            expected: n + 1,
            actual: values.len(),
        });
    }
    if dones.len() != n {
        return Err(Error::Dim {
            context: "GAE done flags",
            expected: n,
            actual: dones.len(),
        });
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * values[t + 1] - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// `(x - mean) / (std + 1e-8)`
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// `min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Optimizer state carried across PPO updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptimizer {
    pub actor: AdamState,
    pub critic: AdamState,
}

impl PpoOptimizer {
    pub fn new(policy: &GaussianPolicy, critic: &Critic, lr: f64) -> Self {
        Self {
            actor: AdamState::new(policy.num_params(), lr),
            critic: AdamState::new(critic.net.num_params(), lr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean total loss over all minibatches.
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    /// Mean ratio of the very first minibatch; 1 up to rounding.
    pub first_ratio: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// Loss terms and gradients of one minibatch.
#[derive(Debug, Clone)]
pub struct MinibatchLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub approx_kl: f64,
    /// `[mean params | log_std]`
    pub policy_grad: Vec<f64>,
    pub critic_grad: Vec<f64>,
}

/// `-mean(surrogate) + value_coef * mean((V - R)^2) - entropy_coef * H`
/// and its gradient, for the samples `idx` of `buffer` with the given
/// (already normalized) advantages.
pub fn ppo_minibatch_loss(
    policy: &GaussianPolicy,
    critic: &Critic,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
) -> MinibatchLoss {
    let n = idx.len() as f64;
    let mut policy_grad = vec![0.0; policy.num_params()];
    let mut critic_grad = vec![0.0; critic.net.num_params()];
    let (mut pl, mut vl, mut ratio_sum, mut clipped, mut kl) = (0.0, 0.0, 0.0, 0usize, 0.0);
    for &i in idx {
        let s = &buffer.states[i];
        let a = &buffer.actions[i];
        let adv = advantages[i];
        // Forward for the ratio first; the gradient scale depends on it.
        let mu = policy.mean.forward(s).unwrap_or_default();
        let logp = gaussian_logp(&mu, &policy.log_std, a);
        let log_ratio = logp - buffer.log_probs[i];
        let ratio = log_ratio.exp();
        let surr = clipped_surrogate(ratio, adv, cfg.clip);
        pl -= surr / n;
        ratio_sum += ratio;
        kl += (ratio - 1.0 - log_ratio) / n;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        // The unclipped branch is active iff ratio*A <= clip(ratio)*A.
        let unclipped_active = ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        if unclipped_active {
            policy.accumulate_logp_grad(s, a, -adv * ratio / n, &mut policy_grad);
        }

        let trace = critic.net.trace(s);
        let v = trace.output()[0];
        let err = v - buffer.returns[i];
        vl += err * err / n;
        critic
            .net
            .backward_into(&trace, &[cfg.value_coef * 2.0 * err / n], &mut critic_grad);
    }
    let entropy = policy.entropy();
    let n_mean = policy.mean.num_params();
    for g in &mut policy_grad[n_mean..] {
        *g -= cfg.entropy_coef;
    }
    MinibatchLoss {
        loss: pl + cfg.value_coef * vl - cfg.entropy_coef * entropy,
        policy_loss: pl,
        value_loss: vl,
        entropy,
        mean_ratio: ratio_sum / n,
        clip_frac: clipped as f64 / n,
        approx_kl: kl,
        policy_grad,
        critic_grad,
    }
}

/// `cfg.epochs` passes of shuffled minibatch Adam steps on the clipped
/// surrogate. Requires advantages and returns in `buffer`.
pub fn ppo_update(
    policy: &GaussianPolicy,
    critic: &Critic,
    opt: &mut PpoOptimizer,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    lr_scale: f64,
    rng: &mut Rng,
) -> Result<(GaussianPolicy, Critic, PpoStats)> {
    let n = buffer.len();
    if n == 0 || buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::Invalid(
            "PPO update needs a buffer with computed advantages".into(),
        ));
    }
    let advantages = if cfg.normalize_advantages {
        normalize(&buffer.advantages)
    } else {
        buffer.advantages.clone()
    };
    let mut policy = policy.clone();
    let mut critic = critic.clone();
    let mut stats = PpoStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let mut mb = ppo_minibatch_loss(&policy, &critic, buffer, &advantages, idx, cfg);
            if !mb.loss.is_finite() {
                return Err(Error::Numerical {
                    module: "ppo",
                    iteration: stats.minibatches,
                    detail: format!(
                        "loss {} (policy {}, value {}, mean ratio {})",
                        mb.loss, mb.policy_loss, mb.value_loss, mb.mean_ratio
                    ),
                });
            }
            if stats.minibatches == 0 {
                stats.first_ratio = mb.mean_ratio;
            }
            clip_grad_norm(&mut mb.policy_grad, cfg.max_grad_norm);
            clip_grad_norm(&mut mb.critic_grad, cfg.max_grad_norm);
            policy.apply_flat_update(&mut opt.actor, &mb.policy_grad, lr_scale)?;
            // The learning-rate schedule applies to the policy only.
            opt.critic
                .apply(critic.net.params_mut().values_mut(), &mb.critic_grad, 1.0)?;
            stats.policy_loss += mb.policy_loss;
            stats.value_loss += mb.value_loss;
            stats.entropy += mb.entropy;
            stats.loss += mb.loss;
            stats.mean_ratio += mb.mean_ratio;
            stats.clip_frac += mb.clip_frac;
            stats.approx_kl += mb.approx_kl;
            stats.minibatches += 1;
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.loss /= k;
    stats.mean_ratio /= k;
    stats.clip_frac /= k;
    stats.approx_kl /= k;
    Ok((policy, critic, stats))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn tight_policy_samples_near_mean() {
        let mut p = GaussianPolicy::new(2, 2, &[8], LOG_STD_MIN, 1).unwrap();
        p.log_std = vec![LOG_STD_MIN; 2];
        let s = [0.2, -0.3];
        let mu = p.mean_action(&s).unwrap();
        let (a1, _) = p.sample(&s, &mut rng::from_seed(3)).unwrap();
        let (a2, _) = p.sample(&s, &mut rng::from_seed(3)).unwrap();
        assert_eq!(a1, a2);
        let std = LOG_STD_MIN.exp();
        for (a, m) in a1.iter().zip(&mu) {
            assert!((a - m).abs() < 5.0 * std);
        }
    }

    #[test]
    fn log_density_at_mode() {
        let p = GaussianPolicy::new(3, 2, &[4], 0.0, 2).unwrap();
        let s = [0.1, 0.2, 0.3];
        let mu = p.mean_action(&s).unwrap();
        let (lp, _) = p.logp_entropy(&s, &mu).unwrap();
        assert!((lp + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_closed_form() {
        let mut p = GaussianPolicy::new(1, 1, &[4], 0.0, 0).unwrap();
        assert!((p.entropy() - 0.5 * (1.0 + (2.0 * PI).ln())).abs() < 1e-12);
        assert!((p.entropy() - 1.4189385332046727).abs() < 1e-12);
        let before = p.entropy();
        p.log_std[0] += 2f64.ln();
        assert!((p.entropy() - before - 2f64.ln()).abs() < 1e-12);
        assert!(p.logp_entropy(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        let p = GaussianPolicy::new(2, 2, &[8], -0.5, 7).unwrap();
        let s = [0.5, 0.5];
        let mu = p.mean_action(&s).unwrap();
        let mut r = rng::from_seed(1);
        let n = 10_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let (a, _) = p.sample(&s, &mut r).unwrap();
            sum[0] += a[0];
            sum[1] += a[1];
        }
        let se = (-0.5f64).exp() / (n as f64).sqrt();
        for j in 0..2 {
            assert!((sum[j] / n as f64 - mu[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let p = GaussianPolicy::new(2, 3, &[8], -0.3, 4).unwrap();
        let s = [0.1, -0.1];
        let mut r = rng::from_seed(8);
        let n = 10_000;
        let samples: Vec<f64> = (0..n).map(|_| -p.sample(&s, &mut r).unwrap().1).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - p.entropy()).abs() < 3.0 * se,
            "{mean} vs {}",
            p.entropy()
        );
    }

    #[test]
    fn logp_gradient_matches_finite_differences() {
        let p = GaussianPolicy::new(3, 2, &[6, 6], -0.4, 5).unwrap();
        let s = [0.3, -0.8, 0.5];
        let a = [0.7, -0.2];
        let (_, g) = p.logp_grad(&s, &a).unwrap();
        let h = 1e-5;
        let n_mean = p.mean.num_params();
        for i in 0..p.num_params() {
            let eval = |d: f64| {
                let mut q = p.clone();
                if i < n_mean {
                    q.mean.params_mut().values_mut()[i] += d;
                } else {
                    q.log_std[i - n_mean] += d;
                }
                q.logp_entropy(&s, &a).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-7);
            assert!(rel < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gae_two_step_example() {
        let (adv, ret) =
            compute_gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], &[false, false], 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![2.0, 1.0]);
        assert_eq!(ret, vec![2.0, 1.0]);
        assert!(compute_gae(&[1.0], &[0.0], &[false], 1.0, 1.0).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn gae_with_zero_lambda_is_td_error() {
        let r = [0.5, -1.0, 2.0];
        let v = [0.1, 0.2, -0.3, 0.4];
        let d = [false, true, false];
        let (adv, _) = compute_gae(&r, &v, &d, 0.9, 0.0).unwrap();
        for t in 0..3 {
            let live = if d[t] { 0.0 } else { 1.0 };
            assert_eq!(adv[t], r[t] + 0.9 * live * v[t + 1] - v[t]);
        }
    }

    #[test]
    fn surrogate_clip_arithmetic() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    fn toy_buffer(policy: &GaussianPolicy, critic: &Critic, n: usize, seed: u64) -> RolloutBuffer {
        let mut r = rng::from_seed(seed);
        let mut buf = RolloutBuffer::default();
        for i in 0..n {
            let s = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let (a, lp) = policy.sample(&s, &mut r).unwrap();
            let v = critic.value(&s).unwrap();
            buf.push(s, a.clone(), a, lp, v, i % 5 == 4);
            buf.rewards[i] = r.random_range(-1.0..1.0);
        }
        buf.values.push(0.0);
        buf.compute_gae(0.99, 0.95).unwrap();
        buf
    }

    #[test]
    fn ppo_loss_gradient_matches_finite_differences() {
        let policy = GaussianPolicy::new(2, 2, &[8, 8], -0.2, 1).unwrap();
        let critic = Critic::new(2, &[8, 8], 2).unwrap();
        let buf = toy_buffer(&policy, &critic, 12, 3);
        // Perturb the policy so ratios differ from 1 and some get clipped.
        let mut moved = policy.clone();
        moved
            .mean
            .params_mut()
            .values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += 0.05 * ((i % 7) as f64 - 3.0));
        moved.log_std[0] += 0.1;
        let cfg = PpoConfig {
            entropy_coef: 0.01,
            ..PpoConfig::default()
        };
        let adv = normalize(&buf.advantages);
        let idx: Vec<usize> = (0..12).collect();
        let mb = ppo_minibatch_loss(&moved, &critic, &buf, &adv, &idx, &cfg);
        assert!(
            mb.clip_frac > 0.0 && mb.clip_frac < 1.0,
            "clip frac {}",
            mb.clip_frac
        );
        let h = 1e-6;
        let n_mean = moved.mean.num_params();
        let mut worst: f64 = 0.0;
        for i in 0..moved.num_params() {
            let eval = |d: f64| {
                let mut q = moved.clone();
                if i < n_mean {
                    q.mean.params_mut().values_mut()[i] += d;
                } else {
                    q.log_std[i - n_mean] += d;
                }
                ppo_minibatch_loss(&q, &critic, &buf, &adv, &idx, &cfg).loss
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = mb.policy_grad[i];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "worst rel err {worst}");
        for i in (0..critic.net.num_params()).step_by(3) {
            let eval = |d: f64| {
                let mut c = critic.clone();
                c.net.params_mut().values_mut()[i] += d;
                ppo_minibatch_loss(&moved, &c, &buf, &adv, &idx, &cfg).loss
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let g = mb.critic_grad[i];
            assert!((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6) < 1e-5);
        }
    }

    #[test]
    fn first_ratio_is_one() {
        let policy = GaussianPolicy::new(2, 2, &[8], 0.0, 1).unwrap();
        let critic = Critic::new(2, &[8], 2).unwrap();
        let buf = toy_buffer(&policy, &critic, 64, 3);
        let mut opt = PpoOptimizer::new(&policy, &critic, 3e-4);
        let (_, _, stats) = ppo_update(
            &policy,
            &critic,
            &mut opt,
            &buf,
            &PpoConfig::default(),
            1.0,
            &mut rng::from_seed(0),
        )
        .unwrap();
        assert!((stats.first_ratio - 1.0).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&stats.clip_frac));
        assert_eq!(stats.minibatches, 10);
    }

    #[test]
    fn bandit_converges_to_optimum() {
        // One state, reward -(a - 0.7)^2, single-step episodes.
        let mut policy = GaussianPolicy::new(1, 1, &[16], 0.0, 3).unwrap();
        let mut critic = Critic::new(1, &[16], 4).unwrap();
        let cfg = PpoConfig {
            rollout_len: 64,
            minibatch_size: 32,
            epochs: 4,
            lr: 3e-3,
            entropy_coef: 0.0,
            ..PpoConfig::default()
        };
        let mut opt = PpoOptimizer::new(&policy, &critic, cfg.lr);
        let mut r = rng::from_seed(11);
        for _ in 0..200 {
            let mut buf = RolloutBuffer::default();
            for i in 0..cfg.rollout_len {
                let s = vec![0.0];
                let (a, lp) = policy.sample(&s, &mut r).unwrap();
                let v = critic.value(&s).unwrap();
                buf.push(s, a.clone(), a.clone(), lp, v, true);
                buf.rewards[i] = -(a[0] - 0.7).powi(2);
            }
            buf.values.push(0.0);
            buf.compute_gae(cfg.gamma, cfg.gae_lambda).unwrap();
            let (p, c, _) =
                ppo_update(&policy, &critic, &mut opt, &buf, &cfg, 1.0, &mut r).unwrap();
            policy = p;
            critic = c;
        }
        let mean = policy.mean_action(&[0.0]).unwrap()[0];
        assert!((mean - 0.7).abs() < 0.05, "mean {mean}");
    }

    proptest! {
        #[test]
        fn gae_matches_brute_force(seed in any::<u64>(), n in 1usize..=32, gamma in 0.5f64..1.0, lambda in 0.0f64..=1.0) {
            let mut r = rng::from_seed(seed);
            let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..=n).map(|_| r.random_range(-2.0..2.0)).collect();
            let dones: Vec<bool> = (0..n).map(|_| r.random_bool(0.2)).collect();
            let (adv, _) = compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();
            for t in 0..n {
                let mut total = 0.0;
                let mut w = 1.0;
                for l in t..n {
                    let live = if dones[l] { 0.0 } else { 1.0 };
                    total += w * (rewards[l] + gamma * live * values[l + 1] - values[l]);
                    if dones[l] { break; }
                    w *= gamma * lambda;
                }
                prop_assert!((adv[t] - total).abs() < 1e-12);
            }
        }

        #[test]
        fn normalized_advantages_ignore_constant_shift(xs in proptest::collection::vec(-10.0f64..10.0, 2..40), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let a = normalize(&xs);
            let b = normalize(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
