//! The alternating imitation loop, behaviour cloning, evaluation and the
//! reward-landscape export.
//!
//! One iteration of [`train`] is: collect a rollout, update the
//! discriminator for one epoch over it, label the rollout with clamped
//! discriminator rewards, run GAE, and run the PPO update.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::DenoiserConfig;
use crate::discriminator::{
    DiffailDiscriminator, Discriminator, DiscriminatorKind, DrailClassifier, GailDiscriminator,
    Pair,
};
use crate::env::{
    Actor, Env, EnvConfig, EnvKind, ExpertDataset, GridBounds, PointReachConfig, SineWorldSpec,
};
use crate::error::{check_finite, Error, Result};
use crate::policy::{
    ppo_update, Critic, GaussianPolicy, PpoConfig, PpoOptimizer, PpoStats, RolloutBuffer,
};
use crate::rng::{self, Rng};

pub const CONFIG_SCHEMA: &str = "drail-train/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Drail,
    Gail,
    Diffail,
    Bc,
}

impl Method {
    pub fn discriminator_kind(self) -> Option<DiscriminatorKind> {
        match self {
            Method::Drail => Some(DiscriminatorKind::Drail),
            Method::Gail => Some(DiscriminatorKind::Gail),
            Method::Diffail => Some(DiscriminatorKind::Diffail),
            Method::Bc => None,
        }
    }
}

/// How much of the expert dataset to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertLimit {
    Trajectories(usize),
    Transitions(usize),
}

impl ExpertLimit {
    pub fn apply(self, ds: &ExpertDataset) -> Result<ExpertDataset> {
        match self {
            ExpertLimit::Trajectories(k) => ds.truncate_trajectories(k),
            ExpertLimit::Transitions(k) => ds.truncate_transitions(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    /// Learning rate of the discriminator.
    pub lr: f64,
    /// Agent pairs per discriminator minibatch; the same number of expert
    /// pairs is drawn with replacement.
    pub batch_size: usize,
    /// Passes over each fresh rollout.
    pub epochs: usize,
    /// Diffusion draws averaged per loss evaluation.
    pub samples: usize,
    /// GAIL hidden widths.
    pub gail_hidden: Vec<usize>,
    /// Sinusoidal octaves on the GAIL input (the denoiser has its own).
    pub gail_fourier_features: usize,
    /// DRAIL / DiffAIL denoiser; the data dims are taken from the env.
    pub denoiser: DenoiserConfig,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 128,
            epochs: 1,
            samples: 1,
            gail_hidden: vec![64, 64],
            gail_fourier_features: 0,
            denoiser: DenoiserConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub lr: f64,
    pub minibatch_size: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            minibatch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema: String,
    pub method: Method,
    pub env: EnvKind,
    pub expert_path: Option<PathBuf>,
    pub expert_limit: Option<ExpertLimit>,
    pub total_env_steps: usize,
    pub seed: u64,
    /// Spread multiplier of PointReach starts and goals.
    pub noise_scale: f64,
    pub wall: bool,
    pub horizon: usize,
    pub sine: SineWorldSpec,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
    pub ppo: PpoConfig,
    pub disc: DiscConfig,
    pub bc: BcConfig,
    /// Rewards are clipped to `[-reward_clamp, reward_clamp]`.
    pub reward_clamp: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_mode: EvalMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_owned(),
            method: Method::Drail,
            env: EnvKind::PointReach,
            expert_path: None,
            expert_limit: None,
            total_env_steps: 300_000,
            seed: 0,
            noise_scale: 1.0,
            wall: false,
            horizon: crate::env::HORIZON,
            sine: SineWorldSpec::default(),
            policy_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            init_log_std: -0.5,
            ppo: PpoConfig::default(),
            disc: DiscConfig::default(),
            bc: BcConfig::default(),
            reward_clamp: 20.0,
            eval_interval: 20_480,
            eval_episodes: 20,
            eval_mode: EvalMode::Deterministic,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Invalid(format!(
                "config schema '{}' is not supported (expected '{CONFIG_SCHEMA}')",
                self.schema
            )));
        }
        self.ppo.validate()?;
        if self.method != Method::Bc && self.total_env_steps < self.ppo.rollout_len {
            return Err(Error::Invalid(format!(
                "total_env_steps ({}) must be >= ppo.rollout_len ({})",
                self.total_env_steps, self.ppo.rollout_len
            )));
        }
        if self.disc.batch_size == 0 || self.disc.samples == 0 || self.disc.epochs == 0 {
            return Err(Error::Invalid(
                "disc.batch_size, disc.samples and disc.epochs must be >= 1".into(),
            ));
        }
        if !(self.disc.lr >= 0.0) {
            return Err(Error::Invalid("disc.lr must be >= 0".into()));
        }
        if !(self.reward_clamp > 0.0) {
            return Err(Error::Invalid("reward_clamp must be > 0".into()));
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Invalid(
                "eval_interval and eval_episodes must be >= 1".into(),
            ));
        }
        if self.bc.minibatch_size == 0 {
            return Err(Error::Invalid("bc.minibatch_size must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be >= 1".into()));
        }
        if self.env == EnvKind::Sine {
            self.sine.validate()?;
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            kind: self.env,
            point_reach: PointReachConfig {
                noise_scale: self.noise_scale,
                wall: self.wall,
                horizon: self.horizon,
            },
            sine: self.sine.clone(),
        }
    }

    /// Number of loop iterations the env-step budget buys.
    pub fn iterations(&self) -> usize {
        match self.method {
            Method::Bc => 0,
            _ => self.total_env_steps / self.ppo.rollout_len,
        }
    }

    pub fn build_discriminator(&self) -> Result<Option<Discriminator>> {
        let (sd, ad) = self.env.dims();
        let seed = rng::derive_seed(self.seed, "discriminator");
        let mut dcfg = self.disc.denoiser.clone();
        dcfg.state_dim = sd;
        dcfg.action_dim = ad;
        Ok(match self.method {
            Method::Drail => Some(Discriminator::Drail(DrailClassifier::new(
                dcfg,
                self.disc.lr,
                self.disc.samples,
                seed,
            )?)),
            Method::Diffail => Some(Discriminator::Diffail(DiffailDiscriminator::new(
                dcfg,
                self.disc.lr,
                self.disc.samples,
                seed,
            )?)),
            Method::Gail => Some(Discriminator::Gail(GailDiscriminator::with_encoding(
                sd,
                ad,
                &self.disc.gail_hidden,
                self.disc.gail_fourier_features,
                self.disc.lr,
                seed,
            )?)),
            Method::Bc => None,
        })
    }
}

// ---------------------------------------------------------------------------
// Actors
// ---------------------------------------------------------------------------

impl Actor for GaussianPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mean_action(state)
    }
}

/// A policy driven either by its mean or by sampling.
struct ModeActor<'a> {
    policy: &'a GaussianPolicy,
    mode: EvalMode,
}

// ---------------------------------------------------------------------------
// Rollouts and rewards
// ---------------------------------------------------------------------------

/// Outcomes of episodes that finished during a rollout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTally {
    pub episodes: usize,
    pub successes: usize,
}

/// `n_steps` transitions from `env`, resetting it whenever an episode ends.
/// The environment keeps its state across calls. Rewards are left at zero.
pub fn collect_rollout(
    env: &mut Env,
    policy: &GaussianPolicy,
    critic: &Critic,
    n_steps: usize,
    rng: &mut Rng,
) -> Result<(RolloutBuffer, EpisodeTally)> {
    let (sd, ad) = env.dims();
    if policy.state_dim() != sd || policy.action_dim() != ad {
        return Err(Error::Dim {
            context: "policy vs env",
            expected: sd * 1000 + ad,
            actual: policy.state_dim() * 1000 + policy.action_dim(),
        });
    }
    let mut buffer = RolloutBuffer::default();
    let mut tally = EpisodeTally::default();
    let mut obs = env.observation();
    for _ in 0..n_steps {
        let (action, logp) = policy.sample(&obs, rng)?;
        let value = critic.value(&obs)?;
        let env_action = env.clamp_action(&action);
        let out = env.step(&env_action)?;
        buffer.push(obs, action, env_action, logp, value, out.done);
        obs = if out.done {
            tally.episodes += 1;
            tally.successes += usize::from(out.success);
            env.reset(rng)?
        } else {
            out.state
        };
    }
    buffer.values.push(critic.value(&obs)?);
    Ok((buffer, tally))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelStats {
    pub mean_reward: f64,
    /// Rewards that hit the clamp.
    pub clamped: usize,
    /// DiffAIL loss-floor hits.
    pub saturated: usize,
}

/// Transitions labeled per independent RNG stream; the result does not
/// depend on the worker count.
const LABEL_CHUNK: usize = 256;

/// Fills `buffer.rewards` with clamped discriminator rewards on
/// `(state, env_action)`, fanning out over `threads` workers.
pub fn label_rewards(
    buffer: &mut RolloutBuffer,
    disc: &Discriminator,
    clamp: f64,
    threads: usize,
    rng: &mut Rng,
) -> Result<LabelStats> {
    let n = buffer.len();
    let base: u64 = rng.random();
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(LABEL_CHUNK)
        .map(|lo| lo..(lo + LABEL_CHUNK).min(n))
        .collect();
    let label_chunk = |k: usize| -> Result<Vec<(f64, bool)>> {
        let mut r = rng::from_seed(rng::derive_seed(base, &format!("label-{k}")));
        chunks[k]
            .clone()
            .map(|i| {
                let sample = disc.reward(&buffer.states[i], &buffer.env_actions[i], &mut r)?;
                Ok((sample.reward, sample.saturated))
            })
            .collect()
    };
    let threads = threads.clamp(1, chunks.len().max(1));
    type Labels = Result<Vec<(f64, bool)>>;
    let results: Vec<Labels> = if threads == 1 {
        (0..chunks.len()).map(label_chunk).collect()
    } else {
        let mut slots: Vec<Option<Labels>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let label_chunk = &label_chunk;
                    let n_chunks = chunks.len();
                    scope.spawn(move || {
                        (w..n_chunks)
                            .step_by(threads)
                            .map(|k| (k, label_chunk(k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, res) in h.join().expect("labeling worker panicked") {
                    slots[k] = Some(res);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every chunk labeled"))
            .collect()
    };
    let mut stats = LabelStats::default();
    let mut i = 0;
    for chunk in results {
        for (reward, saturated) in chunk? {
            if !reward.is_finite() {
                return Err(Error::NonFinite {
                    context: "discriminator reward",
                    index: i,
                });
            }
            let r = reward.clamp(-clamp, clamp);
            if r != reward {
                stats.clamped += 1;
            }
            stats.saturated += usize::from(saturated);
            stats.mean_reward += r;
            buffer.rewards[i] = r;
            i += 1;
        }
    }
    stats.mean_reward /= n.max(1) as f64;
    Ok(stats)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscStats {
    /// Mean pre-step loss over the minibatches.
    pub loss: f64,
    pub minibatches: usize,
}

/// `epochs` passes over the rollout in shuffled minibatches of `batch_size`
/// agent pairs, each matched by as many expert pairs drawn with replacement.
pub fn update_discriminator(
    disc: &mut Discriminator,
    expert: &ExpertDataset,
    buffer: &RolloutBuffer,
    batch_size: usize,
    epochs: usize,
    rng: &mut Rng,
) -> Result<DiscStats> {
    if buffer.is_empty() {
        return Err(Error::Invalid(
            "discriminator update needs a non-empty rollout".into(),
        ));
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = DiscStats::default();
    for _ in 0..epochs {
        order.shuffle(rng);
        for idx in order.chunks(batch_size) {
            let agent: Vec<Pair<'_>> = idx
                .iter()
                .map(|&i| {
                    (
                        buffer.states[i].as_slice(),
                        buffer.env_actions[i].as_slice(),
                    )
                })
                .collect();
            let expert_pairs: Vec<Pair<'_>> = (0..idx.len())
                .map(|_| {
                    let t = &expert.transitions[rng.random_range(0..expert.len())];
                    (t.state.as_slice(), t.action.as_slice())
                })
                .collect();
            let loss = disc.update(&expert_pairs, &agent, rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    module: "discriminator",
                    iteration: stats.minibatches,
                    detail: format!("loss {loss}"),
                });
            }
            stats.loss += loss;
            stats.minibatches += 1;
        }
    }
    stats.loss /= stats.minibatches as f64;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_return: f64,
    pub episodes: usize,
    pub successes: usize,
    pub per_seed: Vec<SeedReport>,
}

impl EvalReport {
    pub fn merge(reports: &[EvalReport]) -> Self {
        let episodes: usize = reports.iter().map(|r| r.episodes).sum();
        let successes: usize = reports.iter().map(|r| r.successes).sum();
        let total_return: f64 = reports
            .iter()
            .map(|r| r.mean_return * r.episodes as f64)
            .sum();
        Self {
            success_rate: successes as f64 / episodes.max(1) as f64,
            mean_return: total_return / episodes.max(1) as f64,
            episodes,
            successes,
            per_seed: reports.iter().flat_map(|r| r.per_seed.clone()).collect(),
        }
    }
}

fn run_episodes(
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
    mut act: impl FnMut(&[f64], &mut Rng) -> Result<Vec<f64>>,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Invalid(
            "evaluation needs at least one episode".into(),
        ));
    }
    let mut env_rng = rng::stream(seed, "eval-env");
    let mut act_rng = rng::stream(seed, "eval-actions");
    let mut env = Env::new(env_cfg, &mut env_rng)?;
    let mut successes = 0;
    let mut total_return = 0.0;
    for _ in 0..n_episodes {
        let mut obs = env.reset(&mut env_rng)?;
        loop {
            let a = env.clamp_action(&act(&obs, &mut act_rng)?);
            let out = env.step(&a)?;
            total_return += out.reward;
            if out.done {
                successes += usize::from(out.success);
                break;
            }
            obs = out.state;
        }
    }
    let success_rate = successes as f64 / n_episodes as f64;
    let mean_return = total_return / n_episodes as f64;
    Ok(EvalReport {
        success_rate,
        mean_return,
        episodes: n_episodes,
        successes,
        per_seed: vec![SeedReport {
            seed,
            episodes: n_episodes,
            successes,
            success_rate,
            mean_return,
        }],
    })
}

/// Runs `n_episodes` with the actor's deterministic action. Returns are the
/// environment's own rewards: 1 on reaching the goal for PointReach, minus
/// the distance to the curve for Sine.
pub fn evaluate(
    actor: &dyn Actor,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    run_episodes(env_cfg, n_episodes, seed, |s, _| actor.act(s))
}

/// Like [`evaluate`] for a Gaussian policy, optionally sampling actions.
pub fn evaluate_policy(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
    mode: EvalMode,
) -> Result<EvalReport> {
    let actor = ModeActor { policy, mode };
    run_episodes(env_cfg, n_episodes, seed, |s, r| match actor.mode {
        EvalMode::Deterministic => actor.policy.mean_action(s),
        EvalMode::Stochastic => Ok(actor.policy.sample(s, r)?.0),
    })
}

/// Evaluates over several seeds and merges the reports.
pub fn evaluate_seeds(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    n_per_seed: usize,
    seeds: &[u64],
    mode: EvalMode,
) -> Result<EvalReport> {
    let reports = seeds
        .iter()
        .map(|&s| evaluate_policy(policy, env_cfg, n_per_seed, s, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::merge(&reports))
}

// ---------------------------------------------------------------------------
// Behaviour cloning
// ---------------------------------------------------------------------------

/// Mean squared error between the policy mean and the expert actions,
/// averaged over transitions and action dims.
pub fn bc_loss(policy: &GaussianPolicy, dataset: &ExpertDataset) -> Result<f64> {
    let mut total = 0.0;
    for t in &dataset.transitions {
        let mu = policy.mean_action(&t.state)?;
        total += mu
            .iter()
            .zip(&t.action)
            .map(|(m, a)| (m - a).powi(2))
            .sum::<f64>();
    }
    Ok(total / (dataset.len() * policy.action_dim()) as f64)
}

/// Supervised regression of the policy mean onto expert actions with Adam
/// over shuffled minibatches. Returns the policy and the loss after every
/// epoch.
pub fn bc_train(
    dataset: &ExpertDataset,
    policy: &GaussianPolicy,
    cfg: &BcConfig,
    rng: &mut Rng,
) -> Result<(GaussianPolicy, Vec<f64>)> {
    dataset.validate()?;
    if dataset.state_dim != policy.state_dim() || dataset.action_dim != policy.action_dim() {
        return Err(Error::Dim {
            context: "bc dataset vs policy",
            expected: policy.state_dim() + policy.action_dim(),
            actual: dataset.state_dim + dataset.action_dim,
        });
    }
    let mut policy = policy.clone();
    let mut opt = crate::nn::AdamState::new(policy.mean.num_params(), cfg.lr);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let ad = policy.action_dim() as f64;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let mut grad = vec![0.0; policy.mean.num_params()];
            let scale = 2.0 / (idx.len() as f64 * ad);
            for &i in idx {
                let t = &dataset.transitions[i];
                let trace = policy.mean.trace(&t.state);
                let up: Vec<f64> = trace
                    .output()
                    .iter()
                    .zip(&t.action)
                    .map(|(m, a)| scale * (m - a))
                    .collect();
                policy.mean.backward_into(&trace, &up, &mut grad);
            }
            opt.apply(policy.mean.params_mut().values_mut(), &grad, 1.0)
                .map_err(|e| Error::Numerical {
                    module: "bc",
                    iteration: epoch,
                    detail: e.to_string(),
                })?;
        }
        losses.push(bc_loss(&policy, dataset)?);
    }
    Ok((policy, losses))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

pub const METRICS_HEADER: &str =
    "env_steps,iter,disc_loss,ppo_loss,mean_reward,success_rate,mean_return,clip_frac,clamped_rewards";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: usize,
    pub iter: usize,
    pub disc_loss: f64,
    pub ppo_loss: f64,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub clip_frac: f64,
    pub clamped_rewards: usize,
}

/// CSV text of a metrics log, header included.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        // `{:?}` on f64 is the shortest exact round-trip representation.
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            r.env_steps,
            r.iter,
            r.disc_loss,
            r.ppo_loss,
            r.mean_reward,
            r.success_rate,
            r.mean_return,
            r.clip_frac,
            r.clamped_rewards
        );
    }
    out
}

/// How often each stage ran.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub iterations: usize,
    pub rollouts: usize,
    pub disc_minibatches: usize,
    pub labelings: usize,
    pub gae_passes: usize,
    pub ppo_epochs: usize,
    pub ppo_minibatches: usize,
    pub env_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: GaussianPolicy,
    pub critic: Critic,
    pub discriminator: Option<Discriminator>,
    pub metrics: Vec<MetricsRow>,
    pub counters: Counters,
    pub final_eval: EvalReport,
}

/// Runtime knobs that do not change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

/// Loads the expert file named in the config and applies `expert_limit`.
pub fn load_expert(cfg: &TrainConfig) -> Result<ExpertDataset> {
    let path = cfg
        .expert_path
        .as_ref()
        .ok_or_else(|| Error::Invalid("expert_path is required".into()))?;
    let ds = ExpertDataset::load(path)?;
    match cfg.expert_limit {
        Some(limit) => limit.apply(&ds),
        None => Ok(ds),
    }
}

/// Reads the expert file from the config and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let expert = load_expert(cfg)?;
    train_with(cfg, &expert, RunOptions::default(), |_| {})
}

fn at_iteration(e: Error, iter: usize) -> Error {
    match e {
        Error::Numerical {
            module,
            iteration,
            detail,
        } => Error::Numerical {
            module,
            iteration: iter,
            detail: format!("{detail} (step {iteration} within the iteration)"),
        },
        Error::NonFinite { context, index } => Error::Numerical {
            module: context,
            iteration: iter,
            detail: format!("non-finite value at index {index}"),
        },
        other => other,
    }
}

/// The full loop on an in-memory expert dataset (`expert_limit` is applied
/// here too). `on_row` sees each metrics row as it is produced.
pub fn train_with(
    cfg: &TrainConfig,
    expert: &ExpertDataset,
    opts: RunOptions,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (sd, ad) = cfg.env.dims();
    if expert.state_dim != sd || expert.action_dim != ad {
        return Err(Error::Invalid(format!(
            "expert dataset has dims ({}, {}) but env '{}' needs ({sd}, {ad})",
            expert.state_dim,
            expert.action_dim,
            EnvKind::NAMES[cfg.env as usize]
        )));
    }
    let expert = match cfg.expert_limit {
        Some(limit) => limit.apply(expert)?,
        None => expert.clone(),
    };
    let env_cfg = cfg.env_config();
    let eval_seed = rng::derive_seed(cfg.seed, "eval");

    let mut policy = GaussianPolicy::new(
        sd,
        ad,
        &cfg.policy_hidden,
        cfg.init_log_std,
        rng::derive_seed(cfg.seed, "policy"),
    )?;
    let mut critic = Critic::new(sd, &cfg.critic_hidden, rng::derive_seed(cfg.seed, "critic"))?;
    let mut metrics = Vec::new();
    let mut counters = Counters::default();

    if cfg.method == Method::Bc {
        let mut bc_rng = rng::stream(cfg.seed, "bc");
        let (p, losses) = bc_train(&expert, &policy, &cfg.bc, &mut bc_rng)?;
        policy = p;
        let report = evaluate_policy(
            &policy,
            &env_cfg,
            cfg.eval_episodes,
            eval_seed,
            cfg.eval_mode,
        )?;
        let row = MetricsRow {
            env_steps: 0,
            iter: cfg.bc.epochs,
            disc_loss: 0.0,
            ppo_loss: losses.last().copied().unwrap_or(f64::NAN),
            mean_reward: 0.0,
            success_rate: report.success_rate,
            mean_return: report.mean_return,
            clip_frac: 0.0,
            clamped_rewards: 0,
        };
        on_row(&row);
        metrics.push(row);
        return Ok(TrainOutcome {
            policy,
            critic,
            discriminator: None,
            metrics,
            counters,
            final_eval: report,
        });
    }

    let mut disc = cfg
        .build_discriminator()?
        .expect("non-bc method has a discriminator");
    let mut env_rng = rng::stream(cfg.seed, "env");
    let mut disc_rng = rng::stream(cfg.seed, "disc-batches");
    let mut label_rng = rng::stream(cfg.seed, "draws");
    let mut ppo_rng = rng::stream(cfg.seed, "ppo");
    let mut env = Env::new(&env_cfg, &mut env_rng)?;
    let mut opt = PpoOptimizer::new(&policy, &critic, cfg.ppo.lr);

    let n_iters = cfg.iterations();
    let mut next_eval = cfg.eval_interval;
    // Accumulators between metrics rows.
    let (mut acc_disc, mut acc_ppo, mut acc_reward, mut acc_clip, mut acc_n, mut acc_clamped) =
        (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
    let mut last_eval = None;
    for iter in 0..n_iters {
        let lr_scale = if cfg.ppo.lr_decay {
            1.0 - iter as f64 / n_iters as f64
        } else {
            1.0
        };
        let (mut buffer, _tally) = collect_rollout(
            &mut env,
            &policy,
            &critic,
            cfg.ppo.rollout_len,
            &mut env_rng,
        )
        .map_err(|e| at_iteration(e, iter))?;
        counters.rollouts += 1;
        counters.env_steps += buffer.len();

        let ds = update_discriminator(
            &mut disc,
            &expert,
            &buffer,
            cfg.disc.batch_size,
            cfg.disc.epochs,
            &mut disc_rng,
        )
        .map_err(|e| at_iteration(e, iter))?;
        counters.disc_minibatches += ds.minibatches;

        let ls = label_rewards(
            &mut buffer,
            &disc,
            cfg.reward_clamp,
            opts.threads,
            &mut label_rng,
        )
        .map_err(|e| at_iteration(e, iter))?;
        counters.labelings += 1;

        buffer
            .compute_gae(cfg.ppo.gamma, cfg.ppo.gae_lambda)
            .map_err(|e| at_iteration(e, iter))?;
        check_finite(&buffer.advantages, "advantages").map_err(|e| at_iteration(e, iter))?;
        counters.gae_passes += 1;

        let (p, c, ps): (GaussianPolicy, Critic, PpoStats) = ppo_update(
            &policy,
            &critic,
            &mut opt,
            &buffer,
            &cfg.ppo,
            lr_scale,
            &mut ppo_rng,
        )
        .map_err(|e| at_iteration(e, iter))?;
        policy = p;
        critic = c;
        counters.ppo_epochs += cfg.ppo.epochs;
        counters.ppo_minibatches += ps.minibatches;
        counters.iterations += 1;

        acc_disc += ds.loss;
        acc_ppo += ps.loss;
        acc_reward += ls.mean_reward;
        acc_clip += ps.clip_frac;
        acc_clamped += ls.clamped;
        acc_n += 1;

        let last = iter + 1 == n_iters;
        if counters.env_steps >= next_eval || last {
            while next_eval <= counters.env_steps {
                next_eval += cfg.eval_interval;
            }
            let report = evaluate_policy(
                &policy,
                &env_cfg,
                cfg.eval_episodes,
                eval_seed,
                cfg.eval_mode,
            )?;
            let k = acc_n as f64;
            let row = MetricsRow {
                env_steps: counters.env_steps,
                iter: iter + 1,
                disc_loss: acc_disc / k,
                ppo_loss: acc_ppo / k,
                mean_reward: acc_reward / k,
                success_rate: report.success_rate,
                mean_return: report.mean_return,
                clip_frac: acc_clip / k,
                clamped_rewards: acc_clamped,
            };
            on_row(&row);
            metrics.push(row);
            (acc_disc, acc_ppo, acc_reward, acc_clip, acc_n, acc_clamped) =
                (0.0, 0.0, 0.0, 0.0, 0, 0);
            last_eval = Some(report);
        }
    }
    let final_eval = match last_eval {
        Some(r) => r,
        None => evaluate_policy(
            &policy,
            &env_cfg,
            cfg.eval_episodes,
            eval_seed,
            cfg.eval_mode,
        )?,
    };
    Ok(TrainOutcome {
        policy,
        critic,
        discriminator: Some(disc),
        metrics,
        counters,
        final_eval,
    })
}

// ---------------------------------------------------------------------------
// Reward landscape
// ---------------------------------------------------------------------------

/// What a grid cell holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridQuantity {
    /// Discriminator probability `D`.
    #[default]
    Prob,
    /// Clamped reward `log D - log(1 - D)`.
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGrid {
    pub s_axis: Vec<f64>,
    pub a_axis: Vec<f64>,
    /// Row-major: `values[i * a_axis.len() + j]` is cell `(s_axis[i], a_axis[j])`.
    pub values: Vec<f64>,
    pub method: DiscriminatorKind,
    pub quantity: GridQuantity,
}

impl RewardGrid {
    pub fn dims(&self) -> (usize, usize) {
        (self.s_axis.len(), self.a_axis.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.a_axis.len() + j]
    }

    /// Header row of a-axis values, then one row per s value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s\\a");
        for a in &self.a_axis {
            let _ = write!(out, ",{a:?}");
        }
        out.push('\n');
        for (i, s) in self.s_axis.iter().enumerate() {
            let _ = write!(out, "{s:?}");
            for j in 0..self.a_axis.len() {
                let _ = write!(out, ",{:?}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    /// Mean cell value over cells lying `d` above or below the curve
    /// (within `tol`), for s values accepted by `keep_s`.
    pub fn band_mean(
        &self,
        curve: impl Fn(f64) -> f64,
        d: f64,
        tol: f64,
        keep_s: impl Fn(f64) -> bool,
    ) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, &s) in self.s_axis.iter().enumerate() {
            if !keep_s(s) {
                continue;
            }
            let c = curve(s);
            for (j, &a) in self.a_axis.iter().enumerate() {
                if ((a - c).abs() - d).abs() <= tol {
                    sum += self.get(i, j);
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Evaluates the discriminator on the `(s, a)` lattice spanned by the axes.
/// Each cell averages `samples` independent evaluations.
pub fn reward_map(
    disc: &Discriminator,
    s_axis: &[f64],
    a_axis: &[f64],
    samples: usize,
    quantity: GridQuantity,
    clamp: f64,
    rng: &mut Rng,
) -> Result<RewardGrid> {
    if s_axis.is_empty() || a_axis.is_empty() {
        return Err(Error::Invalid("reward grid needs non-empty axes".into()));
    }
    if samples == 0 {
        return Err(Error::Invalid("samples per cell must be >= 1".into()));
    }
    let mut values = Vec::with_capacity(s_axis.len() * a_axis.len());
    for &s in s_axis {
        for &a in a_axis {
            let mut acc = 0.0;
            for _ in 0..samples {
                acc += match quantity {
                    GridQuantity::Prob => disc.prob(&[s], &[a], rng)?,
                    GridQuantity::Reward => {
                        disc.reward(&[s], &[a], rng)?.reward.clamp(-clamp, clamp)
                    }
                };
            }
            values.push(acc / samples as f64);
        }
    }
    check_finite(&values, "reward grid")?;
    Ok(RewardGrid {
        s_axis: s_axis.to_vec(),
        a_axis: a_axis.to_vec(),
        values,
        method: disc.kind(),
        quantity,
    })
}

/// [`reward_map`] over the default Sine lattice at the given resolution.
pub fn sine_reward_map(
    disc: &Discriminator,
    s_res: usize,
    a_res: usize,
    samples: usize,
    quantity: GridQuantity,
    rng: &mut Rng,
) -> Result<RewardGrid> {
    let (s_axis, a_axis) = crate::env::sine_axes(s_res, a_res, GridBounds::default())?;
    reward_map(disc, &s_axis, &a_axis, samples, quantity, 20.0, rng)
}
