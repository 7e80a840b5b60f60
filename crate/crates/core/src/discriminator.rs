//! Reward-providing discriminators.
//!
//! All three share one convention: expert pairs are the positive class
//! (target 1) and the reward handed to the policy is the logit
//! `log D - log(1 - D)`.
//!
//! - [`DrailClassifier`]: `D = sigmoid(L_diff(c-) - L_diff(c+))`, the two
//!   losses evaluated on one shared `(t, eps)` draw.
//! - [`GailDiscriminator`]: an MLP logit on `[s | a]`.
//! - [`DiffailDiscriminator`]: `D = exp(-L_diff)` from an unconditional
//!   denoiser, which puts the decision boundary at `L_diff = ln 2`.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Branch, Denoiser, DenoiserConfig, Draw, LabelKind};
use crate::error::{check_finite, Error, Result};
use crate::nn::{self, Activation, AdamState, Checkpoint, CheckpointKind, Mlp};
use crate::rng::Rng;

/// Borrowed `(state, action)` pair.
pub type Pair<'a> = (&'a [f64], &'a [f64]);

/// Lower bound applied to DiffAIL's diffusion loss before taking logs.
pub const DIFFAIL_MIN_LOSS: f64 = 1e-7;
/// Floor (and ceiling) of the DiffAIL reward.
pub const DIFFAIL_REWARD_FLOOR: f64 = -20.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `D = sigmoid(delta)` for the diffusion discriminative classifier.
pub fn drail_prob(delta: f64) -> f64 {
    sigmoid(delta)
}

/// BCE with expert logits as positives: `mean softplus(-z_E) + mean softplus(z_A)`.
pub fn bce_from_logits(expert: &[f64], agent: &[f64]) -> f64 {
    let e = expert.iter().map(|&z| softplus(-z)).sum::<f64>() / expert.len() as f64;
    let a = agent.iter().map(|&z| softplus(z)).sum::<f64>() / agent.len() as f64;
    e + a
}

/// BCE on `D = exp(-L)`: `mean L_E + mean -log(1 - exp(-L_A))`.
pub fn diffail_bce(expert_losses: &[f64], agent_losses: &[f64]) -> f64 {
    let e = expert_losses.iter().sum::<f64>() / expert_losses.len() as f64;
    let a = agent_losses
        .iter()
        .map(|&l| -(-(-l.max(DIFFAIL_MIN_LOSS)).exp_m1()).ln())
        .sum::<f64>()
        / agent_losses.len() as f64;
    e + a
}

/// `log D - log(1 - D)` with `D = exp(-L)`, i.e. `-L - log(1 - exp(-L))`.
/// Returns the reward and whether `L` hit the lower clamp.
pub fn diffail_reward_from_loss(loss: f64) -> (f64, bool) {
    let saturated = loss < DIFFAIL_MIN_LOSS;
    let l = loss.max(DIFFAIL_MIN_LOSS);
    let r = -l - (-(-l).exp_m1()).ln();
    (
        r.clamp(DIFFAIL_REWARD_FLOOR, -DIFFAIL_REWARD_FLOOR),
        saturated,
    )
}

fn check_batches(expert: &[Pair<'_>], agent: &[Pair<'_>]) -> Result<()> {
    if expert.is_empty() || agent.is_empty() {
        return Err(Error::Invalid(
            "discriminator loss needs non-empty expert and agent batches".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorKind {
    Gail,
    Diffail,
    Drail,
}

impl DiscriminatorKind {
    pub fn checkpoint_kind(self) -> CheckpointKind {
        match self {
            DiscriminatorKind::Gail => CheckpointKind::Gail,
            DiscriminatorKind::Diffail => CheckpointKind::Diffail,
            DiscriminatorKind::Drail => CheckpointKind::Drail,
        }
    }
}

// ---------------------------------------------------------------------------
// DRAIL
// ---------------------------------------------------------------------------

/// Per-pair result of a classifier evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DrailLogit {
    /// `L(c-) - L(c+)`, averaged over the draws.
    pub delta: f64,
    pub loss_real: f64,
    pub loss_fake: f64,
    pub draws: Vec<Draw>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrailClassifier {
    pub denoiser: Denoiser,
    pub optimizer: AdamState,
    /// Draws averaged per logit evaluation.
    pub samples: usize,
}

impl DrailClassifier {
    pub fn new(config: DenoiserConfig, lr: f64, samples: usize, seed: u64) -> Result<Self> {
        if config.label_dim == 0 {
            return Err(Error::Invalid(
                "the conditional classifier needs label_dim >= 1".into(),
            ));
        }
        let denoiser = Denoiser::new(config, seed)?;
        Self::from_denoiser(denoiser, lr, samples)
    }

    pub fn from_denoiser(denoiser: Denoiser, lr: f64, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Invalid("sample count M must be >= 1".into()));
        }
        let optimizer = AdamState::new(denoiser.num_params(), lr);
        Ok(Self {
            denoiser,
            optimizer,
            samples,
        })
    }

    fn branches(&self, s: &[f64], a: &[f64], draw: &Draw) -> (Branch, Branch) {
        let real = self.denoiser.label(LabelKind::Real).embedding;
        let fake = self.denoiser.label(LabelKind::Fake).embedding;
        (
            self.denoiser.branch(s, a, &real, draw),
            self.denoiser.branch(s, a, &fake, draw),
        )
    }

    /// Branch losses `(L+, L-)` for an explicit draw.
    pub fn losses_for_draw(&self, s: &[f64], a: &[f64], draw: &Draw) -> Result<(f64, f64)> {
        let real = self.denoiser.label(LabelKind::Real);
        let fake = self.denoiser.label(LabelKind::Fake);
        Ok((
            self.denoiser.loss_single(s, a, &real, draw.t, &draw.eps)?,
            self.denoiser.loss_single(s, a, &fake, draw.t, &draw.eps)?,
        ))
    }

    /// `L(c-) - L(c+)` with both conditions sharing each draw.
    pub fn logit(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<DrailLogit> {
        let mut out = DrailLogit {
            delta: 0.0,
            loss_real: 0.0,
            loss_fake: 0.0,
            draws: Vec::with_capacity(self.samples),
        };
        for _ in 0..self.samples {
            let draw = self.denoiser.sample_draw(rng);
            let (lp, lm) = self.losses_for_draw(s, a, &draw)?;
            out.loss_real += lp;
            out.loss_fake += lm;
            out.draws.push(draw);
        }
        let m = self.samples as f64;
        out.loss_real /= m;
        out.loss_fake /= m;
        out.delta = out.loss_fake - out.loss_real;
        if !out.delta.is_finite() {
            return Err(Error::NonFinite {
                context: "classifier logit",
                index: 0,
            });
        }
        Ok(out)
    }

    pub fn prob(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<f64> {
        Ok(drail_prob(self.logit(s, a, rng)?.delta))
    }

    /// `log D - log(1 - D)`, which is exactly the logit `delta`.
    pub fn reward(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<f64> {
        Ok(self.logit(s, a, rng)?.delta)
    }

    /// Mean BCE over both batches and its gradient with respect to the
    /// denoiser parameters. One fresh draw set per pair.
    pub fn loss_and_grad(
        &self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batches(expert, agent)?;
        let mut grad = vec![0.0; self.denoiser.num_params()];
        let mut loss = 0.0;
        let m = self.samples as f64;
        for (batch, positive) in [(expert, true), (agent, false)] {
            let n = batch.len() as f64;
            for &(s, a) in batch {
                self.denoiser.check_pair(s, a)?;
                let mut recorded = Vec::with_capacity(self.samples);
                let mut delta = 0.0;
                for _ in 0..self.samples {
                    let draw = self.denoiser.sample_draw(rng);
                    let (bp, bm) = self.branches(s, a, &draw);
                    delta += (bm.loss - bp.loss) / m;
                    recorded.push((bp, bm));
                }
                if !delta.is_finite() {
                    return Err(Error::NonFinite {
                        context: "classifier logit",
                        index: 0,
                    });
                }
                // d loss / d delta
                let dz = if positive {
                    loss += softplus(-delta) / n;
                    -sigmoid(-delta) / n
                } else {
                    loss += softplus(delta) / n;
                    sigmoid(delta) / n
                };
                for (bp, bm) in &recorded {
                    self.denoiser.backprop(bm, dz / m, &mut grad);
                    self.denoiser.backprop(bp, -dz / m, &mut grad);
                }
            }
        }
        Ok((loss, grad))
    }

    /// One Adam step on the BCE gradient; returns the pre-update loss.
    pub fn update(
        &mut self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(expert, agent, rng)?;
        check_finite(&grad, "classifier gradient")?;
        self.optimizer.apply(
            self.denoiser.net_mut().params_mut().values_mut(),
            &grad,
            1.0,
        )?;
        Ok(loss)
    }

    /// Snapshot-returning form of [`DrailClassifier::update`].
    pub fn updated(&self, expert: &[Pair<'_>], agent: &[Pair<'_>], rng: &mut Rng) -> Result<Self> {
        let mut next = self.clone();
        next.update(expert, agent, rng)?;
        Ok(next)
    }
}

// ---------------------------------------------------------------------------
// GAIL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GailDiscriminator {
    pub net: Mlp,
    pub optimizer: AdamState,
    /// Sinusoidal octaves applied to `[s | a]` before the network.
    pub fourier_features: usize,
}

impl GailDiscriminator {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::with_encoding(state_dim, action_dim, hidden, 0, lr, seed)
    }

    pub fn with_encoding(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        fourier_features: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let width = nn::fourier_width(state_dim + action_dim, fourier_features);
        let specs = nn::mlp_specs(width, hidden, 1, Activation::Tanh);
        Self::from_net(Mlp::new(specs, seed)?, fourier_features, lr)
    }

    pub fn from_net(net: Mlp, fourier_features: usize, lr: f64) -> Result<Self> {
        if net.out_dim() != 1 {
            return Err(Error::Dim {
                context: "GAIL discriminator output",
                expected: 1,
                actual: net.out_dim(),
            });
        }
        let optimizer = AdamState::new(net.num_params(), lr);
        Ok(Self {
            net,
            optimizer,
            fourier_features,
        })
    }

    fn input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut raw = Vec::with_capacity(s.len() + a.len());
        raw.extend_from_slice(s);
        raw.extend_from_slice(a);
        let mut x = Vec::with_capacity(self.net.in_dim());
        nn::fourier_encode(&raw, self.fourier_features, &mut x);
        x
    }

    pub fn logit(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let width = nn::fourier_width(s.len() + a.len(), self.fourier_features);
        if width != self.net.in_dim() {
            return Err(Error::Dim {
                context: "GAIL input",
                expected: self.net.in_dim(),
                actual: width,
            });
        }
        Ok(self.net.forward(&self.input(s, a))?[0])
    }

    pub fn prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(s, a)?))
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.logit(s, a)
    }

    pub fn loss_and_grad(
        &self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
    ) -> Result<(f64, Vec<f64>)> {
        check_batches(expert, agent)?;
        let mut grad = vec![0.0; self.net.num_params()];
        let mut loss = 0.0;
        for (batch, positive) in [(expert, true), (agent, false)] {
            let n = batch.len() as f64;
            for &(s, a) in batch {
                let x = self.input(s, a);
                if x.len() != self.net.in_dim() {
                    return Err(Error::Dim {
                        context: "GAIL input",
                        expected: self.net.in_dim(),
                        actual: x.len(),
                    });
                }
                let trace = self.net.trace(&x);
                let z = trace.output()[0];
                let dz = if positive {
                    loss += softplus(-z) / n;
                    -sigmoid(-z) / n
                } else {
                    loss += softplus(z) / n;
                    sigmoid(z) / n
                };
                self.net.backward_into(&trace, &[dz], &mut grad);
            }
        }
        Ok((loss, grad))
    }

    pub fn update(&mut self, expert: &[Pair<'_>], agent: &[Pair<'_>]) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(expert, agent)?;
        self.optimizer
            .apply(self.net.params_mut().values_mut(), &grad, 1.0)?;
        Ok(loss)
    }
}

// ---------------------------------------------------------------------------
// DiffAIL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DiffailDiscriminator {
    pub denoiser: Denoiser,
    pub optimizer: AdamState,
    pub samples: usize,
}

impl DiffailDiscriminator {
    /// `config.label_dim` is forced to 0: the model is unconditional.
    pub fn new(mut config: DenoiserConfig, lr: f64, samples: usize, seed: u64) -> Result<Self> {
        config.label_dim = 0;
        Self::from_denoiser(Denoiser::new(config, seed)?, lr, samples)
    }

    pub fn from_denoiser(denoiser: Denoiser, lr: f64, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Invalid("sample count M must be >= 1".into()));
        }
        let optimizer = AdamState::new(denoiser.num_params(), lr);
        Ok(Self {
            denoiser,
            optimizer,
            samples,
        })
    }

    fn zero_label(&self) -> Vec<f64> {
        vec![0.0; self.denoiser.config().label_dim]
    }

    /// Unconditional diffusion loss averaged over `samples` draws.
    pub fn diffusion_loss(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<f64> {
        let label = self.denoiser.label(LabelKind::Fake);
        let mut total = 0.0;
        for _ in 0..self.samples {
            let draw = self.denoiser.sample_draw(rng);
            total += self.denoiser.loss_single(s, a, &label, draw.t, &draw.eps)?;
        }
        Ok(total / self.samples as f64)
    }

    /// `(D, L)` with `D = exp(-L)`.
    pub fn prob(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<(f64, f64)> {
        let l = self.diffusion_loss(s, a, rng)?;
        Ok(((-l).exp(), l))
    }

    pub fn reward(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<f64> {
        Ok(self.reward_detailed(s, a, rng)?.0)
    }

    /// Reward plus a flag telling whether `L` was clamped.
    pub fn reward_detailed(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<(f64, bool)> {
        Ok(diffail_reward_from_loss(self.diffusion_loss(s, a, rng)?))
    }

    pub fn loss_and_grad(
        &self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        check_batches(expert, agent)?;
        let mut grad = vec![0.0; self.denoiser.num_params()];
        let mut loss = 0.0;
        let label = self.zero_label();
        let m = self.samples as f64;
        for (batch, positive) in [(expert, true), (agent, false)] {
            let n = batch.len() as f64;
            for &(s, a) in batch {
                self.denoiser.check_pair(s, a)?;
                let branches: Vec<Branch> = (0..self.samples)
                    .map(|_| {
                        let draw = self.denoiser.sample_draw(rng);
                        self.denoiser.branch(s, a, &label, &draw)
                    })
                    .collect();
                let l = branches.iter().map(|b| b.loss).sum::<f64>() / m;
                if !l.is_finite() {
                    return Err(Error::NonFinite {
                        context: "diffusion loss",
                        index: 0,
                    });
                }
                let dl = if positive {
                    loss += l / n;
                    1.0 / n
                } else if l < DIFFAIL_MIN_LOSS {
                    loss += -(-(-DIFFAIL_MIN_LOSS).exp_m1()).ln() / n;
                    0.0
                } else {
                    loss += -(-(-l).exp_m1()).ln() / n;
                    -1.0 / (l.exp_m1() * n)
                };
                for b in &branches {
                    self.denoiser.backprop(b, dl / m, &mut grad);
                }
            }
        }
        Ok((loss, grad))
    }

    pub fn update(
        &mut self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(expert, agent, rng)?;
        check_finite(&grad, "diffusion discriminator gradient")?;
        self.optimizer.apply(
            self.denoiser.net_mut().params_mut().values_mut(),
            &grad,
            1.0,
        )?;
        Ok(loss)
    }

    pub fn updated(&self, expert: &[Pair<'_>], agent: &[Pair<'_>], rng: &mut Rng) -> Result<Self> {
        let mut next = self.clone();
        next.update(expert, agent, rng)?;
        Ok(next)
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Any of the three discriminators behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Discriminator {
    Gail(GailDiscriminator),
    Diffail(DiffailDiscriminator),
    Drail(DrailClassifier),
}

/// Reward for one pair, before the trainer's clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSample {
    pub reward: f64,
    /// DiffAIL's loss floor was hit.
    pub saturated: bool,
}

impl Discriminator {
    pub fn kind(&self) -> DiscriminatorKind {
        match self {
            Discriminator::Gail(_) => DiscriminatorKind::Gail,
            Discriminator::Diffail(_) => DiscriminatorKind::Diffail,
            Discriminator::Drail(_) => DiscriminatorKind::Drail,
        }
    }

    /// Probability that `(s, a)` is expert data.
    pub fn prob(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<f64> {
        match self {
            Discriminator::Gail(d) => d.prob(s, a),
            Discriminator::Diffail(d) => Ok(d.prob(s, a, rng)?.0),
            Discriminator::Drail(d) => d.prob(s, a, rng),
        }
    }

    pub fn reward(&self, s: &[f64], a: &[f64], rng: &mut Rng) -> Result<RewardSample> {
        match self {
            Discriminator::Gail(d) => Ok(RewardSample {
                reward: d.reward(s, a)?,
                saturated: false,
            }),
            Discriminator::Diffail(d) => {
                let (reward, saturated) = d.reward_detailed(s, a, rng)?;
                Ok(RewardSample { reward, saturated })
            }
            Discriminator::Drail(d) => Ok(RewardSample {
                reward: d.reward(s, a, rng)?,
                saturated: false,
            }),
        }
    }

    pub fn loss_and_grad(
        &self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Discriminator::Gail(d) => d.loss_and_grad(expert, agent),
            Discriminator::Diffail(d) => d.loss_and_grad(expert, agent, rng),
            Discriminator::Drail(d) => d.loss_and_grad(expert, agent, rng),
        }
    }

    /// One optimizer step; returns the loss before the step.
    pub fn update(
        &mut self,
        expert: &[Pair<'_>],
        agent: &[Pair<'_>],
        rng: &mut Rng,
    ) -> Result<f64> {
        match self {
            Discriminator::Gail(d) => d.update(expert, agent),
            Discriminator::Diffail(d) => d.update(expert, agent, rng),
            Discriminator::Drail(d) => d.update(expert, agent, rng),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Discriminator::Gail(d) => d.net.params().values(),
            Discriminator::Diffail(d) => d.denoiser.net().params().values(),
            Discriminator::Drail(d) => d.denoiser.net().params().values(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Discriminator::Gail(d) => d.net.params_mut().values_mut(),
            Discriminator::Diffail(d) => d.denoiser.net_mut().params_mut().values_mut(),
            Discriminator::Drail(d) => d.denoiser.net_mut().params_mut().values_mut(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Discriminator::Gail(d) => Checkpoint {
                kind: CheckpointKind::Gail,
                nets: vec![d.net.clone()],
                extra: vec![d.optimizer.lr, d.fourier_features as f64],
            },
            Discriminator::Diffail(d) => {
                let mut extra = d.denoiser.config_extras();
                extra.extend([d.samples as f64, d.optimizer.lr]);
                Checkpoint {
                    kind: CheckpointKind::Diffail,
                    nets: vec![d.denoiser.net().clone()],
                    extra,
                }
            }
            Discriminator::Drail(d) => {
                let mut extra = d.denoiser.config_extras();
                extra.extend([d.samples as f64, d.optimizer.lr]);
                Checkpoint {
                    kind: CheckpointKind::Drail,
                    nets: vec![d.denoiser.net().clone()],
                    extra,
                }
            }
        }
    }

    /// Restores a discriminator (with a fresh optimizer state).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt
            .nets
            .first()
            .cloned()
            .ok_or_else(|| Error::Format("discriminator checkpoint has no network".into()))?;
        match ckpt.kind {
            CheckpointKind::Gail => {
                let [lr, octaves] = ckpt.extra[..] else {
                    return Err(Error::Format(
                        "GAIL checkpoint needs [lr, fourier_features] extras".into(),
                    ));
                };
                if !(octaves >= 0.0 && octaves.fract() == 0.0 && octaves < 64.0) {
                    return Err(Error::Format(format!("bad fourier_features {octaves}")));
                }
                Ok(Discriminator::Gail(GailDiscriminator::from_net(
                    net,
                    octaves as usize,
                    lr,
                )?))
            }
            CheckpointKind::Diffail | CheckpointKind::Drail => {
                let n = Denoiser::EXTRAS_LEN;
                if ckpt.extra.len() < n + 2 {
                    return Err(Error::Format(
                        "diffusion discriminator checkpoint is missing fields".into(),
                    ));
                }
                let denoiser = Denoiser::from_extras(&ckpt.extra[..n], net)?;
                let samples = ckpt.extra[n];
                if !(samples >= 1.0 && samples.fract() == 0.0) {
                    return Err(Error::Format(format!("bad sample count {samples}")));
                }
                let lr = ckpt.extra[n + 1];
                if ckpt.kind == CheckpointKind::Drail {
                    Ok(Discriminator::Drail(DrailClassifier::from_denoiser(
                        denoiser,
                        lr,
                        samples as usize,
                    )?))
                } else {
                    Ok(Discriminator::Diffail(DiffailDiscriminator::from_denoiser(
                        denoiser,
                        lr,
                        samples as usize,
                    )?))
                }
            }
            other => Err(Error::Format(format!(
                "checkpoint kind '{}' is not a discriminator",
                other.name()
            ))),
        }
    }
}
