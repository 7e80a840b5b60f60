//! DDPM pieces needed for single-step diffusion losses: the cosine noise
//! schedule, forward noising, time embeddings, and a conditional MLP noise
//! predictor.

use std::f64::consts::FRAC_PI_2;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::nn::{self, Activation, Mlp, Trace};
use crate::rng::Rng;

pub const MAX_BETA: f64 = 0.999;

/// Cumulative signal levels `alpha_bar[0..=T]` of a cosine schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    s_offset: f64,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_bar_t = f(t)/f(0)` with `f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)`,
    /// rebuilt from per-step betas clipped at [`MAX_BETA`] so the last entries
    /// stay strictly positive.
    pub fn cosine(steps: usize, s_offset: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("diffusion schedule needs T >= 1".into()));
        }
        if !(s_offset > 0.0 && s_offset < 1.0) {
            return Err(Error::Invalid(format!(
                "cosine offset must lie in (0, 1), got {s_offset}"
            )));
        }
        let f = |t: usize| {
            let x = ((t as f64 / steps as f64) + s_offset) / (1.0 + s_offset);
            (x * FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut prev_closed = 1.0;
        for t in 1..=steps {
            let closed = f(t) / f0;
            let beta = (1.0 - closed / prev_closed).clamp(0.0, MAX_BETA);
            let last = alpha_bar[t - 1];
            alpha_bar.push(last * (1.0 - beta));
            prev_closed = closed;
        }
        Ok(Self {
            steps,
            s_offset,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn s_offset(&self) -> f64 {
        self.s_offset
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `beta_t = 1 - alpha_bar_t / alpha_bar_{t-1}` for `t >= 1`.
    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar[t] / self.alpha_bar[t - 1]
    }
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`. `t = 0` is the
/// clean sample.
pub fn noising(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > schedule.steps() {
        return Err(Error::Invalid(format!(
            "diffusion step {t} outside [0, {}]",
            schedule.steps()
        )));
    }
    if eps.len() != x0.len() {
        return Err(Error::Dim {
            context: "noise vector",
            expected: x0.len(),
            actual: eps.len(),
        });
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEncoding {
    /// `[sin(w_k t/T)..., cos(w_k t/T)...]`
    Sinusoidal,
    /// The single scalar `t/T`.
    Scalar,
}

impl TimeEncoding {
    fn code(self) -> f64 {
        match self {
            TimeEncoding::Sinusoidal => 0.0,
            TimeEncoding::Scalar => 1.0,
        }
    }
}

/// Sinusoidal embedding of `t/T`. Frequencies are geometric from `1000` down
/// to `1000 / 10000^((half-1)/half)`, so the finest one resolves single steps
/// of a 1000-step schedule.
pub fn time_embedding(t: usize, steps: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "time embedding dimension must be even, got {dim}"
        )));
    }
    if steps == 0 {
        return Err(Error::Invalid("time embedding needs T >= 1".into()));
    }
    let half = dim / 2;
    let x = t as f64 / steps as f64 * 1000.0;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let angle = x * freq;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Real,
    Fake,
}

/// Condition vector: all ones for expert ("real"), all zeros for agent ("fake").
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionLabel {
    pub kind: LabelKind,
    pub embedding: Vec<f64>,
}

impl ConditionLabel {
    pub fn real(dim: usize) -> Self {
        Self {
            kind: LabelKind::Real,
            embedding: vec![1.0; dim],
        }
    }

    pub fn fake(dim: usize) -> Self {
        Self {
            kind: LabelKind::Fake,
            embedding: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// 0 for an unconditional model.
    pub label_dim: usize,
    pub time_embed_dim: usize,
    pub time_encoding: TimeEncoding,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub s_offset: f64,
    /// Sinusoidal octaves applied to the noised input (0 = raw input).
    pub fourier_features: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            state_dim: 1,
            action_dim: 1,
            label_dim: 10,
            time_embed_dim: 16,
            time_encoding: TimeEncoding::Sinusoidal,
            hidden: vec![128, 128],
            steps: 1000,
            s_offset: 0.008,
            fourier_features: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn data_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn time_width(&self) -> usize {
        match self.time_encoding {
            TimeEncoding::Sinusoidal => self.time_embed_dim,
            TimeEncoding::Scalar => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        nn::fourier_width(self.data_dim(), self.fourier_features)
            + self.label_dim
            + self.time_width()
    }
}

/// One `(t, eps)` sample used for a single-step diffusion loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Conditional noise predictor `eps_phi(x_t, t | c)` over concatenated
/// `(s, a)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    net: Mlp,
    schedule: NoiseSchedule,
    time_table: Vec<Vec<f64>>,
}

impl Denoiser {
    /// Glorot-initialized hidden layers and a zero output layer, so a fresh
    /// model predicts zero noise under every label and starts uninformed.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let specs = nn::mlp_specs(
            config.input_dim(),
            &config.hidden,
            config.data_dim(),
            Activation::Relu,
        );
        let mut net = Mlp::new(specs, seed)?;
        let last = net.specs().len() - 1;
        net.params_mut().weights_mut(last).fill(0.0);
        Self::from_net(config, net)
    }

    pub fn from_net(config: DenoiserConfig, net: Mlp) -> Result<Self> {
        if config.data_dim() == 0 {
            return Err(Error::Invalid("denoiser needs a non-empty (s, a)".into()));
        }
        if net.in_dim() != config.input_dim() || net.out_dim() != config.data_dim() {
            return Err(Error::Dim {
                context: "denoiser network",
                expected: config.input_dim(),
                actual: net.in_dim(),
            });
        }
        let schedule = NoiseSchedule::cosine(config.steps, config.s_offset)?;
        let time_table = (0..=config.steps)
            .map(|t| match config.time_encoding {
                TimeEncoding::Sinusoidal => time_embedding(t, config.steps, config.time_embed_dim),
                TimeEncoding::Scalar => Ok(vec![t as f64 / config.steps as f64]),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            net,
            schedule,
            time_table,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn data_dim(&self) -> usize {
        self.config.data_dim()
    }

    pub fn label(&self, kind: LabelKind) -> ConditionLabel {
        match kind {
            LabelKind::Real => ConditionLabel::real(self.config.label_dim),
            LabelKind::Fake => ConditionLabel::fake(self.config.label_dim),
        }
    }

    /// Uniform `t` on `1..=T` and `eps ~ N(0, I)`.
    pub fn sample_draw(&self, rng: &mut Rng) -> Draw {
        let t = rng.random_range(1..=self.config.steps);
        let eps = (0..self.data_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Draw { t, eps }
    }

    /// Network input `[enc(x_t) | label | time]`.
    pub fn input(&self, x_t: &[f64], t: usize, label: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.config.input_dim());
        nn::fourier_encode(x_t, self.config.fourier_features, &mut v);
        v.extend_from_slice(label);
        v.extend_from_slice(&self.time_table[t]);
        v
    }

    /// Noised `(s, a)` for a draw.
    pub fn noised_pair(&self, s: &[f64], a: &[f64], draw: &Draw) -> Vec<f64> {
        let ab = self.schedule.alpha_bar(draw.t);
        let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
        s.iter()
            .chain(a)
            .zip(&draw.eps)
            .map(|(x, e)| ca * x + cb * e)
            .collect()
    }

    pub fn predict_noise(&self, x_t: &[f64], t: usize, label: &ConditionLabel) -> Result<Vec<f64>> {
        if x_t.len() != self.data_dim() {
            return Err(Error::Dim {
                context: "noised state-action",
                expected: self.data_dim(),
                actual: x_t.len(),
            });
        }
        if label.embedding.len() != self.config.label_dim {
            return Err(Error::Dim {
                context: "condition label",
                expected: self.config.label_dim,
                actual: label.embedding.len(),
            });
        }
        if t > self.config.steps {
            return Err(Error::Invalid(format!(
                "diffusion step {t} outside [0, {}]",
                self.config.steps
            )));
        }
        self.net.forward(&self.input(x_t, t, &label.embedding))
    }

    pub(crate) fn check_pair(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.config.state_dim {
            return Err(Error::Dim {
                context: "state",
                expected: self.config.state_dim,
                actual: s.len(),
            });
        }
        if a.len() != self.config.action_dim {
            return Err(Error::Dim {
                context: "action",
                expected: self.config.action_dim,
                actual: a.len(),
            });
        }
        check_finite(s, "state")?;
        check_finite(a, "action")
    }

    /// Mean-over-coordinates squared error between predicted and injected
    /// noise for one `(t, eps)` draw.
    pub fn loss_single(
        &self,
        s: &[f64],
        a: &[f64],
        label: &ConditionLabel,
        t: usize,
        eps: &[f64],
    ) -> Result<f64> {
        self.check_pair(s, a)?;
        if eps.len() != self.data_dim() {
            return Err(Error::Dim {
                context: "noise vector",
                expected: self.data_dim(),
                actual: eps.len(),
            });
        }
        check_finite(eps, "noise vector")?;
        if t == 0 || t > self.config.steps {
            return Err(Error::Invalid(format!(
                "diffusion step {t} outside [1, {}]",
                self.config.steps
            )));
        }
        let draw = Draw {
            t,
            eps: eps.to_vec(),
        };
        let x_t = self.noised_pair(s, a, &draw);
        let pred = self.predict_noise(&x_t, t, label)?;
        Ok(mse(&pred, eps))
    }

    /// Gradient of [`Denoiser::loss_single`] with respect to the network parameters.
    pub fn loss_single_grad(
        &self,
        s: &[f64],
        a: &[f64],
        label: &ConditionLabel,
        draw: &Draw,
    ) -> Result<(f64, Vec<f64>)> {
        let loss = self.loss_single(s, a, label, draw.t, &draw.eps)?;
        let branch = self.branch(s, a, &label.embedding, draw);
        let mut grad = vec![0.0; self.num_params()];
        self.backprop(&branch, 1.0, &mut grad);
        Ok((loss, grad))
    }

    /// Unchecked forward for one condition; keeps the trace for [`Denoiser::backprop`].
    pub(crate) fn branch(&self, s: &[f64], a: &[f64], label: &[f64], draw: &Draw) -> Branch {
        let x_t = self.noised_pair(s, a, draw);
        let trace = self.net.trace(&self.input(&x_t, draw.t, label));
        let loss = mse(trace.output(), &draw.eps);
        Branch {
            trace,
            eps: draw.eps.clone(),
            loss,
        }
    }

    /// Adds `scale * dL/dphi` for a recorded branch into `grad`.
    pub(crate) fn backprop(&self, branch: &Branch, scale: f64, grad: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        let n = branch.eps.len() as f64;
        let upstream: Vec<f64> = branch
            .trace
            .output()
            .iter()
            .zip(&branch.eps)
            .map(|(p, e)| scale * 2.0 * (p - e) / n)
            .collect();
        self.net.backward_into(&branch.trace, &upstream, grad);
    }

    /// Extra scalars stored next to the network in checkpoints.
    pub(crate) fn config_extras(&self) -> Vec<f64> {
        let c = &self.config;
        vec![
            c.state_dim as f64,
            c.action_dim as f64,
            c.label_dim as f64,
            c.time_embed_dim as f64,
            c.time_encoding.code(),
            c.steps as f64,
            c.s_offset,
            c.fourier_features as f64,
        ]
    }

    pub(crate) const EXTRAS_LEN: usize = 8;

    pub(crate) fn from_extras(extras: &[f64], net: Mlp) -> Result<Self> {
        if extras.len() < Self::EXTRAS_LEN {
            return Err(Error::Format(
                "denoiser checkpoint lacks schedule fields".into(),
            ));
        }
        let as_usize = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("bad integer field {v}")))
            }
        };
        let time_encoding = match extras[4] {
            0.0 => TimeEncoding::Sinusoidal,
            1.0 => TimeEncoding::Scalar,
            other => return Err(Error::Format(format!("bad time encoding code {other}"))),
        };
        let hidden = net.specs()[..net.specs().len() - 1]
            .iter()
            .map(|s| s.out_dim)
            .collect();
        let config = DenoiserConfig {
            state_dim: as_usize(extras[0])?,
            action_dim: as_usize(extras[1])?,
            label_dim: as_usize(extras[2])?,
            time_embed_dim: as_usize(extras[3])?,
            time_encoding,
            hidden,
            steps: as_usize(extras[5])?,
            s_offset: extras[6],
            fourier_features: as_usize(extras[7])?,
        };
        Self::from_net(config, net)
    }
}

pub(crate) struct Branch {
    trace: Trace,
    eps: Vec<f64>,
    pub(crate) loss: f64,
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / target.len() as f64
}
