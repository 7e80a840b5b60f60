//! Discriminator probe on the Sine world: train one discriminator on expert
//! pairs against uniformly drawn agent pairs, then measure held-out
//! accuracy and the mean `D` in bands around the expert curve.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::DenoiserConfig;
use crate::discriminator::{
    DiffailDiscriminator, Discriminator, DiscriminatorKind, DrailClassifier, GailDiscriminator,
    Pair,
};
use crate::env::{sine_expert_sample, GridBounds, SineWorldSpec};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trainer::{sine_reward_map, GridQuantity, RewardGrid};

/// Vertical distances from the curve at which band means are reported.
pub const BAND_DISTANCES: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub steps: usize,
    /// Size of the expert pool minibatches are drawn from (with replacement).
    pub expert_pairs: usize,
    pub batch_size: usize,
    /// Held-out pairs per class.
    pub test_pairs: usize,
    pub lr: f64,
    /// Draws per logit during training (diffusion discriminators only).
    pub train_samples: usize,
    /// Draws per logit for accuracy and the grid.
    pub eval_samples: usize,
    pub denoiser: DenoiserConfig,
    pub gail_hidden: Vec<usize>,
    pub gail_fourier_features: usize,
    pub grid_s: usize,
    pub grid_a: usize,
    /// Half-width of each distance band, in action units.
    pub band_tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            expert_pairs: 5000,
            batch_size: 128,
            test_pairs: 2000,
            lr: 3e-3,
            train_samples: 4,
            eval_samples: 16,
            denoiser: DenoiserConfig {
                fourier_features: 6,
                ..DenoiserConfig::default()
            },
            gail_hidden: vec![128, 128],
            gail_fourier_features: 6,
            grid_s: 101,
            grid_a: 121,
            band_tolerance: 0.0125,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.expert_pairs == 0 || self.batch_size == 0 || self.test_pairs == 0
        {
            return Err(Error::Invalid("probe counts must be positive".into()));
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return Err(Error::Invalid("sample count M must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Invalid(format!(
                "probe lr must be positive, got {}",
                self.lr
            )));
        }
        if self.grid_s < 2 || self.grid_a < 2 || !(self.band_tolerance > 0.0) {
            return Err(Error::Invalid(
                "probe grid needs >= 2 points per axis and a positive band".into(),
            ));
        }
        if self.denoiser.state_dim != 1 || self.denoiser.action_dim != 1 {
            return Err(Error::Invalid(
                "the sine probe is one-dimensional in state and action".into(),
            ));
        }
        Ok(())
    }

    /// A fresh discriminator of `kind` with training-time draw counts.
    pub fn build(&self, kind: DiscriminatorKind, seed: u64) -> Result<Discriminator> {
        let seed = rng::derive_seed(seed, "probe-init");
        Ok(match kind {
            DiscriminatorKind::Drail => Discriminator::Drail(DrailClassifier::new(
                self.denoiser.clone(),
                self.lr,
                self.train_samples,
                seed,
            )?),
            DiscriminatorKind::Diffail => Discriminator::Diffail(DiffailDiscriminator::new(
                self.denoiser.clone(),
                self.lr,
                self.train_samples,
                seed,
            )?),
            DiscriminatorKind::Gail => Discriminator::Gail(GailDiscriminator::with_encoding(
                1,
                1,
                &self.gail_hidden,
                self.gail_fourier_features,
                self.lr,
                seed,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub kind: DiscriminatorKind,
    pub accuracy: f64,
    pub expert_accuracy: f64,
    pub agent_accuracy: f64,
    pub final_loss: f64,
    /// `(distance, mean D)` pairs, one per entry of [`BAND_DISTANCES`].
    pub bands: Vec<(f64, f64)>,
    pub train_seconds: f64,
}

type Owned = (Vec<f64>, Vec<f64>);

fn uniform_pairs(n: usize, rng: &mut Rng) -> Vec<Owned> {
    let b = GridBounds::default();
    (0..n)
        .map(|_| {
            (
                vec![rng.random_range(b.s_min..b.s_max)],
                vec![rng.random_range(b.a_min..b.a_max)],
            )
        })
        .collect()
}

fn expert_pairs(spec: &SineWorldSpec, n: usize, rng: &mut Rng) -> Result<Vec<Owned>> {
    Ok(sine_expert_sample(spec, n, rng)?
        .transitions
        .into_iter()
        .map(|t| (t.state, t.action))
        .collect())
}

fn set_samples(disc: &mut Discriminator, m: usize) {
    match disc {
        Discriminator::Drail(c) => c.samples = m,
        Discriminator::Diffail(c) => c.samples = m,
        Discriminator::Gail(_) => {}
    }
}

/// Trains a fresh discriminator; the result uses `eval_samples` draws.
pub fn train_probe(
    kind: DiscriminatorKind,
    cfg: &ProbeConfig,
    spec: &SineWorldSpec,
    seed: u64,
) -> Result<(Discriminator, f64)> {
    cfg.validate()?;
    let expert = expert_pairs(
        spec,
        cfg.expert_pairs,
        &mut rng::stream(seed, "probe-expert"),
    )?;
    let mut disc = cfg.build(kind, seed)?;
    let mut r = rng::stream(seed, "probe-train");
    let mut loss = f64::NAN;
    for step in 0..cfg.steps {
        let agent = uniform_pairs(cfg.batch_size, &mut r);
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| r.random_range(0..expert.len()))
            .collect();
        let e: Vec<Pair<'_>> = idx
            .iter()
            .map(|&i| (&expert[i].0[..], &expert[i].1[..]))
            .collect();
        let a: Vec<Pair<'_>> = agent.iter().map(|(s, a)| (&s[..], &a[..])).collect();
        loss = disc
            .update(&e, &a, &mut r)
            .map_err(|err| Error::Numerical {
                module: "probe",
                iteration: step,
                detail: err.to_string(),
            })?;
    }
    set_samples(&mut disc, cfg.eval_samples);
    Ok((disc, loss))
}

/// `(expert accuracy, agent accuracy)` on fresh held-out pairs, `D > 0.5`
/// counting as an expert prediction.
pub fn probe_accuracy(
    disc: &Discriminator,
    cfg: &ProbeConfig,
    spec: &SineWorldSpec,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut data = rng::stream(seed, "probe-test");
    let expert = expert_pairs(spec, cfg.test_pairs, &mut data)?;
    let agent = uniform_pairs(cfg.test_pairs, &mut data);
    let mut r = rng::stream(seed, "probe-eval");
    let mut hits = [0usize; 2];
    for (s, a) in &expert {
        hits[0] += usize::from(disc.prob(s, a, &mut r)? > 0.5);
    }
    for (s, a) in &agent {
        hits[1] += usize::from(disc.prob(s, a, &mut r)? <= 0.5);
    }
    let n = cfg.test_pairs as f64;
    Ok((hits[0] as f64 / n, hits[1] as f64 / n))
}

/// Probability grid over the default Sine bounds.
pub fn probe_grid(disc: &Discriminator, cfg: &ProbeConfig, seed: u64) -> Result<RewardGrid> {
    sine_reward_map(
        disc,
        cfg.grid_s,
        cfg.grid_a,
        cfg.eval_samples,
        GridQuantity::Prob,
        &mut rng::stream(seed, "probe-grid"),
    )
}

/// Mean grid `D` at each of [`BAND_DISTANCES`] from the curve, support states only.
pub fn probe_bands(
    grid: &RewardGrid,
    cfg: &ProbeConfig,
    spec: &SineWorldSpec,
) -> Result<Vec<(f64, f64)>> {
    BAND_DISTANCES
        .iter()
        .map(|&d| {
            grid.band_mean(
                |s| spec.curve(s),
                d,
                cfg.band_tolerance,
                |s| spec.in_support(s),
            )
            .map(|v| (d, v))
            .ok_or_else(|| {
                Error::Invalid(format!("no grid cells at distance {d}; refine the grid"))
            })
        })
        .collect()
}

/// Train, score and profile one discriminator kind.
pub fn run_probe(
    kind: DiscriminatorKind,
    cfg: &ProbeConfig,
    spec: &SineWorldSpec,
    seed: u64,
) -> Result<ProbeReport> {
    let start = Instant::now();
    let (disc, final_loss) = train_probe(kind, cfg, spec, seed)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let (expert_accuracy, agent_accuracy) = probe_accuracy(&disc, cfg, spec, seed)?;
    let bands = probe_bands(&probe_grid(&disc, cfg, seed)?, cfg, spec)?;
    Ok(ProbeReport {
        kind,
        accuracy: 0.5 * (expert_accuracy + agent_accuracy),
        expert_accuracy,
        agent_accuracy,
        final_loss,
        bands,
        train_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ProbeConfig {
        ProbeConfig {
            steps: 30,
            expert_pairs: 200,
            batch_size: 16,
            test_pairs: 50,
            train_samples: 1,
            eval_samples: 2,
            denoiser: DenoiserConfig {
                hidden: vec![16],
                fourier_features: 2,
                ..DenoiserConfig::default()
            },
            gail_hidden: vec![16],
            grid_s: 41,
            grid_a: 121,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn probe_runs_for_every_kind_and_is_deterministic() {
        let spec = SineWorldSpec::default();
        for kind in [
            DiscriminatorKind::Drail,
            DiscriminatorKind::Diffail,
            DiscriminatorKind::Gail,
        ] {
            let a = run_probe(kind, &tiny(), &spec, 3).unwrap();
            let b = run_probe(kind, &tiny(), &spec, 3).unwrap();
            assert_eq!(a.accuracy, b.accuracy);
            assert_eq!(a.bands, b.bands);
            assert_eq!(a.bands.len(), BAND_DISTANCES.len());
            assert!((0.0..=1.0).contains(&a.accuracy));
            assert!(a.final_loss.is_finite());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = tiny();
        c.eval_samples = 0;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.denoiser.state_dim = 2;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.lr = -1.0;
        assert!(c.validate().is_err());
    }
}
