//! Diffusion-reward adversarial imitation learning at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense networks over flat `f64` parameter vectors, exact
//!   reverse-mode gradients, Adam, and the binary checkpoint format.
//! - [`diffusion`]: cosine noise schedule, forward noising, the conditional
//!   noise predictor and its single-sample denoising loss.
//! - [`discriminator`]: the diffusion discriminative classifier plus the GAIL
//!   and DiffAIL baselines, each with a BCE training loss and a logit reward.
//! - [`policy`]: Gaussian policy, value critic, GAE and the PPO update.
//! - [`env`]: the Sine world, the point-mass reach task, scripted experts and
//!   the expert dataset file format.
//! - [`probe`]: the Sine-world discriminator probe (accuracy and reward
//!   profile of one discriminator trained in isolation).
//! - [`trainer`]: the alternating discriminator / policy loop, behaviour
//!   cloning, evaluation and reward-landscape export.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod probe;
pub mod rng;
pub mod trainer;

pub use diffusion::{ConditionLabel, Denoiser, DenoiserConfig, NoiseSchedule, TimeEncoding};
pub use discriminator::{
    DiffailDiscriminator, Discriminator, DiscriminatorKind, DrailClassifier, GailDiscriminator,
};
pub use env::{
    Actor, EnvKind, ExpertDataset, PointReach, PointReachState, SineWorldSpec, Transition,
};
pub use error::{Error, Result};
pub use nn::{Activation, AdamState, LayerSpec, Mlp, ParamStore};
pub use policy::{Critic, GaussianPolicy, PpoConfig, RolloutBuffer};
pub use probe::{ProbeConfig, ProbeReport};
pub use trainer::{EvalReport, Method, RewardGrid, TrainConfig};
