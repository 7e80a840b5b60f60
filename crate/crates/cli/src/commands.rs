//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use drail_core::env::{
    gen_expert_dataset, sine_axes, sine_expert_sample, EnvConfig, GridBounds, PointReachConfig,
    DATASET_MAGIC, EXPERT_KD, EXPERT_KP, HORIZON,
};
use drail_core::nn::{Checkpoint, CheckpointKind, CHECKPOINT_MAGIC};
use drail_core::rng;
use drail_core::trainer;
use drail_core::trainer::{
    evaluate_policy, load_expert, metrics_csv, train_with, EvalMode, GridQuantity, RunOptions,
};
use drail_core::{Discriminator, EnvKind, ExpertDataset, GaussianPolicy, TrainConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{overrides, EvalArgs, GenExpertArgs, InspectArgs, RewardMapArgs, TrainArgs};

pub const RUN_FORMAT: &str = "drail-run/1";
pub const EXPERT_FORMAT: &str = "drail-expert/1";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<drail_core::Error> for CliError {
    fn from(e: drail_core::Error) -> Self {
        use drail_core::Error as E;
        match e {
            E::Numerical { .. } | E::NonFinite { .. } => CliError::Numerical(e.to_string()),
            E::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn parse_env(name: &str) -> Result<EnvKind> {
    EnvKind::parse(name).ok_or_else(|| {
        usage(format!(
            "unknown env `{name}`; valid envs: {}",
            EnvKind::NAMES.join(", ")
        ))
    })
}

/// Worker threads for reward labeling, from `DRAIL_THREADS` (default 1).
fn threads() -> Result<usize> {
    match std::env::var("DRAIL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(usage(format!(
                "DRAIL_THREADS must be a positive integer, got `{v}`"
            ))),
        },
    }
}

/// Record written next to every artifact so a run can be repeated.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: &'a str,
    seed: u64,
    config: Value,
    artifacts: BTreeMap<&'a str, String>,
}

// ---------------------------------------------------------------------------

/// The scripted PD controller as a linear policy over
/// `[position, velocity, goal]`; exact without the wall because the
/// environment applies the same action clamp.
fn expert_policy() -> Result<GaussianPolicy> {
    let (kp, kd) = (EXPERT_KP, EXPERT_KD);
    let weights = vec![
        -kp, 0.0, -kd, 0.0, kp, 0.0, //
        0.0, -kp, 0.0, -kd, 0.0, kp,
    ];
    Ok(GaussianPolicy::linear(
        weights,
        vec![0.0, 0.0],
        6,
        drail_core::policy::LOG_STD_MIN,
    )?)
}

pub fn gen_expert(a: &GenExpertArgs) -> Result<()> {
    let kind = parse_env(&a.env)?;
    if a.n == 0 {
        return Err(usage("--n must be positive"));
    }
    let mut r = rng::stream(a.seed, "expert");
    let mut config = json!({ "env": kind, "n": a.n });
    let ds = match kind {
        EnvKind::Sine => {
            if a.expert_checkpoint.is_some() || a.wall {
                return Err(usage(
                    "--wall and --expert-checkpoint apply to point_reach only",
                ));
            }
            sine_expert_sample(&Default::default(), a.n, &mut r)?
        }
        EnvKind::PointReach => {
            let cfg = PointReachConfig {
                noise_scale: a.noise_scale,
                wall: a.wall,
                horizon: HORIZON,
            };
            config["point_reach"] = serde_json::to_value(&cfg).expect("plain data serializes");
            gen_expert_dataset(&cfg, a.n, &mut r)?
        }
    };
    ds.save(&a.output)?;
    let mut artifacts = BTreeMap::from([("dataset", a.output.display().to_string())]);
    if let Some(path) = &a.expert_checkpoint {
        if a.wall {
            return Err(usage(
                "the linear expert checkpoint does not model the wall detour",
            ));
        }
        expert_policy()?.to_checkpoint(None).save(path)?;
        artifacts.insert("expert_checkpoint", path.display().to_string());
    }
    let manifest = Manifest {
        format: EXPERT_FORMAT,
        seed: a.seed,
        config,
        artifacts,
    };
    write_file(&manifest_path(&a.output), to_json(&manifest))?;
    println!(
        "wrote {} transitions ({} trajectories) to {}",
        ds.len(),
        ds.num_trajectories(),
        a.output.display()
    );
    Ok(())
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

// ---------------------------------------------------------------------------

/// Reads a config or run manifest and applies overrides; every default is
/// materialized in the result.
pub fn resolve_config(path: Option<&Path>, sets: &[String]) -> Result<TrainConfig> {
    let mut value = match path {
        None => Value::Object(Default::default()),
        Some(p) => {
            let text = String::from_utf8(read_file(p)?)
                .map_err(|_| usage(format!("{}: not UTF-8", p.display())))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            match v.get("format").and_then(Value::as_str) {
                Some(RUN_FORMAT) => v
                    .get("config")
                    .cloned()
                    .ok_or_else(|| usage(format!("{}: manifest has no config", p.display())))?,
                _ => v,
            }
        }
    };
    let parse = |v: Value| -> Result<TrainConfig> {
        serde_json::from_value::<TrainConfig>(v).map_err(|e| usage(format!("config: {e}")))
    };
    value = serde_json::to_value(parse(value)?).expect("plain data serializes");
    for s in sets {
        overrides::apply(&mut value, s).map_err(usage)?;
    }
    let cfg = parse(value)?;
    cfg.validate()?;
    Ok(cfg)
}

fn env_name(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::Sine => "sine",
        EnvKind::PointReach => "point_reach",
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
    let threads = threads()?;
    // Validation and data loading come before any compute.
    let expert = load_expert(&cfg)?;
    let method = serde_json::to_value(cfg.method).expect("plain data serializes");
    let dir = a.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!(
            "{}-{}-seed{}",
            method.as_str().unwrap_or("run"),
            env_name(cfg.env),
            cfg.seed
        ))
    });
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let quiet = a.quiet;
    let out = train_with(&cfg, &expert, RunOptions { threads }, |row| {
        if !quiet {
            eprintln!(
                "steps {:>8}  disc {:.4}  reward {:+.4}  success {:.3}",
                row.env_steps, row.disc_loss, row.mean_reward, row.success_rate
            );
        }
    })?;

    let mut artifacts = BTreeMap::new();
    let policy_path = dir.join("policy.ckpt");
    out.policy
        .to_checkpoint(Some(&out.critic))
        .save(&policy_path)?;
    artifacts.insert("policy", policy_path.display().to_string());
    if let Some(disc) = &out.discriminator {
        let p = dir.join("discriminator.ckpt");
        disc.to_checkpoint().save(&p)?;
        artifacts.insert("discriminator", p.display().to_string());
    }
    let metrics_path = dir.join("metrics.csv");
    write_file(&metrics_path, metrics_csv(&out.metrics))?;
    artifacts.insert("metrics", metrics_path.display().to_string());
    if let Some(p) = &cfg.expert_path {
        artifacts.insert("expert", p.display().to_string());
    }
    let manifest = Manifest {
        format: RUN_FORMAT,
        seed: cfg.seed,
        config: serde_json::to_value(&cfg).expect("plain data serializes"),
        artifacts,
    };
    write_file(&dir.join("manifest.json"), to_json(&manifest))?;
    println!(
        "final success {:.3} over {} episodes; run directory {}",
        out.final_eval.success_rate,
        out.final_eval.episodes,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn eval(a: &EvalArgs) -> Result<()> {
    let kind = parse_env(&a.env)?;
    if a.episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.kind != CheckpointKind::Policy {
        return Err(usage(format!(
            "{} holds a {} checkpoint, not a policy",
            a.checkpoint.display(),
            ckpt.kind.name()
        )));
    }
    let (policy, _) = GaussianPolicy::from_checkpoint(&ckpt)?;
    let env_cfg = EnvConfig {
        kind,
        point_reach: PointReachConfig {
            noise_scale: a.noise_scale,
            wall: a.wall,
            horizon: a.horizon.unwrap_or(HORIZON),
        },
        ..EnvConfig::default()
    };
    let (sd, ad) = kind.dims();
    if policy.state_dim() != sd || policy.action_dim() != ad {
        return Err(usage(format!(
            "policy is {}->{} but {} needs {sd}->{ad}",
            policy.state_dim(),
            policy.action_dim(),
            env_name(kind)
        )));
    }
    let mode = if a.stochastic {
        EvalMode::Stochastic
    } else {
        EvalMode::Deterministic
    };
    let report = evaluate_policy(&policy, &env_cfg, a.episodes, a.seed, mode)?;
    print!("{}", to_json(&report));
    Ok(())
}

// ---------------------------------------------------------------------------

fn parse_resolution(text: &str) -> Result<(usize, usize)> {
    let bad = || {
        usage(format!(
            "resolution `{text}` must look like 101x121 with both sides >= 2"
        ))
    };
    let (s, a) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let (s, a) = (
        s.trim().parse::<usize>().map_err(|_| bad())?,
        a.trim().parse::<usize>().map_err(|_| bad())?,
    );
    if s < 2 || a < 2 {
        return Err(bad());
    }
    Ok((s, a))
}

pub fn reward_map(a: &RewardMapArgs) -> Result<()> {
    let (s_res, a_res) = parse_resolution(&a.resolution)?;
    let quantity: GridQuantity = serde_json::from_value(Value::String(a.quantity.clone()))
        .map_err(|_| {
            usage(format!(
                "--quantity must be prob or reward, got `{}`",
                a.quantity
            ))
        })?;
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if !matches!(
        ckpt.kind,
        CheckpointKind::Drail | CheckpointKind::Gail | CheckpointKind::Diffail
    ) {
        return Err(usage(format!(
            "{} holds a {} checkpoint; reward maps need a discriminator",
            a.checkpoint.display(),
            ckpt.kind.name()
        )));
    }
    let disc = Discriminator::from_checkpoint(&ckpt)?;
    let (s_axis, a_axis) = sine_axes(s_res, a_res, GridBounds::default())?;
    let grid = trainer::reward_map(
        &disc,
        &s_axis,
        &a_axis,
        a.samples,
        quantity,
        20.0,
        &mut rng::stream(a.seed, "reward-map"),
    )?;
    write_file(&a.output, grid.to_csv())?;
    println!("wrote {s_res}x{a_res} grid to {}", a.output.display());
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let bytes = read_file(&a.path)?;
    let magic = bytes.get(..4).unwrap_or(&bytes);
    let report = if magic == DATASET_MAGIC {
        let ds = ExpertDataset::from_bytes(&bytes)?;
        json!({
            "type": "dataset",
            "state_dim": ds.state_dim,
            "action_dim": ds.action_dim,
            "transitions": ds.len(),
            "trajectories": ds.num_trajectories(),
            "bytes": bytes.len(),
        })
    } else if magic == CHECKPOINT_MAGIC {
        let ckpt = Checkpoint::from_bytes(&bytes)?;
        let nets: Vec<Value> = ckpt
            .nets
            .iter()
            .map(|net| {
                let layers: Vec<Value> = net
                    .specs()
                    .iter()
                    .map(|s| json!({ "in": s.in_dim, "out": s.out_dim, "activation": format!("{:?}", s.activation) }))
                    .collect();
                json!({ "layers": layers, "params": net.num_params() })
            })
            .collect();
        json!({
            "type": "checkpoint",
            "kind": ckpt.kind.name(),
            "nets": nets,
            "extra": ckpt.extra,
            "bytes": bytes.len(),
        })
    } else {
        return Err(usage(format!(
            "{}: bad magic {magic:?}; expected a dataset ({:?}) or checkpoint ({:?})",
            a.path.display(),
            DATASET_MAGIC,
            CHECKPOINT_MAGIC
        )));
    };
    print!("{}", to_json(&report));
    Ok(())
}
