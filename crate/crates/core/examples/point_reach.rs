//! Trains one method on PointReach and prints the metrics log.
//!
//! `cargo run --release -p drail-core --example point_reach -- [method] [seed] [env_steps] [trajectories] [json-overrides]`
//!
//! The optional last argument is a JSON object merged over the default config,
//! e.g. `'{"disc": {"lr": 0.001}}'`.

use drail_core::env::{gen_expert_dataset, PointReachConfig};
use drail_core::rng;
use drail_core::trainer::{metrics_csv, train_with, RunOptions};
use drail_core::{Method, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let method: Method = serde_json::from_str(&format!(
        "\"{}\"",
        args.first().map_or("drail", String::as_str)
    ))?;
    let seed: u64 = args.get(1).map_or(Ok(0), |s| s.parse())?;
    let steps: usize = args.get(2).map_or(Ok(300_000), |s| s.parse())?;
    let trajectories: usize = args.get(3).map_or(Ok(100), |s| s.parse())?;

    let expert = gen_expert_dataset(
        &PointReachConfig::default(),
        trajectories,
        &mut rng::stream(seed, "expert"),
    )?;
    let base = TrainConfig {
        method,
        seed,
        total_env_steps: steps,
        ..TrainConfig::default()
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(text) = args.get(4) {
        merge(&mut value, serde_json::from_str(text)?);
    }
    let cfg: TrainConfig = serde_json::from_value(value)?;
    let start = std::time::Instant::now();
    let out = train_with(&cfg, &expert, RunOptions::default(), |row| {
        eprintln!(
            "{:>7} disc {:.3} reward {:+.3} success {:.2} ({:.0}s)",
            row.env_steps,
            row.disc_loss,
            row.mean_reward,
            row.success_rate,
            start.elapsed().as_secs_f64()
        );
    })?;
    print!("{}", metrics_csv(&out.metrics));
    Ok(())
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}
