//! Trains each discriminator on Sine expert pairs against uniform agent
//! pairs, then prints held-out accuracy and the mean `D` in bands around
//! the expert curve.
//!
//! `cargo run --release -p drail-core --example sine -- [seed] [json-probe-overrides]`

use drail_core::discriminator::DiscriminatorKind;
use drail_core::probe::run_probe;
use drail_core::{ProbeConfig, SineWorldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(Ok(0), |s| s.parse())?;
    let mut cfg = ProbeConfig::default();
    if let Some(text) = args.get(1) {
        let mut v = serde_json::to_value(&cfg)?;
        for (k, x) in serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(text)? {
            v[k] = x;
        }
        cfg = serde_json::from_value(v)?;
    }
    let spec = SineWorldSpec::default();
    for kind in [
        DiscriminatorKind::Drail,
        DiscriminatorKind::Diffail,
        DiscriminatorKind::Gail,
    ] {
        let r = run_probe(kind, &cfg, &spec, seed)?;
        let bands: Vec<String> = r
            .bands
            .iter()
            .map(|(d, v)| format!("d={d}: {v:.3}"))
            .collect();
        println!(
            "{kind:?}: accuracy {:.4} (expert {:.4}, agent {:.4}), loss {:.4}, train {:.0}s; bands {}",
            r.accuracy,
            r.expert_accuracy,
            r.agent_accuracy,
            r.final_loss,
            r.train_seconds,
            bands.join(", ")
        );
    }
    Ok(())
}
