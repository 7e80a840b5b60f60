//! End-to-end runs of the `drail` binary.

use std::path::Path;
use std::process::{Command, Output};

fn drail(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drail"))
        .args(args)
        .current_dir(dir)
        .env_remove("DRAIL_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn sine_config(dir: &Path) {
    let cfg = r#"{"env": "sine", "method": "drail", "expert_path": "e.drld",
        "total_env_steps": 512, "eval_interval": 512, "eval_episodes": 4,
        "ppo": {"rollout_len": 512}, "disc": {"denoiser": {"hidden": [16, 16]}}}"#;
    std::fs::write(dir.join("c.json"), cfg).unwrap();
    assert!(drail(
        dir,
        &[
            "gen-expert",
            "--env",
            "sine",
            "--n",
            "500",
            "--seed",
            "1",
            "-o",
            "e.drld"
        ]
    )
    .status
    .success());
}

#[test]
fn gen_expert_is_deterministic_and_counts() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a.drld", "b.drld"] {
        let o = drail(
            d.path(),
            &[
                "gen-expert",
                "--env",
                "sine",
                "--n",
                "1000",
                "--seed",
                "1",
                "-o",
                out,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(d.path().join("a.drld")).unwrap(),
        std::fs::read(d.path().join("b.drld")).unwrap()
    );
    let info = json(&drail(d.path(), &["inspect", "a.drld"]));
    assert_eq!(info["transitions"], 1000);
    assert_eq!(info["type"], "dataset");
    assert!(d.path().join("a.drld.manifest.json").exists());
}

#[test]
fn bad_env_lists_valid_names() {
    let d = tempfile::tempdir().unwrap();
    let o = drail(
        d.path(),
        &["gen-expert", "--env", "nosuch", "--n", "3", "-o", "x"],
    );
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("sine") && err.contains("point_reach"), "{err}");
}

#[test]
fn expert_checkpoint_evaluates_as_expert() {
    let d = tempfile::tempdir().unwrap();
    let o = drail(
        d.path(),
        &[
            "gen-expert",
            "--env",
            "point_reach",
            "--n",
            "5",
            "-o",
            "p.drld",
            "--expert-checkpoint",
            "x.ckpt",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = drail(
        d.path(),
        &[
            "eval",
            "--checkpoint",
            "x.ckpt",
            "--episodes",
            "100",
            "--seed",
            "3",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(json(&o)["success_rate"].as_f64().unwrap() >= 0.99);
    let o = drail(
        d.path(),
        &["eval", "--checkpoint", "x.ckpt", "--episodes", "7"],
    );
    assert_eq!(json(&o)["episodes"], 7);
}

#[test]
fn corrupt_checkpoint_is_bad_magic() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = drail(d.path(), &["eval", "--checkpoint", "junk.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad magic"));
    let o = drail(d.path(), &["inspect", "junk.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_run_and_manifest_reproduces_it() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    let o = drail(
        d.path(),
        &["train", "--config", "c.json", "-o", "run1", "--quiet"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "policy.ckpt",
        "discriminator.ckpt",
        "metrics.csv",
        "manifest.json",
    ] {
        assert!(d.path().join("run1").join(f).exists(), "{f} missing");
    }
    let o = drail(
        d.path(),
        &[
            "train",
            "--config",
            "run1/manifest.json",
            "-o",
            "run2",
            "--quiet",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |p: &str| std::fs::read(d.path().join(p)).unwrap();
    assert_eq!(read("run1/metrics.csv"), read("run2/metrics.csv"));
    assert_eq!(read("run1/policy.ckpt"), read("run2/policy.ckpt"));
}

#[test]
fn overrides_reach_the_manifest() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    let o = drail(
        d.path(),
        &[
            "train",
            "--config",
            "c.json",
            "--set",
            "method=gail",
            "-o",
            "g",
            "--quiet",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.path().join("g/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["method"], "gail");
    let info = json(&drail(d.path(), &["inspect", "g/discriminator.ckpt"]));
    assert_eq!(info["kind"], "gail");
}

#[test]
fn validation_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    let o = drail(d.path(), &["train", "--set", "method=drail"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expert_path"));
    let o = drail(
        d.path(),
        &["train", "--config", "c.json", "--set", "disc.nope=1"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("disc.nope"));
    std::fs::write(d.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let o = drail(d.path(), &["train", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn numerical_abort_exits_three() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    let o = drail(
        d.path(),
        &[
            "train",
            "--config",
            "c.json",
            "--set",
            "disc.lr=1e300",
            "-o",
            "nan",
            "--quiet",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn reward_map_layout_determinism_and_kind_check() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    // A zero-step discriminator is the untrained classifier.
    let o = drail(
        d.path(),
        &[
            "train",
            "--config",
            "c.json",
            "--set",
            "disc.lr=0",
            "-o",
            "r",
            "--quiet",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for out in ["a.csv", "b.csv"] {
        let o = drail(
            d.path(),
            &[
                "reward-map",
                "--checkpoint",
                "r/discriminator.ckpt",
                "--resolution",
                "101x121",
                "--samples",
                "2",
                "-o",
                out,
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(d.path().join("a.csv")).unwrap();
    assert_eq!(
        text,
        std::fs::read_to_string(d.path().join("b.csv")).unwrap()
    );
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 102);
    assert!(rows.iter().all(|r| r.split(',').count() == 122));
    for row in &rows[1..] {
        for cell in row.split(',').skip(1) {
            let v: f64 = cell.parse().unwrap();
            assert!((v - 0.5).abs() <= 0.05, "{v}");
        }
    }
    let o = drail(
        d.path(),
        &["reward-map", "--checkpoint", "r/policy.ckpt", "-o", "p.csv"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    sine_config(d.path());
    let o = Command::new(env!("CARGO_BIN_EXE_drail"))
        .args(["train", "--config", "c.json", "--quiet", "-o", "t"])
        .current_dir(d.path())
        .env("DRAIL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
