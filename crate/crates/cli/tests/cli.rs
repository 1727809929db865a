use std::path::Path;
use std::process::{Command, Output};

use alspot::dataset::{SplitRatios, SyntheticConfig};
use alspot::harness::{ALConfig, Schedule, StopConfig};
use alspot::model::TrainConfig;
use alspot::selection::{Aggregation, SelectionConfig, Strategy};
use serde_json::Value;

fn alspot(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_alspot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "alspot {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_configs(dir: &Path) {
    let data = SyntheticConfig {
        num_videos: 8,
        clips_per_video: 10,
        frames_per_clip: 10,
        feature_dim: 6,
        num_classes: 2,
        event_rates: vec![4.0, 2.0],
        split: SplitRatios {
            train: 0.625,
            valid: 0.125,
        },
        seed: 5,
        ..SyntheticConfig::default()
    };
    std::fs::write(dir.join("data.toml"), toml::to_string(&data).unwrap()).unwrap();
    let runs = dir.join("runs");
    std::fs::create_dir_all(&runs).unwrap();
    for (name, strategy) in [("em", Strategy::Em), ("rs", Strategy::Rs)] {
        let config = ALConfig {
            name: Some(name.into()),
            dataset: "../data.ndjson".into(),
            selection: SelectionConfig::new(strategy, Aggregation::Max),
            schedule: Schedule::Fixed(25.0),
            train: TrainConfig {
                max_epochs: 3,
                ..TrainConfig::fast()
            },
            stop: StopConfig::default(),
            ..ALConfig::default()
        };
        std::fs::write(runs.join(format!("{name}.toml")), config.to_toml()).unwrap();
    }
}

#[test]
fn generate_run_evaluate_compare() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_configs(root);
    let path = |p: &str| root.join(p).to_str().unwrap().to_string();

    alspot(&["gen-data", "--config", &path("data.toml"), "--out", &path("data.ndjson")]);
    assert!(root.join("data.ndjson").is_file());

    let out = alspot(&[
        "run",
        "--config",
        &path("runs/em.toml"),
        "--schedule",
        "fixed:50",
        "--seed",
        "9",
        "--out",
        &path("out"),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 steps"));
    let resolved = ALConfig::load(&root.join("out/resolved_config.toml")).unwrap();
    assert_eq!((resolved.schedule, resolved.seed), (Schedule::Fixed(50.0), 9));

    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("out/report.json")).unwrap()).unwrap();
    let out = alspot(&[
        "eval",
        "--predictions",
        &path("out/predictions.ndjson"),
        "--dataset",
        &path("data.ndjson"),
    ]);
    let scored: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(scored["loose_avg_map"], report["loose_avg_map"]);
    assert_eq!(scored["tight_avg_map"], report["tight_avg_map"]);

    alspot(&[
        "compare",
        "--configs",
        &path("runs"),
        "--out",
        &path("cmp"),
        "--seeds",
        "1,2",
    ]);
    let cmp: Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cmp/report.json")).unwrap()).unwrap();
    let labels: Vec<&str> = cmp["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["em", "rs"]);
    assert_eq!(cmp["seeds"], serde_json::json!([1, 2]));
    assert!(std::fs::read_to_string(root.join("cmp/report.txt")).unwrap().contains("AULC"));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = \"nope\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_alspot"))
        .args(["run", "--config"])
        .arg(dir.path().join("bad.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
