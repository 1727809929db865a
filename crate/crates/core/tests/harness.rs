use alspot::dataset::{generate_synthetic, Dataset, LabelKind, SplitRatios, SyntheticConfig};
use alspot::harness::{
    annotation_rounds, passive_full_training, run_active_learning, ALConfig, Schedule,
    SimulatedOracle, StopConfig,
};
use alspot::model::{read_checkpoint, HeadMode, Paradigm, TrainConfig};
use alspot::selection::{Aggregation, SelectionConfig, Strategy};

fn tiny_dataset() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        num_videos: 8,
        clips_per_video: 20,
        frames_per_clip: 10,
        feature_dim: 6,
        num_classes: 2,
        event_rates: vec![4.0, 2.0],
        split: SplitRatios {
            train: 0.625,
            valid: 0.125,
        },
        seed: 3,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn config(strategy: Strategy, schedule: Schedule) -> ALConfig {
    ALConfig {
        selection: SelectionConfig::new(strategy, Aggregation::Max),
        schedule,
        train: TrainConfig {
            max_epochs: 4,
            ..TrainConfig::fast()
        },
        seed: 21,
        ..ALConfig::default()
    }
}

#[test]
fn labeled_counts_follow_the_schedule() {
    let dataset = tiny_dataset();
    for schedule in [Schedule::Fixed(10.0), Schedule::Fixed(7.0), Schedule::Adaptive] {
        let config = ALConfig {
            stop: StopConfig {
                max_steps: Some(12),
                ..StopConfig::default()
            },
            ..config(Strategy::Rs, schedule)
        };
        let outcome = run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), None).unwrap();
        let universe = 100;
        let mut expected = 0;
        let rounds = annotation_rounds(universe, schedule);
        for (point, budget) in outcome.curve.points.iter().zip(&rounds) {
            expected += budget;
            assert_eq!(point.labeled_clips, expected, "{schedule}");
            assert!((point.labeled_ratio - expected as f64 / universe as f64).abs() < 1e-15);
        }
        assert_eq!(outcome.steps, rounds.len().min(12), "{schedule}");
    }
}

#[test]
fn labeling_everything_matches_passive_training() {
    let dataset = tiny_dataset();
    for strategy in [Strategy::Em, Strategy::Rs] {
        let config = config(strategy, Schedule::Fixed(40.0));
        let outcome = run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), None).unwrap();
        let last = outcome.curve.points.last().unwrap();
        assert_eq!(last.labeled_ratio, 1.0);
        let (model, eval) = passive_full_training(&config, &dataset).unwrap();
        assert_eq!(outcome.model.as_ref(), Some(&model));
        assert_eq!(last.loose_avg_map, eval.loose.avg_map);
        assert_eq!(last.tight_avg_map, eval.tight.avg_map);
    }
}

#[test]
fn master_seed_changes_the_run() {
    let dataset = tiny_dataset();
    let run = |seed| {
        let config = ALConfig {
            seed,
            stop: StopConfig {
                max_steps: Some(3),
                ..StopConfig::default()
            },
            ..config(Strategy::Rs, Schedule::Fixed(10.0))
        };
        run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), None)
            .unwrap()
            .curve
            .canonical_csv()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn weak_labels_train_the_clip_head() {
    let dataset = tiny_dataset();
    let config = ALConfig {
        label_kind: LabelKind::Weak,
        head_mode: HeadMode::Clip,
        stop: StopConfig {
            max_steps: Some(3),
            ..StopConfig::default()
        },
        ..config(Strategy::Em, Schedule::Fixed(20.0))
    };
    let outcome = run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), None).unwrap();
    assert_eq!(outcome.steps, 3);
    assert!(outcome.failure.is_none());
    assert!(outcome
        .curve
        .points
        .iter()
        .all(|p| (0.0..=1.0).contains(&p.loose_avg_map)));
}

#[test]
fn run_writes_its_artifacts() {
    let dataset = tiny_dataset();
    let dir = tempfile::tempdir().unwrap();
    let config = ALConfig {
        stop: StopConfig {
            max_steps: Some(3),
            ..StopConfig::default()
        },
        ..config(Strategy::Em, Schedule::Fixed(10.0))
    };
    let outcome =
        run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), Some(dir.path())).unwrap();
    let root = dir.path();
    for name in [
        "resolved_config.toml",
        "curve.csv",
        "report.json",
        "predictions.ndjson",
        "logs/train_step_000.csv",
        "logs/train_step_002.csv",
        "checkpoints/step_002.ckpt",
        "scores/step_001.csv",
        "scores/step_002.csv",
    ] {
        assert!(root.join(name).is_file(), "missing {name}");
    }
    assert!(!root.join("failure.txt").exists());
    let resolved = ALConfig::load(&root.join("resolved_config.toml")).unwrap();
    assert_eq!(resolved.selection, config.selection);
    let curve = std::fs::read_to_string(root.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + outcome.steps);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert!(report["aulc"].is_number());
}

#[test]
fn divergent_continual_run_stops_cleanly() {
    let dataset = tiny_dataset();
    let dir = tempfile::tempdir().unwrap();
    let config = ALConfig {
        train: TrainConfig {
            paradigm: Paradigm::Continual,
            finetune_lr: 1e3,
            ..TrainConfig::continual()
        },
        ..config(Strategy::Em, Schedule::Fixed(10.0))
    };
    let outcome =
        run_active_learning(&config, &dataset, &mut SimulatedOracle::new(&dataset), Some(dir.path())).unwrap();
    let reason = outcome.failure.expect("run should fail");
    assert!(reason.contains("diverged"), "{reason}");
    let written = std::fs::read_to_string(dir.path().join("failure.txt")).unwrap();
    assert_eq!(written.trim(), reason);
    let mut checkpoints = 0;
    for entry in std::fs::read_dir(dir.path().join("checkpoints")).unwrap() {
        let file = std::fs::File::open(entry.unwrap().path()).unwrap();
        let params = read_checkpoint(std::io::BufReader::new(file)).unwrap();
        assert!(params.is_finite());
        checkpoints += 1;
    }
    assert_eq!(checkpoints, outcome.steps);
}
