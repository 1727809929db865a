//! The active-learning loop: annotate → train → evaluate → select, repeated
//! until the pool is exhausted or a stop condition fires.
//!
//! The seed batch is always drawn at random (no model exists yet). Every run
//! is a pure function of its config, the dataset and the oracle's answers;
//! sub-seeds for seeding, random selection and training all derive from the
//! master seed. Training uses the same derived seed at every step, so a
//! scratch run that reaches 100% labeled data ends with exactly the model a
//! passive full-data training would produce.

mod compare;
mod config;
mod oracle;
mod schedule;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Clip, ClipRef, Dataset, SplitName};
use crate::error::{Error, Result};
use crate::metrics::{
    avg_map, render_percent, AvgMapReport, CurvePoint, LearningCurve, Regime, VideoEval,
};
use crate::model::{self, ModelParams, ModelShape, Paradigm, TrainConfig, TrainingLog};
use crate::selection::{scores_csv, score_pool, select_random, select_top_k, Strategy};
use crate::spotting::{infer_video, NmsConfig, PredictionRecord};

pub use compare::{compare_strategies, ComparisonReport, ComparisonRow};
pub use config::{ALConfig, OracleKind, Schedule, StopConfig};
pub use oracle::{
    ground_truth_labels, simulated_oracle_annotate, AnnotationRequest, LoopStatus, Oracle,
    SimulatedOracle,
};
pub use schedule::{annotation_rounds, next_step_size, step_budget};

/// Mixes a master seed with a purpose tag and index (splitmix64 finalizer).
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_SET: u64 = 1;
const RANDOM_SELECTION: u64 = 2;
const TRAINING: u64 = 3;

/// Labeled set, unlabeled pool and step counter of a running loop.
#[derive(Debug, Clone)]
pub struct ALState {
    pub step: usize,
    universe: usize,
    labeled: BTreeMap<ClipRef, Clip>,
    pool: BTreeMap<ClipRef, Clip>,
}

impl ALState {
    pub fn new(universe: Vec<Clip>) -> Self {
        let pool: BTreeMap<ClipRef, Clip> = universe.into_iter().map(|c| (c.id.clone(), c)).collect();
        Self {
            step: 0,
            universe: pool.len(),
            labeled: BTreeMap::new(),
            pool,
        }
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn pool_count(&self) -> usize {
        self.pool.len()
    }

    pub fn labeled_ratio(&self) -> f64 {
        self.labeled.len() as f64 / self.universe as f64
    }

    pub fn labeled_clips(&self) -> Vec<Clip> {
        self.labeled.values().cloned().collect()
    }

    pub fn pool_clips(&self) -> Vec<Clip> {
        self.pool.values().cloned().collect()
    }

    pub fn pool_refs(&self) -> Vec<ClipRef> {
        self.pool.keys().cloned().collect()
    }

    pub fn pool_clip(&self, id: &ClipRef) -> Option<&Clip> {
        self.pool.get(id)
    }

    pub fn is_labeled(&self, id: &ClipRef) -> bool {
        self.labeled.contains_key(id)
    }

    /// Moves annotated clips from the pool into the labeled set.
    pub fn merge(&mut self, annotated: Vec<Clip>) -> Result<()> {
        for clip in &annotated {
            if !self.pool.contains_key(&clip.id) {
                return Err(Error::Oracle(format!(
                    "clip {} is not in the unlabeled pool",
                    clip.id
                )));
            }
            if clip.label_kind() == crate::dataset::LabelKind::Unlabeled {
                return Err(Error::Oracle(format!("clip {} came back unlabeled", clip.id)));
            }
        }
        for clip in annotated {
            self.pool.remove(&clip.id);
            self.labeled.insert(clip.id.clone(), clip);
        }
        Ok(())
    }
}

/// Test-split evaluation of one model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub tight: AvgMapReport,
    pub loose: AvgMapReport,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate(model: &ModelParams, dataset: &Dataset, nms: &NmsConfig) -> Result<Evaluation> {
    let videos = dataset.split_videos(SplitName::Test)?;
    let mut per_video = Vec::with_capacity(videos.len());
    for video in &videos {
        per_video.push(infer_video(model, video, dataset.frames_per_clip(), nms)?);
    }
    let evals: Vec<VideoEval<'_>> = videos
        .iter()
        .zip(&per_video)
        .map(|(v, p)| VideoEval {
            predictions: p,
            ground_truth: v.spots(),
        })
        .collect();
    let predictions = videos
        .iter()
        .zip(&per_video)
        .flat_map(|(v, preds)| {
            preds.iter().map(|p| PredictionRecord {
                video_id: v.video_id().to_string(),
                class_id: p.class_id,
                time: p.time,
                confidence: p.confidence,
            })
        })
        .collect();
    Ok(Evaluation {
        tight: avg_map(&evals, Regime::Tight)?,
        loose: avg_map(&evals, Regime::Loose)?,
        predictions,
    })
}

/// Final metrics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tight_avg_map: f64,
    pub loose_avg_map: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub aulc: Option<f64>,
    pub md: BTreeMap<String, Option<f64>>,
    pub mp: BTreeMap<String, Option<f64>>,
}

impl MetricsReport {
    fn build(eval: &Evaluation, curve: &LearningCurve, dataset: &Dataset) -> Self {
        let regime_report = match curve.regime {
            Regime::Tight => &eval.tight,
            Regime::Loose => &eval.loose,
        };
        let summary = curve.summary().ok();
        let series = curve.series();
        let md = [5.0, 10.0]
            .iter()
            .map(|&x| (format!("{x}"), crate::metrics::md_at(&series, x).ok()))
            .collect();
        let mp = [90.0, 99.0]
            .iter()
            .map(|&y| {
                (
                    format!("{y}"),
                    crate::metrics::mp_at(&series, y).ok().flatten(),
                )
            })
            .collect();
        Self {
            tight_avg_map: eval.tight.avg_map,
            loose_avg_map: eval.loose.avg_map,
            per_class_ap: regime_report
                .per_class
                .iter()
                .map(|(&k, &ap)| (dataset.config.class_name(k), ap))
                .collect(),
            aulc: summary.map(|s| s.aulc),
            md,
            mp,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "tight Avg-mAP {:.4}\nloose Avg-mAP {:.4}\n",
            self.tight_avg_map, self.loose_avg_map
        );
        if let Some(aulc) = self.aulc {
            out.push_str(&format!("AULC {:.4}\n", aulc));
        }
        for (k, v) in &self.md {
            out.push_str(&format!("Md@{k} {}\n", render_percent(*v)));
        }
        for (k, v) in &self.mp {
            out.push_str(&format!("Mp@{k} {}\n", render_percent(*v)));
        }
        out
    }
}

/// Result of one AL run. A divergent run keeps the curve up to the failure.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub curve: LearningCurve,
    pub model: Option<ModelParams>,
    pub report: Option<MetricsReport>,
    pub failure: Option<String>,
    pub steps: usize,
}

struct Artifacts {
    dir: Option<PathBuf>,
}

impl Artifacts {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(dir) = dir {
            fs::create_dir_all(dir.join("scores"))?;
            fs::create_dir_all(dir.join("logs"))?;
            fs::create_dir_all(dir.join("checkpoints"))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    fn checkpoint(&self, step: usize, params: &ModelParams) -> Result<()> {
        if let Some(dir) = &self.dir {
            let file = fs::File::create(dir.join(format!("checkpoints/step_{step:03}.ckpt")))?;
            model::write_checkpoint(params, std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

/// Model shape implied by a dataset and head mode.
pub fn model_shape(config: &ALConfig, dataset: &Dataset) -> ModelShape {
    ModelShape::new(dataset.feature_dim(), dataset.num_classes(), config.head_mode)
}

/// Training config with the run's derived seed.
pub fn run_train_config(config: &ALConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(config.seed, TRAINING, 0),
        ..config.train.clone()
    }
}

fn train_step(
    config: &ALConfig,
    state: &ALState,
    valid: &[Clip],
    shape: ModelShape,
    previous: Option<&ModelParams>,
) -> Result<(ModelParams, TrainingLog)> {
    let train_config = run_train_config(config);
    let labeled = state.labeled_clips();
    let init = match train_config.paradigm {
        Paradigm::Scratch => None,
        Paradigm::Continual => previous,
    };
    match model::train(&labeled, valid, shape, &train_config, init) {
        Err(Error::Divergence { epoch, loss })
            if config.restart_on_divergence && init.is_some() =>
        {
            tracing::warn!(epoch, loss, "fine-tuning diverged; restarting from scratch");
            model::train(&labeled, valid, shape, &train_config, None)
        }
        other => other,
    }
}

/// Runs the full loop against `oracle`, writing artifacts to `out_dir` when given.
pub fn run_active_learning(
    config: &ALConfig,
    dataset: &Dataset,
    oracle: &mut dyn Oracle,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let artifacts = Artifacts::new(out_dir)?;
    artifacts.write("resolved_config.toml", config.to_toml())?;

    let shape = model_shape(config, dataset);
    let universe = dataset.split_clips(SplitName::Train)?;
    if universe.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let valid = dataset.labeled_split_clips(SplitName::Valid)?;
    let mut state = ALState::new(universe);
    let mut curve = LearningCurve::new(config.regime);
    let mut model: Option<ModelParams> = None;
    let mut last_eval: Option<Evaluation> = None;

    oracle.status_changed(LoopStatus::Selecting);
    let seed_budget = step_budget(
        next_step_size(0.0, config.schedule),
        state.universe(),
        state.pool_count(),
    );
    let mut batch = select_random(
        &state.pool_refs(),
        seed_budget,
        derive_seed(config.seed, SEED_SET, 0),
    );

    let failure = loop {
        let step = state.step;
        let clips: Vec<Clip> = batch
            .iter()
            .map(|id| state.pool_clip(id).cloned().expect("selected from pool"))
            .collect();
        oracle.status_changed(LoopStatus::AwaitingLabels);
        let annotated = oracle.annotate(AnnotationRequest {
            step,
            clips: &clips,
            label_kind: config.label_kind,
            model: model.as_ref(),
            nms: &config.nms,
        })?;
        if annotated.len() != clips.len()
            || annotated.iter().zip(&clips).any(|(a, c)| a.id != c.id)
        {
            return Err(Error::Oracle("oracle answered a different batch".into()));
        }
        state.merge(annotated)?;

        oracle.status_changed(LoopStatus::Training);
        let (params, log) = match train_step(config, &state, &valid, shape, model.as_ref()) {
            Ok(trained) => trained,
            Err(err @ Error::Divergence { .. }) => break Some(format!("step {step}: {err}")),
            Err(err) => return Err(err),
        };
        artifacts.write(&format!("logs/train_step_{step:03}.csv"), log.to_csv())?;
        if config.write_checkpoints {
            artifacts.checkpoint(step, &params)?;
        }

        let eval = evaluate(&params, dataset, &config.nms)?;
        curve.points.push(CurvePoint {
            step,
            labeled_ratio: state.labeled_ratio(),
            labeled_clips: state.labeled_count(),
            loose_avg_map: eval.loose.avg_map,
            tight_avg_map: eval.tight.avg_map,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        artifacts.write("curve.csv", curve.to_csv())?;
        oracle.curve_updated(&curve);
        tracing::debug!(
            step,
            ratio = state.labeled_ratio(),
            loose = eval.loose.avg_map,
            tight = eval.tight.avg_map,
            "step evaluated"
        );
        model = Some(params);
        last_eval = Some(eval);

        let reached_target = config
            .stop
            .target_avg_map
            .is_some_and(|t| curve.points.last().is_some_and(|p| p.value(config.regime) >= t));
        let out_of_steps = config.stop.max_steps.is_some_and(|m| step + 1 >= m);
        if state.pool_count() == 0 || reached_target || out_of_steps {
            break None;
        }

        oracle.status_changed(LoopStatus::Selecting);
        let budget = step_budget(
            next_step_size(state.labeled_ratio(), config.schedule),
            state.universe(),
            state.pool_count(),
        );
        batch = match config.selection.strategy {
            Strategy::Rs => select_random(
                &state.pool_refs(),
                budget,
                derive_seed(config.seed, RANDOM_SELECTION, step as u64 + 1),
            ),
            Strategy::Um | Strategy::Em => {
                let pool = state.pool_clips();
                let current = model.as_ref().expect("trained above");
                let scores = score_pool(current, &pool, &config.selection)?;
                let chosen = select_top_k(&scores, budget);
                artifacts.write(
                    &format!("scores/step_{:03}.csv", step + 1),
                    scores_csv(step + 1, &scores, &chosen),
                )?;
                chosen
            }
        };
        state.step += 1;
    };

    let report = last_eval
        .as_ref()
        .map(|eval| MetricsReport::build(eval, &curve, dataset));
    if let Some(report) = &report {
        artifacts.write("report.json", serde_json::to_string_pretty(report)?)?;
    }
    if let Some(eval) = &last_eval {
        let mut buf = Vec::new();
        crate::spotting::write_predictions(&eval.predictions, &mut buf)?;
        artifacts.write("predictions.ndjson", buf)?;
    }
    match &failure {
        Some(reason) => {
            artifacts.write("failure.txt", format!("{reason}\n"))?;
            oracle.status_changed(LoopStatus::Failed);
        }
        None => oracle.status_changed(LoopStatus::Finished),
    }
    Ok(RunOutcome {
        steps: curve.points.len(),
        curve,
        model,
        report,
        failure,
    })
}

/// Trains once on the whole training split with full ground-truth labels,
/// using the same derived seed as the AL loop, and evaluates on the test split.
pub fn passive_full_training(config: &ALConfig, dataset: &Dataset) -> Result<(ModelParams, Evaluation)> {
    config.validate()?;
    let shape = model_shape(config, dataset);
    let universe = dataset.split_clips(SplitName::Train)?;
    let labeled = simulated_oracle_annotate(&universe, dataset, config.label_kind)?;
    let valid = dataset.labeled_split_clips(SplitName::Valid)?;
    let train_config = TrainConfig {
        paradigm: Paradigm::Scratch,
        ..run_train_config(config)
    };
    let (params, _) = model::train(&labeled, &valid, shape, &train_config, None)?;
    let eval = evaluate(&params, dataset, &config.nms)?;
    Ok((params, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::selection::{Aggregation, SelectionConfig};

    fn tiny_dataset() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_videos: 8,
            clips_per_video: 20,
            frames_per_clip: 10,
            feature_dim: 6,
            num_classes: 2,
            event_rates: vec![4.0, 2.0],
            split: crate::dataset::SplitRatios {
                train: 0.625,
                valid: 0.125,
            },
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn tiny_config(strategy: Strategy, schedule: Schedule) -> ALConfig {
        ALConfig {
            selection: SelectionConfig::new(strategy, Aggregation::Max),
            schedule,
            train: TrainConfig {
                max_epochs: 3,
                ..TrainConfig::fast()
            },
            seed: 11,
            ..ALConfig::default()
        }
    }

    #[test]
    fn fixed_ten_percent_gives_ten_points() {
        let ds = tiny_dataset();
        assert_eq!(ds.split_clips(SplitName::Train).unwrap().len(), 100);
        let config = tiny_config(Strategy::Rs, Schedule::Fixed(10.0));
        let out =
            run_active_learning(&config, &ds, &mut SimulatedOracle::new(&ds), None).unwrap();
        assert!(out.failure.is_none());
        assert_eq!(out.curve.points.len(), 10);
        assert_eq!(out.curve.points.last().unwrap().labeled_ratio, 1.0);
        let counts: Vec<usize> = out.curve.points.iter().map(|p| p.labeled_clips).collect();
        assert_eq!(counts, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
    }

    #[test]
    fn runs_are_deterministic() {
        let ds = tiny_dataset();
        let config = tiny_config(Strategy::Em, Schedule::Fixed(25.0));
        let a = run_active_learning(&config, &ds, &mut SimulatedOracle::new(&ds), None).unwrap();
        let b = run_active_learning(&config, &ds, &mut SimulatedOracle::new(&ds), None).unwrap();
        assert_eq!(a.curve.canonical_csv(), b.curve.canonical_csv());
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn max_steps_stops_early() {
        let ds = tiny_dataset();
        let config = ALConfig {
            stop: StopConfig {
                max_steps: Some(2),
                target_avg_map: None,
            },
            ..tiny_config(Strategy::Um, Schedule::Fixed(10.0))
        };
        let out = run_active_learning(&config, &ds, &mut SimulatedOracle::new(&ds), None).unwrap();
        assert_eq!(out.curve.points.len(), 2);
    }

    #[test]
    fn state_keeps_disjoint_cover() {
        let ds = tiny_dataset();
        let clips = ds.split_clips(SplitName::Train).unwrap();
        let mut state = ALState::new(clips.clone());
        let batch = simulated_oracle_annotate(&clips[..7], &ds, crate::dataset::LabelKind::Full)
            .unwrap();
        state.merge(batch.clone()).unwrap();
        assert_eq!(state.labeled_count() + state.pool_count(), state.universe());
        assert!(state.merge(batch).is_err());
        assert!(state.merge(vec![clips[8].clone()]).is_err());
    }

    #[test]
    fn derived_seeds_differ_by_purpose() {
        assert_ne!(derive_seed(1, SEED_SET, 0), derive_seed(1, TRAINING, 0));
        assert_ne!(derive_seed(1, RANDOM_SELECTION, 1), derive_seed(1, RANDOM_SELECTION, 2));
        assert_eq!(derive_seed(5, TRAINING, 0), derive_seed(5, TRAINING, 0));
    }
}
