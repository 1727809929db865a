//! Training loop, reduce-on-plateau scheduler, and the training log.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{context_features, pooled_features, Gradients, HeadMode, ModelParams, ModelShape};
use crate::dataset::{frame_time, Clip, ClipLabels, LabelKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Fresh initialization at every call, plateau-scheduled.
    Scratch,
    /// Fine-tune `init` for a fixed number of epochs at a fixed LR.
    Continual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    /// 1e-3 down to 1e-8, patience 10.
    Original,
    /// 1e-2 down to 1e-4, patience 5.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub paradigm: Paradigm,
    pub scheduler: SchedulerKind,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    pub bootstrap_epochs: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub batch_size: usize,
    /// Frames within this many seconds of a spot are positives for its class.
    pub positive_radius: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn original() -> Self {
        Self {
            paradigm: Paradigm::Scratch,
            scheduler: SchedulerKind::Original,
            initial_lr: 1e-3,
            min_lr: 1e-8,
            plateau_patience: 10,
            plateau_factor: 10.0,
            max_epochs: 1000,
            bootstrap_epochs: 20,
            finetune_epochs: 5,
            finetune_lr: 1e-2,
            batch_size: 64,
            positive_radius: 0.5,
            seed: 0,
        }
    }

    pub fn fast() -> Self {
        Self {
            scheduler: SchedulerKind::Fast,
            initial_lr: 1e-2,
            min_lr: 1e-4,
            plateau_patience: 5,
            ..Self::original()
        }
    }

    pub fn continual() -> Self {
        Self {
            paradigm: Paradigm::Continual,
            ..Self::fast()
        }
    }

    pub fn with_scheduler(mut self, kind: SchedulerKind) -> Self {
        let preset = match kind {
            SchedulerKind::Original => Self::original(),
            SchedulerKind::Fast => Self::fast(),
        };
        self.scheduler = kind;
        self.initial_lr = preset.initial_lr;
        self.min_lr = preset.min_lr;
        self.plateau_patience = preset.plateau_patience;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.initial_lr > self.min_lr) {
            return Err(Error::config("learning rates need initial_lr > min_lr > 0"));
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("plateau_patience must be >= 1"));
        }
        if !(self.plateau_factor > 1.0) {
            return Err(Error::config("plateau_factor must be > 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.finetune_lr > 0.0) {
            return Err(Error::config("finetune_lr must be > 0"));
        }
        if !(self.positive_radius >= 0.0) {
            return Err(Error::config("positive_radius must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss,lr\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.valid_loss, r.lr);
        }
        out
    }

    pub fn valid_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.valid_loss).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauDecision {
    pub lr: f64,
    pub reduced: bool,
    /// Set when a plateau is hit and a further reduction would cross `min_lr`.
    pub stop: bool,
}

/// Divides the LR by `factor` once the validation loss has failed to improve
/// by at least 1e-6 (relative) for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    min_lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

const IMPROVEMENT_REL: f64 = 1e-6;
const LR_FLOOR_TOL: f64 = 1e-9;

impl PlateauScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.initial_lr,
            min_lr: config.min_lr,
            factor: config.plateau_factor,
            patience: config.plateau_patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, valid_loss: f64) -> PlateauDecision {
        if !self.best.is_finite() || valid_loss < self.best - self.best.abs() * IMPROVEMENT_REL {
            self.best = valid_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        let mut decision = PlateauDecision {
            lr: self.lr,
            reduced: false,
            stop: false,
        };
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            let next = self.lr / self.factor;
            if next < self.min_lr * (1.0 - LR_FLOOR_TOL) {
                decision.stop = true;
            } else {
                self.lr = next;
                decision.lr = next;
                decision.reduced = true;
            }
        }
        decision
    }
}

/// Replays the scheduler over a sequence of validation losses and returns the
/// decision taken after the last one.
pub fn plateau_update(valid_losses: &[f64], config: &TrainConfig) -> PlateauDecision {
    let mut scheduler = PlateauScheduler::new(config);
    let mut decision = PlateauDecision {
        lr: config.initial_lr,
        reduced: false,
        stop: false,
    };
    for &loss in valid_losses {
        decision = scheduler.observe(loss);
    }
    decision
}

/// Design matrix, soft targets and per-sample weights built from labeled clips.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub weights: Vec<f64>,
    pub positives: usize,
    pub negatives: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weight applied to background samples: positives/negatives, capped at 1.
    pub fn background_weight(&self) -> f64 {
        if self.positives == 0 || self.negatives == 0 {
            1.0
        } else {
            (self.positives as f64 / self.negatives as f64).min(1.0)
        }
    }

    fn set_background_weight(&mut self, weight: f64) {
        for (w, target) in self.weights.iter_mut().zip(self.targets.rows()) {
            *w = if target[0] == 1.0 { weight } else { 1.0 };
        }
    }
}

fn frame_targets(clip: &Clip, shape: &ModelShape, radius: f64) -> Result<Vec<usize>> {
    let spots = match &clip.labels {
        ClipLabels::Full(spots) => spots,
        ClipLabels::Weak(_) => {
            return Err(Error::config(format!(
                "frame head needs full labels, clip {} only has weak labels",
                clip.id
            )))
        }
        ClipLabels::Unlabeled => {
            return Err(Error::config(format!("clip {} is unlabeled", clip.id)))
        }
    };
    let mut targets = Vec::with_capacity(clip.frame_count());
    for j in 0..clip.frame_count() {
        let t = frame_time(j, clip.frame_rate);
        let nearest = spots
            .iter()
            .map(|s| (s, (s.time - t).abs()))
            .filter(|(_, d)| *d <= radius + 1e-9)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let target = match nearest {
            Some((spot, _)) => {
                if spot.class_id >= shape.num_classes {
                    return Err(Error::config(format!(
                        "clip {}: class {} out of range",
                        clip.id, spot.class_id
                    )));
                }
                spot.class_id + 1
            }
            None => 0,
        };
        targets.push(target);
    }
    Ok(targets)
}

/// Builds training samples. Frame mode yields one sample per frame with a
/// one-hot target; clip mode yields one pooled sample per clip whose target
/// spreads mass evenly over the classes present (background when none).
pub fn build_samples(clips: &[&Clip], shape: &ModelShape, radius: f64) -> Result<SampleSet> {
    let outputs = shape.outputs();
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let (mut positives, mut negatives) = (0usize, 0usize);
    for clip in clips {
        if clip.dim() != shape.dim {
            return Err(Error::Dimension(format!(
                "clip {} has feature dim {}, expected {}",
                clip.id,
                clip.dim(),
                shape.dim
            )));
        }
        match shape.head_mode {
            HeadMode::Frame => {
                let x = context_features(clip, shape.context);
                rows.extend(x.iter());
                for class in frame_targets(clip, shape, radius)? {
                    let mut t = vec![0.0; outputs];
                    t[class] = 1.0;
                    targets.extend(t);
                    if class == 0 {
                        negatives += 1;
                    } else {
                        positives += 1;
                    }
                }
            }
            HeadMode::Clip => {
                if clip.label_kind() == LabelKind::Unlabeled {
                    return Err(Error::config(format!("clip {} is unlabeled", clip.id)));
                }
                rows.extend(pooled_features(clip, shape.context).iter());
                let classes = clip.labels.classes();
                let mut t = vec![0.0; outputs];
                if classes.is_empty() {
                    t[0] = 1.0;
                    negatives += 1;
                } else {
                    for &k in &classes {
                        if k >= shape.num_classes {
                            return Err(Error::config(format!(
                                "clip {}: class {k} out of range",
                                clip.id
                            )));
                        }
                        t[k + 1] = 1.0 / classes.len() as f64;
                    }
                    positives += 1;
                }
                targets.extend(t);
            }
        }
    }
    let n = positives + negatives;
    let inputs = Array2::from_shape_vec((n, shape.input_dim()), rows)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let targets =
        Array2::from_shape_vec((n, outputs), targets).map_err(|e| Error::Dimension(e.to_string()))?;
    let mut set = SampleSet {
        inputs,
        targets,
        weights: vec![1.0; n],
        positives,
        negatives,
    };
    let w = set.background_weight();
    set.set_background_weight(w);
    Ok(set)
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams) -> Self {
        let zeros = || Gradients {
            w1: Array2::zeros(params.w1.raw_dim()),
            b1: ndarray::Array1::zeros(params.b1.raw_dim()),
            w2: Array2::zeros(params.w2.raw_dim()),
            b2: ndarray::Array1::zeros(params.b2.raw_dim()),
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        ndarray::Zip::from(&mut params.w1)
            .and(&mut self.m.w1)
            .and(&mut self.v.w1)
            .and(&grads.w1)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut params.b1)
            .and(&mut self.m.b1)
            .and(&mut self.v.b1)
            .and(&grads.b1)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut params.w2)
            .and(&mut self.m.w2)
            .and(&mut self.v.w2)
            .and(&grads.w2)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        ndarray::Zip::from(&mut params.b2)
            .and(&mut self.m.b2)
            .and(&mut self.v.b2)
            .and(&grads.b2)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
}

fn run_epoch(
    params: &mut ModelParams,
    adam: &mut Adam,
    samples: &SampleSet,
    order: &[usize],
    batch_size: usize,
    lr: f64,
    epoch: usize,
) -> Result<f64> {
    let mut weighted_loss = 0.0;
    let mut weight_seen = 0.0;
    for batch in order.chunks(batch_size) {
        let x = samples.inputs.select(Axis(0), batch);
        let y = samples.targets.select(Axis(0), batch);
        let w: Vec<f64> = batch.iter().map(|&i| samples.weights[i]).collect();
        let (loss, grads) = params.loss_and_grad(x.view(), y.view(), &w);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        adam.step(params, &grads, lr);
        if !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        let batch_weight: f64 = w.iter().sum();
        weighted_loss += loss * batch_weight;
        weight_seen += batch_weight;
    }
    Ok(weighted_loss / weight_seen)
}

/// Trains a spotting head on labeled clips.
///
/// Clips are sorted by `(video_id, clip_index)` before sample construction,
/// so the result depends only on the set contents, the config and its seed.
/// With [`Paradigm::Scratch`] the model is freshly initialized and trained
/// under the plateau scheduler until the LR floor or `max_epochs`. With
/// [`Paradigm::Continual`] an absent `init` bootstraps from scratch for
/// `bootstrap_epochs`; otherwise `init` is fine-tuned for `finetune_epochs`.
/// Both continual phases use the fixed `finetune_lr`.
pub fn train(
    labeled: &[Clip],
    valid: &[Clip],
    shape: ModelShape,
    config: &TrainConfig,
    init: Option<&ModelParams>,
) -> Result<(ModelParams, TrainingLog)> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Empty("labeled training set"));
    }
    if let Some(init) = init {
        if init.shape != shape {
            return Err(Error::Dimension(format!(
                "initial model shape {:?} differs from {:?}",
                init.shape, shape
            )));
        }
    }
    let frames_per_clip = labeled[0].frame_count();
    if labeled.iter().chain(valid).any(|c| c.frame_count() != frames_per_clip) {
        return Err(Error::Dimension("clips have differing lengths".into()));
    }

    let mut sorted: Vec<&Clip> = labeled.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let samples = build_samples(&sorted, &shape, config.positive_radius)?;
    let mut valid_sorted: Vec<&Clip> = valid.iter().collect();
    valid_sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut valid_samples = build_samples(&valid_sorted, &shape, config.positive_radius)?;
    valid_samples.set_background_weight(samples.background_weight());

    let (mut params, epochs, fixed_lr) = match (config.paradigm, init) {
        (Paradigm::Scratch, _) => (ModelParams::init(shape, config.seed), config.max_epochs, None),
        (Paradigm::Continual, None) => (
            ModelParams::init(shape, config.seed),
            config.bootstrap_epochs,
            Some(config.finetune_lr),
        ),
        (Paradigm::Continual, Some(init)) => {
            (init.clone(), config.finetune_epochs, Some(config.finetune_lr))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&params);
    let mut scheduler = PlateauScheduler::new(config);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=epochs {
        let lr = fixed_lr.unwrap_or_else(|| scheduler.lr());
        order.shuffle(&mut rng);
        let train_loss = run_epoch(
            &mut params,
            &mut adam,
            &samples,
            &order,
            config.batch_size,
            lr,
            epoch,
        )?;
        let valid_loss = if valid_samples.is_empty() {
            train_loss
        } else {
            params.loss(
                valid_samples.inputs.view(),
                valid_samples.targets.view(),
                &valid_samples.weights,
            )
        };
        if !valid_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: valid_loss,
            });
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            lr,
        });
        if fixed_lr.is_none() && scheduler.observe(valid_loss).stop {
            break;
        }
    }
    Ok((params, log))
}
