//! Active-learning scores and batch selection.
//!
//! The uncertainty measure maps a confidence `p` to `1 − 2·|p − 0.5|`, peaking
//! at maximal confusion. The entropy measure is `−Σ pᵢ ln pᵢ` over the class
//! distribution. Frame-level scores are pooled per clip by mean or max.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Clip, ClipRef};
use crate::error::{Error, Result};
use crate::model::{HeadMode, ModelParams};

const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Random sampling.
    Rs,
    /// Uncertainty measure.
    Um,
    /// Entropy measure.
    Em,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

/// Which probability the uncertainty measure reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UmTarget {
    /// Largest probability including background.
    Top1,
    /// Largest non-background probability.
    ActionMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub aggregation: Aggregation,
    #[serde(default = "default_um_target")]
    pub um_target: UmTarget,
    /// Entropy over all `K+1` outputs, or over the renormalized action classes.
    #[serde(default = "default_true")]
    pub include_background: bool,
}

fn default_um_target() -> UmTarget {
    UmTarget::Top1
}

fn default_true() -> bool {
    true
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, aggregation: Aggregation) -> Self {
        Self {
            strategy,
            aggregation,
            um_target: UmTarget::Top1,
            include_background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveScore {
    pub clip: ClipRef,
    pub score: f64,
}

pub fn um_score(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Probability(format!("{p} is not in [0, 1]")));
    }
    Ok(1.0 - 2.0 * (p - 0.5).abs())
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn em_score(p: &[f64]) -> Result<f64> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Probability("entries must be non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Probability(format!("distribution sums to {total}")));
    }
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum())
}

pub fn aggregate_frame_scores(scores: &[f64], mode: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("frame scores"));
    }
    Ok(match mode {
        Aggregation::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Informativeness of one probability vector (background at index 0).
pub fn distribution_score(probs: &[f64], config: &SelectionConfig) -> Result<f64> {
    match config.strategy {
        Strategy::Rs => Err(Error::config("random sampling does not score clips")),
        Strategy::Um => {
            let p = match config.um_target {
                UmTarget::Top1 => probs.iter().copied().fold(0.0, f64::max),
                UmTarget::ActionMax => probs[1..].iter().copied().fold(0.0, f64::max),
            };
            um_score(p.min(1.0))
        }
        Strategy::Em if config.include_background => em_score(probs),
        Strategy::Em => {
            let actions = &probs[1..];
            let mass: f64 = actions.iter().sum();
            if mass <= 0.0 {
                return Ok(0.0);
            }
            let renormalized: Vec<f64> = actions.iter().map(|p| p / mass).collect();
            em_score(&renormalized)
        }
    }
}

fn score_clip(model: &ModelParams, clip: &Clip, config: &SelectionConfig) -> Result<f64> {
    match model.shape.head_mode {
        HeadMode::Frame => {
            let probs = model.predict_frames(clip)?;
            let per_frame = (0..probs.frames())
                .map(|j| distribution_score(probs.row(j), config))
                .collect::<Result<Vec<_>>>()?;
            aggregate_frame_scores(&per_frame, config.aggregation)
        }
        HeadMode::Clip => distribution_score(model.predict_clip(clip)?.as_slice(), config),
    }
}

/// Scores every clip of the pool with the current model. Output follows pool order.
pub fn score_pool(
    model: &ModelParams,
    pool: &[Clip],
    config: &SelectionConfig,
) -> Result<Vec<ActiveScore>> {
    if config.strategy == Strategy::Rs {
        return Err(Error::config("random sampling does not score clips"));
    }
    if pool.is_empty() {
        return Err(Error::Empty("unlabeled pool"));
    }
    pool.par_iter()
        .map(|clip| {
            Ok(ActiveScore {
                clip: clip.id.clone(),
                score: score_clip(model, clip, config)?,
            })
        })
        .collect()
}

/// The `budget` highest scores; ties go to the smaller `(video_id, clip_index)`.
pub fn select_top_k(scores: &[ActiveScore], budget: usize) -> Vec<ClipRef> {
    let mut ranked: Vec<&ActiveScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.clip.cmp(&b.clip)));
    ranked
        .into_iter()
        .take(budget)
        .map(|s| s.clip.clone())
        .collect()
}

/// Uniform sample without replacement over the pool sorted by clip id.
pub fn select_random(pool: &[ClipRef], budget: usize, seed: u64) -> Vec<ClipRef> {
    let mut sorted: Vec<&ClipRef> = pool.iter().collect();
    sorted.sort();
    if budget >= sorted.len() {
        return sorted.into_iter().cloned().collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, sorted.len(), budget)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect()
}

/// Per-step audit CSV: `step,video_id,clip_index,score,selected`.
pub fn scores_csv(step: usize, scores: &[ActiveScore], selected: &[ClipRef]) -> String {
    let chosen: std::collections::BTreeSet<&ClipRef> = selected.iter().collect();
    let mut out = String::from("step,video_id,clip_index,score,selected\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{step},{},{},{},{}",
            s.clip.video_id,
            s.clip.clip_index,
            s.score,
            u8::from(chosen.contains(&s.clip))
        );
    }
    out
}
