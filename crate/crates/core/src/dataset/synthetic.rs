//! Synthetic stand-in for encoder features.
//!
//! Each frame is Gaussian noise. Around every ground-truth spot the class
//! signature is added over `footprint` frames on either side with a
//! triangular (linearly decaying) weight. Event counts are Poisson per class
//! and positions are uniform subject to a minimum gap of one footprint.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{frame_time, Dataset, DatasetSplit, Spot, Video};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.625,
            valid: 0.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub clips_per_video: usize,
    pub frames_per_clip: usize,
    pub feature_dim: usize,
    pub frame_rate: f64,
    pub num_classes: usize,
    /// Events per minute, one entry per class.
    pub event_rates: Vec<f64>,
    /// Explicit `num_classes × feature_dim` signatures; drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signatures: Option<Vec<Vec<f32>>>,
    /// Norm of the drawn signatures.
    pub signal_amplitude: f64,
    /// Half-width of the signature's triangular footprint, in frames.
    pub footprint: usize,
    pub noise_std: f64,
    #[serde(default)]
    pub split: SplitRatios,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// Desk scale: 40 videos of 60 clips × 30 frames at 2 fps, D = 16, K = 4,
    /// every class at 2 events per minute.
    fn default() -> Self {
        Self {
            num_videos: 40,
            clips_per_video: 60,
            frames_per_clip: 30,
            feature_dim: 16,
            frame_rate: 2.0,
            num_classes: 4,
            event_rates: vec![2.0; 4],
            signatures: None,
            signal_amplitude: 3.0,
            footprint: 3,
            noise_std: 1.0,
            split: SplitRatios::default(),
            class_names: None,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// The frozen strategy-comparison benchmark.
    ///
    /// Same shape as the default, but one frequent class and three rare ones
    /// (6, 0.3, 0.15 and 0.08 events per minute) under stronger noise. A 1%
    /// seed batch then rarely contains the rare classes, so the curve depends
    /// on which clips get labeled.
    pub fn benchmark() -> Self {
        Self {
            event_rates: vec![6.0, 0.3, 0.15, 0.08],
            noise_std: 1.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_videos", self.num_videos),
            ("clips_per_video", self.clips_per_video),
            ("frames_per_clip", self.frames_per_clip),
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
            ("footprint", self.footprint),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::config("frame_rate must be positive"));
        }
        if self.event_rates.len() != self.num_classes {
            return Err(Error::config(format!(
                "expected {} event rates, got {}",
                self.num_classes,
                self.event_rates.len()
            )));
        }
        if self.event_rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::config("event rates must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        if !(self.signal_amplitude.is_finite() && self.signal_amplitude > 0.0) {
            return Err(Error::config("signal_amplitude must be positive"));
        }
        if let Some(sigs) = &self.signatures {
            if sigs.len() != self.num_classes || sigs.iter().any(|s| s.len() != self.feature_dim) {
                return Err(Error::Dimension(format!(
                    "signatures must be {} × {}",
                    self.num_classes, self.feature_dim
                )));
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.num_classes {
                return Err(Error::config("class_names length must equal num_classes"));
            }
        }
        let SplitRatios { train, valid } = self.split;
        if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
            return Err(Error::config(
                "split ratios must be positive and leave room for a test split",
            ));
        }
        let (n_train, n_valid, n_test) = self.split_counts();
        if n_train == 0 || n_valid == 0 || n_test == 0 {
            return Err(Error::config("every split needs at least one video"));
        }
        Ok(())
    }

    pub fn frames_per_video(&self) -> usize {
        self.clips_per_video * self.frames_per_clip
    }

    pub fn video_duration(&self) -> f64 {
        self.frames_per_video() as f64 / self.frame_rate
    }

    pub fn clip_duration(&self) -> f64 {
        self.frames_per_clip as f64 / self.frame_rate
    }

    pub fn class_name(&self, class_id: usize) -> String {
        self.class_names
            .as_ref()
            .and_then(|n| n.get(class_id).cloned())
            .unwrap_or_else(|| format!("class_{class_id}"))
    }

    fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.num_videos;
        // Small datasets still get one video per split when they have three.
        let n_train = ((self.split.train * n as f64).round() as usize).clamp(1, n.saturating_sub(2).max(1));
        let n_valid = ((self.split.valid * n as f64).round() as usize)
            .clamp(1, n.saturating_sub(n_train + 1).max(1))
            .min(n - n_train);
        (n_train, n_valid, n - n_train - n_valid)
    }
}

/// Signatures with unit norm scaled to `amplitude`, orthogonalized by
/// Gram-Schmidt while `K ≤ D`.
fn draw_signatures(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = config.feature_dim;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(config.num_classes);
    for _ in 0..config.num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if basis.len() < dim {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * config.signal_amplitude).collect())
        .collect()
}

/// Event frames and classes for one video: Poisson counts per class, uniform
/// positions with consecutive events at least `footprint` frames apart.
fn place_events(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let frames = config.frames_per_video();
    let minutes = config.video_duration() / 60.0;
    let mut classes = Vec::new();
    for (k, rate) in config.event_rates.iter().enumerate() {
        let poisson = Poisson::new(rate * minutes).expect("validated positive rate");
        let count = poisson.sample(rng) as usize;
        classes.extend(std::iter::repeat_n(k, count));
    }
    classes.shuffle(rng);

    let gap = config.footprint;
    let max_fit = (frames - 1) / gap + 1;
    classes.truncate(max_fit);
    let n = classes.len();
    if n == 0 {
        return Vec::new();
    }
    // Sorted draws in the compressed range, then re-expanded by i·gap.
    let slack = frames - 1 - (n - 1) * gap;
    let mut offsets: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    offsets
        .into_iter()
        .enumerate()
        .map(|(i, off)| off + i * gap)
        .zip(classes)
        .collect()
}

fn generate_video(
    config: &SyntheticConfig,
    signatures: &[Vec<f64>],
    index: usize,
) -> Result<Video> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);

    let dim = config.feature_dim;
    let frames = config.frames_per_video();
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut data: Vec<f64> = (0..frames * dim).map(|_| noise.sample(&mut rng)).collect();

    let events = place_events(config, &mut rng);
    let reach = config.footprint as isize;
    for &(frame, class_id) in &events {
        for d in -(reach - 1)..reach {
            let f = frame as isize + d;
            if f < 0 || f >= frames as isize {
                continue;
            }
            let weight = 1.0 - d.unsigned_abs() as f64 / config.footprint as f64;
            let row = &mut data[f as usize * dim..(f as usize + 1) * dim];
            row.iter_mut()
                .zip(&signatures[class_id])
                .for_each(|(x, s)| *x += weight * s);
        }
    }

    let spots = events
        .iter()
        .map(|&(frame, class_id)| Spot::new(class_id, frame_time(frame, config.frame_rate)))
        .collect();
    Video::new(
        format!("video_{index:03}"),
        config.frame_rate,
        dim,
        data.into_iter().map(|x| x as f32).collect(),
        spots,
    )
}

/// Builds a dataset deterministically from `config` (seed included).
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let signatures = match &config.signatures {
        Some(sigs) => sigs
            .iter()
            .map(|s| s.iter().map(|&x| x as f64).collect())
            .collect(),
        None => draw_signatures(config, &mut rng),
    };

    let videos = (0..config.num_videos)
        .map(|i| generate_video(config, &signatures, i))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..config.num_videos).collect();
    order.shuffle(&mut rng);
    let (n_train, n_valid, _) = config.split_counts();
    let ids = |range: &[usize]| {
        let mut ids: Vec<String> = range
            .iter()
            .map(|&i| videos[i].video_id().to_string())
            .collect();
        ids.sort();
        ids
    };
    let split = DatasetSplit {
        train: ids(&order[..n_train]),
        valid: ids(&order[n_train..n_train + n_valid]),
        test: ids(&order[n_train + n_valid..]),
    };

    Ok(Dataset {
        config: config.clone(),
        videos,
        split,
    })
}
