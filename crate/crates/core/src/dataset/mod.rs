//! Untrimmed feature "videos", their fixed-length clips, and ground-truth spots.
//!
//! A [`Video`] is a row-major matrix of per-frame feature vectors plus the
//! time-sorted list of action [`Spot`]s it contains. Videos are cut into
//! non-overlapping [`Clip`]s of `J` frames; clip `n` covers the half-open
//! interval `[n·J/fps, (n+1)·J/fps)`, so every spot lands in exactly one clip.

pub(crate) mod io;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_dataset, write_dataset, SCHEMA_VERSION};
pub use synthetic::{generate_synthetic, SplitRatios, SyntheticConfig};

/// One action occurrence: a class id and a timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    #[serde(rename = "k")]
    pub class_id: usize,
    #[serde(rename = "t")]
    pub time: f64,
}

impl Spot {
    pub fn new(class_id: usize, time: f64) -> Self {
        Self { class_id, time }
    }
}

/// Timestamp assigned to frame `index`: the center of its sampling interval.
pub fn frame_time(index: usize, frame_rate: f64) -> f64 {
    (index as f64 + 0.5) / frame_rate
}

/// Start time of clip `clip_index`. Clip ends are computed as the next clip's
/// start so adjacent intervals share bit-identical boundaries.
pub fn clip_start(clip_index: usize, frames_per_clip: usize, frame_rate: f64) -> f64 {
    (clip_index * frames_per_clip) as f64 / frame_rate
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    video_id: String,
    frame_rate: f64,
    dim: usize,
    frames: Vec<f32>,
    spots: Vec<Spot>,
}

impl Video {
    /// Builds a video, checking that `frames` is a whole number of `dim`-wide
    /// rows and that every spot lies inside the video. Spots are sorted by time.
    pub fn new(
        video_id: impl Into<String>,
        frame_rate: f64,
        dim: usize,
        frames: Vec<f32>,
        mut spots: Vec<Spot>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::config(format!("{video_id}: frame rate must be > 0")));
        }
        if dim == 0 || frames.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{video_id}: {} values is not a multiple of dimension {dim}",
                frames.len()
            )));
        }
        let duration = (frames.len() / dim) as f64 / frame_rate;
        for spot in &spots {
            if !(spot.time >= 0.0 && spot.time < duration) {
                return Err(Error::config(format!(
                    "{video_id}: spot at {}s outside [0, {duration})",
                    spot.time
                )));
            }
        }
        spots.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            video_id,
            frame_rate,
            dim,
            frames,
            spots,
        })
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.frame_rate
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * self.dim..(index + 1) * self.dim]
    }

    /// Row-major `frame_count × dim` feature values.
    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn spots(&self) -> &[Spot] {
        &self.spots
    }
}

/// Identity of a clip. Orders lexically by `(video_id, clip_index)`, which is
/// the tie-break used everywhere selection needs a deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClipRef {
    pub video_id: String,
    pub clip_index: usize,
}

impl ClipRef {
    pub fn new(video_id: impl Into<String>, clip_index: usize) -> Self {
        Self {
            video_id: video_id.into(),
            clip_index,
        }
    }
}

impl fmt::Display for ClipRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.video_id, self.clip_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Unlabeled,
    Weak,
    Full,
}

/// Annotation attached to a clip. Full labels carry clip-relative times.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ClipLabels {
    #[default]
    Unlabeled,
    Weak(BTreeSet<usize>),
    Full(Vec<Spot>),
}

impl ClipLabels {
    pub fn kind(&self) -> LabelKind {
        match self {
            ClipLabels::Unlabeled => LabelKind::Unlabeled,
            ClipLabels::Weak(_) => LabelKind::Weak,
            ClipLabels::Full(_) => LabelKind::Full,
        }
    }

    /// Classes present in the clip, whatever the label granularity.
    pub fn classes(&self) -> BTreeSet<usize> {
        match self {
            ClipLabels::Unlabeled => BTreeSet::new(),
            ClipLabels::Weak(set) => set.clone(),
            ClipLabels::Full(spots) => spots.iter().map(|s| s.class_id).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: ClipRef,
    pub start_time: f64,
    pub frame_rate: f64,
    dim: usize,
    frames: Vec<f32>,
    pub labels: ClipLabels,
}

impl Clip {
    pub fn new(
        id: ClipRef,
        start_time: f64,
        frame_rate: f64,
        dim: usize,
        frames: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 || frames.is_empty() || frames.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "clip {id}: {} values do not form rows of width {dim}",
                frames.len()
            )));
        }
        Ok(Self {
            id,
            start_time,
            frame_rate,
            dim,
            frames,
            labels: ClipLabels::Unlabeled,
        })
    }

    pub fn with_labels(mut self, labels: ClipLabels) -> Self {
        self.labels = labels;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.frame_rate
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * self.dim..(index + 1) * self.dim]
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn label_kind(&self) -> LabelKind {
        self.labels.kind()
    }
}

/// Cuts a video into ordered, non-overlapping, unlabeled clips of `frames_per_clip` frames.
pub fn segment_video(video: &Video, frames_per_clip: usize) -> Result<Vec<Clip>> {
    if frames_per_clip == 0 {
        return Err(Error::Segmentation("frames per clip must be >= 1".into()));
    }
    let frame_count = video.frame_count();
    if frame_count % frames_per_clip != 0 {
        return Err(Error::Segmentation(format!(
            "{}: {frame_count} frames not divisible by clip length {frames_per_clip}",
            video.video_id()
        )));
    }
    let width = frames_per_clip * video.dim();
    video
        .frames()
        .chunks(width)
        .enumerate()
        .map(|(n, rows)| {
            Clip::new(
                ClipRef::new(video.video_id(), n),
                clip_start(n, frames_per_clip, video.frame_rate()),
                video.frame_rate(),
                video.dim(),
                rows.to_vec(),
            )
        })
        .collect()
}

/// Spots falling in the clip's half-open interval, shifted to clip-relative time.
pub fn spots_in_clip(video_spots: &[Spot], clip: &Clip) -> Vec<Spot> {
    let frames_per_clip = clip.frame_count();
    let start = clip_start(clip.id.clip_index, frames_per_clip, clip.frame_rate);
    let end = clip_start(clip.id.clip_index + 1, frames_per_clip, clip.frame_rate);
    video_spots
        .iter()
        .filter(|s| s.time >= start && s.time < end)
        .map(|s| Spot::new(s.class_id, s.time - start))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

/// A generated (or loaded) dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SyntheticConfig,
    pub videos: Vec<Video>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn video(&self, video_id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.video_id() == video_id)
    }

    pub fn frames_per_clip(&self) -> usize {
        self.config.frames_per_clip
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn split_ids(&self, which: SplitName) -> &[String] {
        match which {
            SplitName::Train => &self.split.train,
            SplitName::Valid => &self.split.valid,
            SplitName::Test => &self.split.test,
        }
    }

    /// Videos of a split, in split order.
    pub fn split_videos(&self, which: SplitName) -> Result<Vec<&Video>> {
        self.split_ids(which)
            .iter()
            .map(|id| {
                self.video(id)
                    .ok_or_else(|| Error::NotFound(format!("video {id}")))
            })
            .collect()
    }

    /// All clips of a split, unlabeled, sorted by `(video_id, clip_index)`.
    pub fn split_clips(&self, which: SplitName) -> Result<Vec<Clip>> {
        let mut clips = Vec::new();
        for video in self.split_videos(which)? {
            clips.extend(segment_video(video, self.frames_per_clip())?);
        }
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(clips)
    }

    /// Clips of a split carrying their full ground-truth labels.
    pub fn labeled_split_clips(&self, which: SplitName) -> Result<Vec<Clip>> {
        let mut clips = self.split_clips(which)?;
        for clip in &mut clips {
            let video = self
                .video(&clip.id.video_id)
                .ok_or_else(|| Error::NotFound(format!("video {}", clip.id.video_id)))?;
            clip.labels = ClipLabels::Full(spots_in_clip(video.spots(), clip));
        }
        Ok(clips)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_video(frames: usize, dim: usize, fps: f64, spots: Vec<Spot>) -> Video {
        let data = (0..frames * dim).map(|i| i as f32).collect();
        Video::new("v", fps, dim, data, spots).unwrap()
    }

    #[test]
    fn segment_tiles_video() {
        let video = ramp_video(300, 2, 2.0, vec![]);
        let clips = segment_video(&video, 30).unwrap();
        assert_eq!(clips.len(), 10);
        for (n, clip) in clips.iter().enumerate() {
            assert_eq!(clip.id.clip_index, n);
            assert_eq!(clip.frame_count(), 30);
            assert_eq!(clip.label_kind(), LabelKind::Unlabeled);
            assert_eq!(clip.frame(0), video.frame(n * 30));
        }
        let rejoined: Vec<f32> = clips.iter().flat_map(|c| c.frames().to_vec()).collect();
        assert_eq!(rejoined, video.frames());
    }

    #[test]
    fn whole_video_is_one_clip() {
        let video = ramp_video(300, 2, 2.0, vec![]);
        let clips = segment_video(&video, 300).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].start_time, 0.0);
    }

    #[test]
    fn clip_start_times() {
        let video = ramp_video(300, 1, 2.0, vec![]);
        let clips = segment_video(&video, 30).unwrap();
        assert_eq!(clips[3].start_time, 45.0);
    }

    #[test]
    fn segmentation_rejects_ragged_tail() {
        let video = ramp_video(301, 1, 2.0, vec![]);
        assert!(matches!(
            segment_video(&video, 30),
            Err(Error::Segmentation(_))
        ));
        assert!(matches!(
            segment_video(&video, 0),
            Err(Error::Segmentation(_))
        ));
    }

    #[test]
    fn spots_shift_into_clip_frame() {
        let spots = vec![Spot::new(1, 45.2), Spot::new(2, 60.0)];
        let video = ramp_video(300, 1, 2.0, spots.clone());
        let clips = segment_video(&video, 30).unwrap();
        let inside = spots_in_clip(&spots, &clips[3]);
        assert_eq!(inside.len(), 1);
        assert_eq!(inside[0].class_id, 1);
        assert!((inside[0].time - 0.2).abs() < 1e-12);
        // 60.0 belongs to the next clip
        let next = spots_in_clip(&spots, &clips[4]);
        assert_eq!(next, vec![Spot::new(2, 0.0)]);
        assert!(spots_in_clip(&[], &clips[3]).is_empty());
    }

    #[test]
    fn spots_are_conserved_across_clips() {
        let spots: Vec<Spot> = (0..37).map(|i| Spot::new(i % 3, i as f64 * 3.7)).collect();
        let video = ramp_video(300, 1, 2.0, spots);
        let clips = segment_video(&video, 15).unwrap();
        let total: usize = clips
            .iter()
            .map(|c| spots_in_clip(video.spots(), c).len())
            .sum();
        assert_eq!(total, video.spots().len());
    }

    #[test]
    fn video_rejects_out_of_range_spot() {
        let data = vec![0.0; 20];
        assert!(Video::new("v", 2.0, 2, data.clone(), vec![Spot::new(0, 5.0)]).is_err());
        assert!(Video::new("v", 2.0, 3, data, vec![]).is_err());
    }
}
