use serde::{Deserialize, Serialize};

use crate::dataset::{spots_in_clip, Clip, ClipLabels, Dataset, LabelKind};
use crate::error::{Error, Result};
use crate::metrics::LearningCurve;
use crate::model::ModelParams;
use crate::spotting::NmsConfig;

/// Where the AL loop currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Training,
    Selecting,
    AwaitingLabels,
    Finished,
    Failed,
}

/// A batch handed to the oracle.
pub struct AnnotationRequest<'a> {
    pub step: usize,
    pub clips: &'a [Clip],
    pub label_kind: LabelKind,
    /// Model trained at the previous step; absent for the seed batch.
    pub model: Option<&'a ModelParams>,
    pub nms: &'a NmsConfig,
}

/// Label source queried at every annotate step.
///
/// Implementations return the batch clips, in request order, with labels of
/// the requested kind attached. The status and curve hooks let interactive
/// oracles mirror the loop's progress.
pub trait Oracle {
    fn annotate(&mut self, request: AnnotationRequest<'_>) -> Result<Vec<Clip>>;

    fn status_changed(&mut self, _status: LoopStatus) {}

    fn curve_updated(&mut self, _curve: &LearningCurve) {}
}

/// Labels of the requested kind for one clip, read from dataset ground truth.
pub fn ground_truth_labels(dataset: &Dataset, clip: &Clip, kind: LabelKind) -> Result<ClipLabels> {
    let video = dataset
        .video(&clip.id.video_id)
        .ok_or_else(|| Error::NotFound(format!("clip {} is not in the dataset", clip.id)))?;
    let per_video = dataset.frames_per_clip();
    if (clip.id.clip_index + 1) * per_video > video.frame_count() {
        return Err(Error::NotFound(format!("clip {} is not in the dataset", clip.id)));
    }
    let spots = spots_in_clip(video.spots(), clip);
    Ok(match kind {
        LabelKind::Full => ClipLabels::Full(spots),
        LabelKind::Weak => ClipLabels::Weak(spots.iter().map(|s| s.class_id).collect()),
        LabelKind::Unlabeled => ClipLabels::Unlabeled,
    })
}

/// Annotates clips from ground truth.
pub fn simulated_oracle_annotate(
    clips: &[Clip],
    dataset: &Dataset,
    kind: LabelKind,
) -> Result<Vec<Clip>> {
    clips
        .iter()
        .map(|clip| {
            let labels = ground_truth_labels(dataset, clip, kind)?;
            Ok(clip.clone().with_labels(labels))
        })
        .collect()
}

/// Oracle backed by the dataset's own ground truth.
pub struct SimulatedOracle<'a> {
    dataset: &'a Dataset,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self { dataset }
    }
}

impl Oracle for SimulatedOracle<'_> {
    fn annotate(&mut self, request: AnnotationRequest<'_>) -> Result<Vec<Clip>> {
        simulated_oracle_annotate(request.clips, self.dataset, request.label_kind)
    }
}
