//! One AL session driven by human labels.
//!
//! The loop runs on its own thread with a [`RemoteOracle`]; at every annotate
//! step the oracle publishes the batch as tasks and blocks until every task
//! has been submitted through the HTTP layer. All mutations go through the
//! session mutex. Readers load an immutable [`SessionView`] snapshot that is
//! republished after each mutation.
//!
//! State is written to `session.json` after every transition. A restarted
//! session replays the loop: batches whose labels are already on disk are
//! answered immediately, and the batch that was pending resumes with its
//! earlier submissions intact. Training is deterministic, so the replay
//! reaches the same selections.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};

use alspot::dataset::{Clip, ClipLabels, ClipRef, Dataset, LabelKind, Spot};
use alspot::harness::{run_active_learning, ALConfig, AnnotationRequest, LoopStatus, Oracle};
use alspot::metrics::LearningCurve;
use alspot::model::ModelParams;
use alspot::spotting::{infer_clip, NmsConfig, PredictedSpot};

use crate::error::ServiceError;

const STATE_SCHEMA: u32 = 1;
const STATE_FILE: &str = "session.json";
/// Suggestions below this confidence are not shown to the annotator.
const SUGGESTION_MIN_CONFIDENCE: f64 = 0.5;
const PREVIEW_BINS: usize = 8;

/// A spot as sent over the wire, time relative to the clip start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSpot {
    pub class_id: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: usize,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Submitted,
}

/// One clip awaiting a human label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub video_id: String,
    pub clip_index: usize,
    pub start_time: f64,
    pub duration: f64,
    pub label_kind: LabelKind,
    pub classes: Vec<ClassEntry>,
    /// Per-frame energy in 8 feature bands, `J × 8`.
    pub feature_preview: Vec<[f32; PREVIEW_BINS]>,
    pub suggestions: Vec<PredictedSpot>,
    pub status: TaskStatus,
}

/// Read-only snapshot served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub status: LoopStatus,
    pub step: usize,
    pub labeled_clips: usize,
    /// Whether the current step's batch has been published.
    pub batch_open: bool,
    pub tasks: Vec<AnnotationTask>,
    pub curve: LearningCurve,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SessionView {
    pub fn pending(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.tasks.iter().filter(|t| t.status == TaskStatus::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabeledRecord {
    video_id: String,
    clip_index: usize,
    spots: Vec<WireSpot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PendingRecord {
    task_id: String,
    video_id: String,
    clip_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spots: Option<Vec<WireSpot>>,
}

/// On-disk session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PersistedState {
    schema: u32,
    id: String,
    status: LoopStatus,
    step: usize,
    /// Completed batches in step order.
    history: Vec<Vec<LabeledRecord>>,
    pending: Vec<PendingRecord>,
    curve: LearningCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

struct Inner {
    status: LoopStatus,
    step: usize,
    batch_open: bool,
    tasks: Vec<AnnotationTask>,
    clips: Vec<Clip>,
    submitted: Vec<Option<Vec<WireSpot>>>,
    history: Vec<Vec<LabeledRecord>>,
    /// Labels recovered from disk for the batch that was pending at shutdown.
    recovered_pending: Vec<PendingRecord>,
    curve: LearningCurve,
    error: Option<String>,
}

/// Shared handle to a running session.
pub struct Session {
    id: String,
    config: ALConfig,
    dataset: Arc<Dataset>,
    state_dir: PathBuf,
    inner: Mutex<Inner>,
    labels_ready: Condvar,
    view: ArcSwap<SessionView>,
}

/// Outcome of a successful submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub remaining: usize,
}

impl Session {
    /// Creates a session, restoring persisted state from `state_dir` if present.
    pub fn open(
        id: impl Into<String>,
        config: ALConfig,
        dataset: Arc<Dataset>,
        state_dir: impl Into<PathBuf>,
    ) -> Result<Arc<Self>, ServiceError> {
        let id = id.into();
        let state_dir = state_dir.into();
        fs::create_dir_all(&state_dir)?;
        let persisted = load_state(&state_dir.join(STATE_FILE))?;
        let (history, recovered_pending) = match persisted {
            Some(state) if state.id == id => (state.history, state.pending),
            Some(state) => {
                return Err(ServiceError::Internal(format!(
                    "state directory belongs to session {:?}",
                    state.id
                )))
            }
            None => (Vec::new(), Vec::new()),
        };
        let curve = LearningCurve::new(config.regime);
        let inner = Inner {
            status: LoopStatus::Selecting,
            step: 0,
            batch_open: false,
            tasks: Vec::new(),
            clips: Vec::new(),
            submitted: Vec::new(),
            history,
            recovered_pending,
            curve,
            error: None,
        };
        let session = Arc::new(Self {
            view: ArcSwap::from_pointee(snapshot(&id, &inner)),
            id,
            config,
            dataset,
            state_dir,
            inner: Mutex::new(inner),
            labels_ready: Condvar::new(),
        });
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &ALConfig {
        &self.config
    }

    pub fn view(&self) -> Arc<SessionView> {
        self.view.load_full()
    }

    /// Runs the AL loop on a new thread.
    pub fn spawn(self: &Arc<Self>) -> JoinHandle<()> {
        let session = Arc::clone(self);
        std::thread::spawn(move || session.run())
    }

    /// Runs the AL loop on the calling thread until it finishes or fails.
    pub fn run(self: &Arc<Self>) {
        let mut oracle = RemoteOracle {
            session: Arc::clone(self),
        };
        let out_dir = self.state_dir.join("run");
        let result = run_active_learning(
            &self.config,
            &self.dataset,
            &mut oracle,
            Some(out_dir.as_path()),
        );
        let mut inner = self.lock();
        match result {
            Ok(outcome) => {
                if let Some(reason) = outcome.failure {
                    inner.status = LoopStatus::Failed;
                    inner.error = Some(reason);
                } else {
                    inner.status = LoopStatus::Finished;
                }
            }
            Err(err) => {
                tracing::error!(session = %self.id, %err, "AL loop aborted");
                inner.status = LoopStatus::Failed;
                inner.error = Some(err.to_string());
            }
        }
        inner.batch_open = false;
        if let Err(err) = self.persist(&inner) {
            tracing::warn!(%err, "could not persist session state");
        }
        self.publish(&inner);
    }

    /// Blocks until the session reaches a terminal state or the timeout passes.
    pub fn wait_until_done(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if matches!(self.view().status, LoopStatus::Finished | LoopStatus::Failed) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// Pending tasks of the current batch. Conflict before the first batch
    /// and after the loop has ended.
    pub fn pending_tasks(&self) -> Result<(LoopStatus, Vec<AnnotationTask>), ServiceError> {
        let view = self.view();
        if matches!(view.status, LoopStatus::Finished | LoopStatus::Failed) {
            return Err(ServiceError::Conflict(format!(
                "session is {}",
                status_name(view.status)
            )));
        }
        if view.tasks.is_empty() {
            return Err(ServiceError::Conflict(
                "session has not published a batch yet".into(),
            ));
        }
        Ok((view.status, view.pending().cloned().collect()))
    }

    /// Records labels for one task. The first submission wins.
    pub fn submit(&self, task_id: &str, spots: Vec<WireSpot>) -> Result<SubmitAck, ServiceError> {
        let mut inner = self.lock();
        let index = inner
            .tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("task {task_id}")))?;
        if !inner.batch_open || inner.status != LoopStatus::AwaitingLabels {
            return Err(ServiceError::Conflict(format!(
                "session is {}, not awaiting labels",
                status_name(inner.status)
            )));
        }
        if inner.submitted[index].is_some() {
            return Err(ServiceError::Conflict(format!("task {task_id} already submitted")));
        }
        validate_spots(&spots, inner.tasks[index].duration, self.dataset.num_classes())?;

        inner.submitted[index] = Some(spots);
        inner.tasks[index].status = TaskStatus::Submitted;
        let remaining = inner.submitted.iter().filter(|s| s.is_none()).count();
        if remaining == 0 {
            inner.status = LoopStatus::Training;
            inner.batch_open = false;
        }
        self.persist(&inner)?;
        self.publish(&inner);
        if remaining == 0 {
            self.labels_ready.notify_all();
        }
        Ok(SubmitAck { remaining })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, inner: &Inner) {
        self.view.store(Arc::new(snapshot(&self.id, inner)));
    }

    fn persist(&self, inner: &Inner) -> Result<(), ServiceError> {
        let pending = if inner.batch_open || inner.submitted.iter().any(Option::is_some) {
            inner
                .tasks
                .iter()
                .zip(&inner.submitted)
                .filter(|_| inner.history.len() == inner.step)
                .map(|(t, s)| PendingRecord {
                    task_id: t.task_id.clone(),
                    video_id: t.video_id.clone(),
                    clip_index: t.clip_index,
                    spots: s.clone(),
                })
                .collect()
        } else {
            Vec::new()
        };
        let state = PersistedState {
            schema: STATE_SCHEMA,
            id: self.id.clone(),
            status: inner.status,
            step: inner.step,
            history: inner.history.clone(),
            pending,
            curve: inner.curve.clone(),
            error: inner.error.clone(),
        };
        let path = self.state_dir.join(STATE_FILE);
        let tmp = self.state_dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(&state)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn build_task(&self, step: usize, index: usize, clip: &Clip, request: &AnnotationRequest<'_>) -> AnnotationTask {
        let classes = (0..self.dataset.num_classes())
            .map(|id| ClassEntry {
                id,
                name: self.dataset.config.class_name(id),
            })
            .collect();
        AnnotationTask {
            task_id: format!("t{step:03}-{index:03}"),
            video_id: clip.id.video_id.clone(),
            clip_index: clip.id.clip_index,
            start_time: clip.start_time,
            duration: clip.duration(),
            label_kind: request.label_kind,
            classes,
            feature_preview: energy_sketch(clip),
            suggestions: request
                .model
                .map(|m| suggestions(m, clip, request.nms))
                .unwrap_or_default(),
            status: TaskStatus::Pending,
        }
    }
}

fn snapshot(id: &str, inner: &Inner) -> SessionView {
    SessionView {
        id: id.to_string(),
        status: inner.status,
        step: inner.step,
        labeled_clips: inner.history.iter().map(Vec::len).sum(),
        batch_open: inner.batch_open,
        tasks: inner.tasks.clone(),
        curve: inner.curve.clone(),
        error: inner.error.clone(),
    }
}

fn load_state(path: &Path) -> Result<Option<PersistedState>, ServiceError> {
    if !path.exists() {
        return Ok(None);
    }
    let state: PersistedState = serde_json::from_slice(&fs::read(path)?)?;
    if state.schema != STATE_SCHEMA {
        return Err(ServiceError::Internal(format!(
            "session state schema {} is not supported",
            state.schema
        )));
    }
    Ok(Some(state))
}

pub fn status_name(status: LoopStatus) -> &'static str {
    match status {
        LoopStatus::Training => "training",
        LoopStatus::Selecting => "selecting",
        LoopStatus::AwaitingLabels => "awaiting_labels",
        LoopStatus::Finished => "finished",
        LoopStatus::Failed => "failed",
    }
}

/// Checks class ids and the half-open `[0, duration)` time rule.
pub fn validate_spots(spots: &[WireSpot], duration: f64, num_classes: usize) -> Result<(), ServiceError> {
    for (i, spot) in spots.iter().enumerate() {
        if spot.class_id >= num_classes {
            return Err(ServiceError::Validation(format!(
                "spot {i}: class {} not in [0, {num_classes})",
                spot.class_id
            )));
        }
        if !(spot.time >= 0.0 && spot.time < duration) {
            return Err(ServiceError::Validation(format!(
                "spot {i}: time {} not in [0, {duration})",
                spot.time
            )));
        }
    }
    Ok(())
}

/// RMS of each of 8 contiguous feature bands, per frame.
pub fn energy_sketch(clip: &Clip) -> Vec<[f32; PREVIEW_BINS]> {
    let dim = clip.dim();
    (0..clip.frame_count())
        .map(|i| {
            let frame = clip.frame(i);
            let mut bins = [0.0f32; PREVIEW_BINS];
            for (b, bin) in bins.iter_mut().enumerate() {
                let lo = b * dim / PREVIEW_BINS;
                let hi = ((b + 1) * dim / PREVIEW_BINS).max(lo + 1).min(dim);
                if lo >= dim {
                    continue;
                }
                let band = &frame[lo..hi];
                *bin = (band.iter().map(|x| x * x).sum::<f32>() / band.len() as f32).sqrt();
            }
            bins
        })
        .collect()
}

fn suggestions(model: &ModelParams, clip: &Clip, nms: &NmsConfig) -> Vec<PredictedSpot> {
    let config = NmsConfig {
        threshold: nms.threshold.max(SUGGESTION_MIN_CONFIDENCE),
        ..*nms
    };
    let mut spots = infer_clip(model, clip, &config).unwrap_or_default();
    spots.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.class_id.cmp(&b.class_id)));
    spots
}

fn to_labels(spots: &[WireSpot], kind: LabelKind) -> ClipLabels {
    match kind {
        LabelKind::Weak => ClipLabels::Weak(spots.iter().map(|s| s.class_id).collect()),
        _ => ClipLabels::Full(spots.iter().map(|s| Spot::new(s.class_id, s.time)).collect()),
    }
}

/// Oracle that waits for labels submitted through the session.
pub struct RemoteOracle {
    session: Arc<Session>,
}

impl RemoteOracle {
    fn replay(&self, step: usize, clips: &[Clip]) -> Option<Vec<LabeledRecord>> {
        let inner = self.session.lock();
        let records = inner.history.get(step)?;
        let matches = records.len() == clips.len()
            && records
                .iter()
                .zip(clips)
                .all(|(r, c)| r.video_id == c.id.video_id && r.clip_index == c.id.clip_index);
        if matches {
            Some(records.clone())
        } else {
            None
        }
    }
}

impl Oracle for RemoteOracle {
    fn annotate(&mut self, request: AnnotationRequest<'_>) -> alspot::Result<Vec<Clip>> {
        let step = request.step;
        let session = Arc::clone(&self.session);

        if let Some(records) = self.replay(step, request.clips) {
            tracing::info!(session = %session.id, step, "replaying persisted labels");
            let mut inner = session.lock();
            inner.step = step;
            drop(inner);
            return Ok(request
                .clips
                .iter()
                .zip(records)
                .map(|(c, r)| c.clone().with_labels(to_labels(&r.spots, request.label_kind)))
                .collect());
        }

        let tasks: Vec<AnnotationTask> = request
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| session.build_task(step, i, c, &request))
            .collect();
        let mut inner = session.lock();
        // A later step than anything on disk: forget stale history beyond it.
        inner.history.truncate(step);
        let recovered: BTreeMap<ClipRef, Vec<WireSpot>> = std::mem::take(&mut inner.recovered_pending)
            .into_iter()
            .filter_map(|r| r.spots.map(|s| (ClipRef::new(r.video_id, r.clip_index), s)))
            .collect();
        inner.submitted = request
            .clips
            .iter()
            .map(|c| recovered.get(&c.id).cloned())
            .collect();
        inner.tasks = tasks;
        let state = &mut *inner;
        for (task, s) in state.tasks.iter_mut().zip(&state.submitted) {
            if s.is_some() {
                task.status = TaskStatus::Submitted;
            }
        }
        inner.clips = request.clips.to_vec();
        inner.step = step;
        let all_recovered = inner.submitted.iter().all(Option::is_some);
        if all_recovered {
            inner.status = LoopStatus::Training;
            inner.batch_open = false;
        } else {
            inner.status = LoopStatus::AwaitingLabels;
            inner.batch_open = true;
        }
        session
            .persist(&inner)
            .map_err(|e| alspot::Error::Oracle(e.to_string()))?;
        session.publish(&inner);
        tracing::info!(session = %session.id, step, batch = request.clips.len(), "batch published");

        let timeout = session.config.oracle_timeout_secs.map(Duration::from_secs);
        let deadline = timeout.map(|t| Instant::now() + t);
        while inner.submitted.iter().any(Option::is_none) {
            inner = match deadline {
                None => session
                    .labels_ready
                    .wait(inner)
                    .unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(alspot::Error::Oracle(format!(
                            "no labels for step {step} within {}s",
                            timeout.unwrap_or_default().as_secs()
                        )));
                    }
                    session
                        .labels_ready
                        .wait_timeout(inner, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }

        let records: Vec<LabeledRecord> = inner
            .clips
            .iter()
            .zip(&inner.submitted)
            .map(|(c, s)| LabeledRecord {
                video_id: c.id.video_id.clone(),
                clip_index: c.id.clip_index,
                spots: s.clone().unwrap_or_default(),
            })
            .collect();
        let labeled = inner
            .clips
            .iter()
            .zip(&records)
            .map(|(c, r)| c.clone().with_labels(to_labels(&r.spots, request.label_kind)))
            .collect();
        inner.history.push(records);
        inner.submitted.clear();
        inner.batch_open = false;
        session
            .persist(&inner)
            .map_err(|e| alspot::Error::Oracle(e.to_string()))?;
        session.publish(&inner);
        Ok(labeled)
    }

    fn status_changed(&mut self, status: LoopStatus) {
        if status == LoopStatus::AwaitingLabels {
            // Published together with the batch in `annotate`.
            return;
        }
        let mut inner = self.session.lock();
        if inner.status == status {
            return;
        }
        inner.status = status;
        if let Err(err) = self.session.persist(&inner) {
            tracing::warn!(%err, "could not persist session state");
        }
        self.session.publish(&inner);
    }

    fn curve_updated(&mut self, curve: &LearningCurve) {
        let mut inner = self.session.lock();
        inner.curve = curve.clone();
        if let Err(err) = self.session.persist(&inner) {
            tracing::warn!(%err, "could not persist session state");
        }
        self.session.publish(&inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alspot::dataset::ClipRef;

    #[test]
    fn time_at_clip_end_is_rejected() {
        let spots = [WireSpot {
            class_id: 0,
            time: 15.0,
        }];
        assert!(matches!(
            validate_spots(&spots, 15.0, 4),
            Err(ServiceError::Validation(_))
        ));
        let ok = [WireSpot {
            class_id: 3,
            time: 14.999,
        }];
        assert!(validate_spots(&ok, 15.0, 4).is_ok());
        assert!(validate_spots(&[], 15.0, 4).is_ok());
    }

    #[test]
    fn bad_class_and_negative_time_are_rejected() {
        let class = [WireSpot {
            class_id: 4,
            time: 1.0,
        }];
        assert!(validate_spots(&class, 15.0, 4).is_err());
        let neg = [WireSpot {
            class_id: 0,
            time: -0.1,
        }];
        assert!(validate_spots(&neg, 15.0, 4).is_err());
        let nan = [WireSpot {
            class_id: 0,
            time: f64::NAN,
        }];
        assert!(validate_spots(&nan, 15.0, 4).is_err());
    }

    #[test]
    fn sketch_has_eight_bins_per_frame() {
        let frames: Vec<f32> = (0..3 * 16).map(|i| i as f32).collect();
        let clip = Clip::new(ClipRef::new("v", 0), 0.0, 2.0, 16, frames).unwrap();
        let sketch = energy_sketch(&clip);
        assert_eq!(sketch.len(), 3);
        // Band 0 of frame 0 holds features 0 and 1.
        assert!((sketch[0][0] - (0.5f32).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn sketch_handles_narrow_features() {
        let clip = Clip::new(ClipRef::new("v", 0), 0.0, 2.0, 3, vec![2.0; 6]).unwrap();
        let sketch = energy_sketch(&clip);
        assert_eq!(sketch.len(), 2);
        assert!(sketch[0].iter().all(|&b| b == 2.0 || b == 0.0));
    }

    #[test]
    fn weak_labels_drop_times() {
        let spots = [
            WireSpot {
                class_id: 2,
                time: 3.1,
            },
            WireSpot {
                class_id: 2,
                time: 7.0,
            },
        ];
        assert_eq!(to_labels(&spots, LabelKind::Weak), ClipLabels::Weak([2].into()));
    }
}
