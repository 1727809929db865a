//! HTTP routes over a set of sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/sessions` | list of session summaries |
//! | GET | `/sessions/{id}/status` | [`StatusBody`] |
//! | GET | `/sessions/{id}/tasks` | [`TasksBody`]; 409 before the first batch and after the loop ends |
//! | POST | `/sessions/{id}/tasks/{task_id}/labels` | [`LabelsBody`] in, [`SubmitBody`] out |
//! | GET | `/sessions/{id}/curve` | the current learning curve |

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use alspot::harness::LoopStatus;
use alspot::metrics::LearningCurve;

use crate::error::ServiceError;
use crate::session::{AnnotationTask, Session, WireSpot};

pub type Sessions = Arc<BTreeMap<String, Arc<Session>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub status: LoopStatus,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusBody {
    pub id: String,
    pub status: LoopStatus,
    pub step: usize,
    pub labeled_clips: usize,
    pub pending_tasks: usize,
    pub curve_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasksBody {
    pub status: LoopStatus,
    pub step: usize,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsBody {
    pub spots: Vec<WireSpot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitBody {
    pub task_id: String,
    pub remaining: usize,
    pub status: LoopStatus,
}

pub fn router(sessions: Sessions) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/tasks", get(tasks))
        .route("/sessions/{id}/tasks/{task_id}/labels", post(submit))
        .route("/sessions/{id}/curve", get(curve))
        .with_state(sessions)
}

fn find(sessions: &Sessions, id: &str) -> Result<Arc<Session>, ServiceError> {
    sessions
        .get(id)
        .cloned()
        .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
}

async fn list_sessions(State(sessions): State<Sessions>) -> Json<Vec<SessionSummary>> {
    Json(
        sessions
            .values()
            .map(|s| {
                let view = s.view();
                SessionSummary {
                    id: view.id.clone(),
                    status: view.status,
                    step: view.step,
                }
            })
            .collect(),
    )
}

async fn status(
    State(sessions): State<Sessions>,
    Path(id): Path<String>,
) -> Result<Json<StatusBody>, ServiceError> {
    let view = find(&sessions, &id)?.view();
    Ok(Json(StatusBody {
        id: view.id.clone(),
        status: view.status,
        step: view.step,
        labeled_clips: view.labeled_clips,
        pending_tasks: view.pending().count(),
        curve_points: view.curve.points.len(),
        error: view.error.clone(),
    }))
}

async fn tasks(
    State(sessions): State<Sessions>,
    Path(id): Path<String>,
) -> Result<Json<TasksBody>, ServiceError> {
    let session = find(&sessions, &id)?;
    let (status, tasks) = session.pending_tasks()?;
    Ok(Json(TasksBody {
        status,
        step: session.view().step,
        tasks,
    }))
}

async fn submit(
    State(sessions): State<Sessions>,
    Path((id, task_id)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<SubmitBody>, ServiceError> {
    let session = find(&sessions, &id)?;
    let body: LabelsBody =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let ack = tokio::task::spawn_blocking(move || {
        let ack = session.submit(&task_id, body.spots)?;
        Ok::<_, ServiceError>(SubmitBody {
            task_id,
            remaining: ack.remaining,
            status: session.view().status,
        })
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(ack))
}

async fn curve(
    State(sessions): State<Sessions>,
    Path(id): Path<String>,
) -> Result<Json<LearningCurve>, ServiceError> {
    Ok(Json(find(&sessions, &id)?.view().curve.clone()))
}
