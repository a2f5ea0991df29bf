// SPDX-License-Identifier: MIT OR Apache-2.0

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use pbos_core::stopping::{Decision, DistSummary, SessionState, StoppingConfig, WhatIf};
use pbos_core::NormalGammaParams;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::ServiceError;
use crate::store::{Applied, EventKind, SessionRecord, Store};

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/observations", post(add_observations))
        .route("/sessions/{id}/what-if", post(what_if))
        .with_state(store)
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub config: StoppingConfig,
    pub prior: NormalGammaParams,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Observations {
    pub values: Vec<f64>,
}

/// What-if overrides. `cil_thres` also accepts the string `"inf"`, since
/// JSON has no infinity literal.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub tl: Option<f64>,
    #[serde(default, deserialize_with = "number_or_inf")]
    pub cil_thres: Option<f64>,
}

fn number_or_inf<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Num(x)) => Ok(Some(x)),
        Some(Raw::Text(s)) => match s.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => Ok(Some(f64::INFINITY)),
            _ => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        },
    }
}

/// Session snapshot returned by every endpoint that touches a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub config: StoppingConfig,
    pub prior: NormalGammaParams,
    pub seed: u64,
    pub i: usize,
    pub running: bool,
    pub trajectory: Vec<(usize, f64)>,
    pub last_decision: Option<Decision>,
    /// Latest (calibrated when possible) predicted CIL distribution at `n_max`.
    pub distribution: Option<DistSummary>,
    pub success_prob: Option<f64>,
    /// Every decision so far, oldest first, for per-step charts.
    pub steps: Vec<Decision>,
    pub events: usize,
    pub state_hash: String,
    pub state: SessionState,
}

impl From<&SessionRecord> for SessionView {
    fn from(r: &SessionRecord) -> Self {
        let diag = r.state.last_decision.as_ref().and_then(|d| d.diagnostics.as_ref());
        Self {
            id: r.id.clone(),
            config: r.config.clone(),
            prior: r.prior,
            seed: r.seed,
            i: r.state.i(),
            running: !r.state.is_stopped(),
            trajectory: r.state.trajectory.clone(),
            last_decision: r.state.last_decision.clone(),
            distribution: diag.map(|d| d.distribution),
            success_prob: diag.map(|d| d.success_prob),
            steps: r
                .events
                .iter()
                .flat_map(|e| match &e.kind {
                    EventKind::Observations { decisions, .. } => decisions.as_slice(),
                    EventKind::Created { .. } => &[],
                })
                .cloned()
                .collect(),
            events: r.events.len(),
            state_hash: r.state_hash(),
            state: r.state.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationsResponse {
    /// Verdict of the last internal step.
    pub decision: Decision,
    #[serde(flatten)]
    pub applied: Applied,
    pub session: SessionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionListItem {
    pub id: String,
    pub i: usize,
    pub running: bool,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(t)| t)
        .map_err(|e| ServiceError::invalid("body", e.body_text()))
}

/// Runs store work off the async executor; rehearsals are CPU-bound.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

async fn create_session(
    State(store): State<Arc<Store>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let req = body(payload)?;
    let view = blocking(move || {
        let id = store.create(req.config, req.prior, req.seed)?;
        Ok(SessionView::from(&store.snapshot(&id)?))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_sessions(State(store): State<Arc<Store>>) -> Result<Json<Vec<SessionListItem>>, ServiceError> {
    let items = blocking(move || {
        store
            .ids()
            .into_iter()
            .map(|id| {
                let r = store.snapshot(&id)?;
                Ok(SessionListItem {
                    id,
                    i: r.state.i(),
                    running: !r.state.is_stopped(),
                })
            })
            .collect()
    })
    .await?;
    Ok(Json(items))
}

async fn get_session(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    let view = blocking(move || Ok(SessionView::from(&store.snapshot(&id)?))).await?;
    Ok(Json(view))
}

async fn add_observations(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    payload: Result<Json<Observations>, JsonRejection>,
) -> Result<Json<ObservationsResponse>, ServiceError> {
    let req = body(payload)?;
    let resp = blocking(move || {
        let (applied, rec) = store.add_observations(&id, &req.values)?;
        Ok(ObservationsResponse {
            decision: applied.decisions.last().cloned().expect("at least one step"),
            applied,
            session: SessionView::from(&rec),
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn what_if(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    payload: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Json<Decision>, ServiceError> {
    let req = body(payload)?;
    let overrides = WhatIf {
        tl: req.tl,
        cil_thres: req.cil_thres,
    };
    let d = blocking(move || store.what_if(&id, overrides)).await?;
    Ok(Json(d))
}
