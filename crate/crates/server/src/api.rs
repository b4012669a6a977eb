//! HTTP + WebSocket routes.
//!
//! | Method | Path                              | Body / query                         |
//! |--------|-----------------------------------|--------------------------------------|
//! | GET    | `/health`                         |                                      |
//! | POST   | `/datasets`                       | `{manifest_path}`                    |
//! | GET    | `/datasets/{id}/spots`            | `offset`, `limit`                    |
//! | GET    | `/datasets/{id}/embedding`        |                                      |
//! | POST   | `/datasets/{id}/cluster`          | `{k, seed}`                          |
//! | POST   | `/sessions`                       | `{dataset_id}`                       |
//! | GET    | `/sessions/{id}`                  |                                      |
//! | POST   | `/sessions/{id}/selection`        | `{mode, source, payload, expected_revision}` |
//! | POST   | `/sessions/{id}/clustering`       | `{k, seed, expected_revision}`       |
//! | GET    | `/sessions/{id}/bars`             | `cap`                                |
//! | GET    | `/sessions/{id}/mask.png`         | `alpha`                              |
//! | GET    | `/sessions/{id}/table`            | `sort_by`, `desc`, `filter_type`, `filter_min` |
//! | GET    | `/sessions/{id}/events`           | WebSocket                            |

use std::path::PathBuf;
use std::sync::Arc;

use aitchview_core::cluster::ClusterError;
use aitchview_core::composition::Composition;
use aitchview_core::session::{
    bar_subset, combine, render_mask, select_by_cluster, select_by_region, table_rows,
    CombineMode, MaskStyle, PointSource, Selection, SessionError, Shape, SortKey, TableQuery,
    DEFAULT_BAR_CAP, DEFAULT_OVERLAY_ALPHA,
};
use aitchview_core::{dataset::DatasetError, Clustering};
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;
use tracing::{debug, warn};

use crate::analysis::{Analysis, ClusteringBody, EmbeddingBody};
use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, Changed, DatasetEntry, Event, Session};

const DEFAULT_PAGE: usize = 1000;
const MAX_PAGE: usize = 10_000;

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let router = Router::new()
        .route("/health", get(health))
        .route("/datasets", post(load_dataset))
        .route("/datasets/{id}/spots", get(spots))
        .route("/datasets/{id}/embedding", get(embedding))
        .route("/datasets/{id}/cluster", post(cluster))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_state))
        .route("/sessions/{id}/selection", post(update_selection))
        .route("/sessions/{id}/clustering", post(update_clustering))
        .route("/sessions/{id}/bars", get(bars))
        .route("/sessions/{id}/mask.png", get(mask))
        .route("/sessions/{id}/table", get(table))
        .route("/sessions/{id}/events", get(events))
        .with_state(state);
    match ui_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidBody", None, e.to_string()))
}

fn parse_payload<T: DeserializeOwned>(payload: serde_json::Value) -> ApiResult<T> {
    serde_json::from_value(payload)
        .map_err(|e| ApiError::bad_request("InvalidPayload", Some("payload"), e.to_string()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::bad_request("InvalidQuery", None, e.body_text()))
}

fn find_dataset(state: &AppState, id: &str) -> ApiResult<Arc<DatasetEntry>> {
    state.dataset(id).ok_or_else(|| ApiError::not_found("dataset", id))
}

fn find_session(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state.session(id).ok_or_else(|| ApiError::not_found("session", id))
}

fn cluster_error(e: ClusterError) -> ApiError {
    match e {
        ClusterError::BadK { .. } => ApiError::bad_request("BadK", Some("k"), e.to_string()),
        other => ApiError::bad_request("BadClusterConfig", None, other.to_string()),
    }
}

fn session_error(e: SessionError, field: &str) -> ApiError {
    let kind = match &e {
        SessionError::DegenerateShape(_) => "DegenerateShape",
        SessionError::BadLabel { .. } => "BadLabel",
        SessionError::BadCap(_) => "BadCap",
        SessionError::IndexOutOfRange { .. } => "IndexOutOfRange",
        SessionError::UnknownCellType(_) => "UnknownCellType",
        SessionError::BadAlpha(_) => "BadAlpha",
        SessionError::SizeMismatch { .. } => "SizeMismatch",
    };
    ApiError::bad_request(kind, Some(field), e.to_string())
}

fn dataset_error(e: DatasetError) -> ApiError {
    let kind = match &e {
        DatasetError::MissingFile(_) => "MissingFile",
        DatasetError::Parse { .. } => "ParseError",
        DatasetError::IdMismatch(_) => "IdMismatch",
        DatasetError::OutOfBounds(_) => "OutOfBounds",
        DatasetError::BadHeader { .. } => "BadHeader",
        DatasetError::DuplicateId(_) => "DuplicateId",
        DatasetError::Manifest(_) => "BadManifest",
        DatasetError::Image(_) => "BadImage",
        _ => "InvalidDataset",
    };
    ApiError::bad_request(kind, Some("manifest_path"), e.to_string())
}

/// k arrives signed so that negative values report `BadK`, not a parse error.
fn to_k(k: i64, n: usize) -> ApiResult<usize> {
    usize::try_from(k).map_err(|_| {
        cluster_error(ClusterError::BadK {
            k: 0,
            n,
        })
    })
}

async fn health() -> &'static str {
    "ok"
}

#[derive(Deserialize)]
struct LoadRequest {
    manifest_path: PathBuf,
}

#[derive(Serialize)]
struct ImageSize {
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct LoadResponse<'a> {
    dataset_id: &'a str,
    n: usize,
    d: usize,
    cell_types: &'a [String],
    image_size: ImageSize,
    spot_radius_px: f64,
}

async fn load_dataset(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: LoadRequest = parse_body(&body)?;
    let path = state.resolve(&req.manifest_path);
    let (dataset, analysis) = tokio::task::spawn_blocking(move || {
        let dataset = aitchview_core::load_dataset(&path).map_err(dataset_error)?;
        let analysis = Analysis::compute(&dataset)
            .map_err(|e| ApiError::bad_request("InvalidDataset", None, e.to_string()))?;
        Ok::<_, ApiError>((dataset, analysis))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let entry = state.add_dataset(dataset, analysis);
    debug!(dataset = %entry.id, n = entry.dataset.len(), "dataset loaded");
    let ds = &entry.dataset;
    Ok(Json(LoadResponse {
        dataset_id: &entry.id,
        n: ds.len(),
        d: ds.dim(),
        cell_types: ds.cell_types(),
        image_size: ImageSize {
            width: ds.image().width,
            height: ds.image().height,
        },
        spot_radius_px: ds.spot_radius_px(),
    })
    .into_response())
}

#[derive(Deserialize)]
struct PageQuery {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct SpotBody<'a> {
    index: usize,
    id: &'a str,
    x: f64,
    y: f64,
    composition: &'a Composition,
}

#[derive(Serialize)]
struct SpotsResponse<'a> {
    total: usize,
    offset: usize,
    spots: Vec<SpotBody<'a>>,
}

async fn spots(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let page = query(q)?;
    let entry = find_dataset(&state, &id)?;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(
            "BadLimit",
            Some("limit"),
            format!("limit must be in 1..={MAX_PAGE}"),
        ));
    }
    let all = entry.dataset.spots();
    let body = SpotsResponse {
        total: all.len(),
        offset: page.offset,
        spots: all
            .iter()
            .enumerate()
            .skip(page.offset)
            .take(limit)
            .map(|(index, s)| SpotBody {
                index,
                id: &s.id,
                x: s.position[0],
                y: s.position[1],
                composition: &s.composition,
            })
            .collect(),
    };
    Ok(Json(body).into_response())
}

async fn embedding(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = find_dataset(&state, &id)?;
    Ok(Json(EmbeddingBody::new(&entry.analysis)).into_response())
}

#[derive(Deserialize)]
struct ClusterRequest {
    k: i64,
    #[serde(default)]
    seed: u64,
}

async fn cluster(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let entry = find_dataset(&state, &id)?;
    let req: ClusterRequest = parse_body(&body)?;
    let k = to_k(req.k, entry.dataset.len())?;
    let clustering = entry.clustering(k, req.seed).map_err(cluster_error)?;
    Ok(Json(ClusteringBody::new(&clustering)).into_response())
}

#[derive(Deserialize)]
struct CreateSessionRequest {
    dataset_id: String,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSessionRequest = parse_body(&body)?;
    let entry = find_dataset(&state, &req.dataset_id)?;
    let session = state.create_session(entry);
    Ok(Json(serde_json::json!({ "session_id": session.id, "revision": 0 })).into_response())
}

#[derive(Serialize)]
struct SessionBody<'a> {
    session_id: &'a str,
    dataset_id: &'a str,
    revision: u64,
    k: Option<usize>,
    seed: Option<u64>,
    /// `null` until something has been selected.
    selection: Option<Vec<usize>>,
}

async fn session_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = find_session(&state, &id)?;
    let body = session.read(|s| SessionBody {
        session_id: &session.id,
        dataset_id: &session.dataset.id,
        revision: s.revision,
        k: s.clustering.as_ref().map(|c| c.k),
        seed: s.clustering.as_ref().map(|c| c.seed),
        selection: s.selection.as_ref().map(Selection::to_vec),
    });
    Ok(Json(body).into_response())
}

#[derive(Deserialize, Clone, Copy, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Space {
    #[default]
    Image,
    Scatter,
}

#[derive(Deserialize)]
struct RectPayload {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    #[serde(default)]
    space: Space,
}

#[derive(Deserialize)]
struct PolygonPayload {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    space: Space,
}

#[derive(Deserialize)]
struct ClusterPayload {
    label: i64,
    k: Option<i64>,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct IdsPayload {
    #[serde(default)]
    ids: Vec<String>,
    #[serde(default)]
    indices: Vec<usize>,
}

#[derive(Deserialize)]
struct SelectionRequest {
    #[serde(default = "default_mode")]
    mode: CombineMode,
    source: String,
    #[serde(default)]
    payload: serde_json::Value,
    expected_revision: Option<u64>,
}

fn default_mode() -> CombineMode {
    CombineMode::Replace
}

#[derive(Serialize)]
struct MutationResponse {
    revision: u64,
    count: usize,
}

async fn update_selection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = find_session(&state, &id)?;
    let req: SelectionRequest = parse_body(&body)?;
    let entry = session.dataset.clone();
    let n = entry.dataset.len();

    let region = |shape: Shape, space: Space| {
        let source = match space {
            Space::Image => PointSource::Image(&entry.dataset),
            Space::Scatter => PointSource::Scatter(&entry.analysis.embedding),
        };
        select_by_region(source, &shape).map_err(|e| session_error(e, "payload"))
    };

    // Everything that does not depend on session state is resolved before
    // taking the session lock.
    enum Picked {
        Ready(Selection),
        Cluster { label: usize, clustering: Option<Arc<Clustering>> },
        Clear,
    }
    let picked = match req.source.as_str() {
        "rect" => {
            let p: RectPayload = parse_payload(req.payload)?;
            Picked::Ready(region(Shape::Rect { x0: p.x0, y0: p.y0, x1: p.x1, y1: p.y1 }, p.space)?)
        }
        "polygon" => {
            let p: PolygonPayload = parse_payload(req.payload)?;
            Picked::Ready(region(Shape::Polygon { points: p.points }, p.space)?)
        }
        "ids" => {
            let p: IdsPayload = parse_payload(req.payload)?;
            let mut indices = p.indices;
            for id in &p.ids {
                let idx = entry
                    .dataset
                    .spots()
                    .iter()
                    .position(|s| &s.id == id)
                    .ok_or_else(|| {
                        ApiError::bad_request("UnknownSpot", Some("payload.ids"), format!("unknown spot id {id:?}"))
                    })?;
                indices.push(idx);
            }
            Picked::Ready(
                Selection::from_indices(indices, n).map_err(|e| session_error(e, "payload.indices"))?,
            )
        }
        "cluster" => {
            let p: ClusterPayload = parse_payload(req.payload)?;
            let label = usize::try_from(p.label).map_err(|_| {
                ApiError::bad_request("BadLabel", Some("payload.label"), "label must be non-negative")
            })?;
            let clustering = match p.k {
                Some(k) => Some(
                    entry
                        .clustering(to_k(k, n)?, p.seed)
                        .map_err(cluster_error)?,
                ),
                None => None,
            };
            Picked::Cluster { label, clustering }
        }
        "clear" => Picked::Clear,
        other => {
            return Err(ApiError::bad_request(
                "BadSource",
                Some("source"),
                format!("unknown selection source {other:?}"),
            ))
        }
    };

    let ((count,), revision) = session.mutate(
        req.expected_revision,
        ApiError::stale,
        |s| {
            let mut changed = Vec::new();
            let incoming = match picked {
                Picked::Ready(sel) => Some(sel),
                Picked::Clear => None,
                Picked::Cluster { label, clustering } => {
                    if let Some(c) = clustering {
                        let same = s
                            .clustering
                            .as_ref()
                            .is_some_and(|cur| Arc::ptr_eq(cur, &c));
                        if !same {
                            s.clustering = Some(c);
                            changed.push(Changed::Clustering);
                        }
                    }
                    let active = s.clustering.as_ref().ok_or_else(|| {
                        ApiError::bad_request(
                            "NoClustering",
                            Some("payload.k"),
                            "session has no clustering; pass k or POST /sessions/{id}/clustering",
                        )
                    })?;
                    Some(select_by_cluster(active, label).map_err(|e| session_error(e, "payload.label"))?)
                }
            };
            s.selection = incoming.map(|b| {
                let current = s.selection.clone().unwrap_or_default();
                combine(&current, &b, req.mode)
            });
            changed.push(Changed::Selection);
            let count = s.selection.as_ref().map_or(0, Selection::len);
            Ok(((count,), changed))
        },
    )?;
    Ok(Json(MutationResponse { revision, count }).into_response())
}

#[derive(Deserialize)]
struct ClusteringRequest {
    k: i64,
    #[serde(default)]
    seed: u64,
    expected_revision: Option<u64>,
}

async fn update_clustering(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let session = find_session(&state, &id)?;
    let req: ClusteringRequest = parse_body(&body)?;
    let entry = session.dataset.clone();
    let k = to_k(req.k, entry.dataset.len())?;
    let clustering = entry.clustering(k, req.seed).map_err(cluster_error)?;
    let (_, revision) = session.mutate(req.expected_revision, ApiError::stale, |s| {
        s.clustering = Some(clustering);
        Ok(((), vec![Changed::Clustering]))
    })?;
    Ok(Json(serde_json::json!({ "revision": revision, "k": k, "seed": req.seed })).into_response())
}

#[derive(Deserialize)]
struct BarsQuery {
    cap: Option<usize>,
}

#[derive(Serialize)]
struct BarsResponse<'a> {
    revision: u64,
    source_len: usize,
    decimated: bool,
    bar_indices: Vec<usize>,
    spot_ids: Vec<&'a str>,
    compositions: Vec<&'a Composition>,
    /// Cluster label per bar under the session's active clustering.
    labels: Option<Vec<usize>>,
}

async fn bars(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<BarsQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let session = find_session(&state, &id)?;
    let entry = &session.dataset;
    let (revision, subset, labels) = session.read(|s| {
        let subset = bar_subset(
            &entry.analysis.embedding,
            s.selection.as_ref(),
            q.cap.unwrap_or(DEFAULT_BAR_CAP),
        );
        (s.revision, subset, s.clustering.clone())
    });
    let subset = subset.map_err(|e| session_error(e, "cap"))?;
    let spots = entry.dataset.spots();
    let body = BarsResponse {
        revision,
        source_len: subset.source_len,
        decimated: subset.is_decimated(),
        spot_ids: subset.bar_indices.iter().map(|&i| spots[i].id.as_str()).collect(),
        compositions: subset.bar_indices.iter().map(|&i| &spots[i].composition).collect(),
        labels: labels.map(|c| subset.bar_indices.iter().map(|&i| c.labels[i]).collect()),
        bar_indices: subset.bar_indices,
    };
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct MaskQuery {
    alpha: Option<f64>,
}

async fn mask(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<MaskQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let session = find_session(&state, &id)?;
    let selection = session.read(|s| s.selection.clone().unwrap_or_default());
    let style = MaskStyle {
        alpha: q.alpha.unwrap_or(DEFAULT_OVERLAY_ALPHA),
        ..MaskStyle::default()
    };
    let dataset = session.dataset.clone();
    let png = tokio::task::spawn_blocking(move || {
        render_mask(&dataset.dataset, &selection, style).map(|m| m.to_png())
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| session_error(e, "alpha"))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct TableParams {
    sort_by: Option<String>,
    #[serde(default)]
    desc: bool,
    filter_type: Option<String>,
    filter_min: Option<f64>,
}

async fn table(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<TableParams>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    let session = find_session(&state, &id)?;
    let sort_by = match q.sort_by.as_deref() {
        None | Some("") | Some("spot_id") => SortKey::SpotId,
        Some(name) => SortKey::CellType(name.to_owned()),
    };
    let min_filter = match (q.filter_type, q.filter_min) {
        (Some(t), Some(min)) if !t.is_empty() => Some((t, min)),
        (None, None) => None,
        (Some(t), None) if t.is_empty() => None,
        _ => {
            return Err(ApiError::bad_request(
                "IncompleteFilter",
                Some("filter_min"),
                "filter_type and filter_min must be given together",
            ))
        }
    };
    let field = if matches!(sort_by, SortKey::CellType(ref n) if session.dataset.dataset.cell_type_index(n).is_none()) {
        "sort_by"
    } else {
        "filter_type"
    };
    let query = TableQuery {
        sort_by,
        descending: q.desc,
        min_filter,
    };
    let rows = table_rows(&session.dataset.dataset, &query).map_err(|e| session_error(e, field))?;
    Ok(Json(serde_json::json!({ "total": rows.len(), "rows": rows })).into_response())
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let session = find_session(&state, &id)?;
    Ok(ws.on_upgrade(move |socket| push_events(socket, session)))
}

/// Sends a sync message with the current revision, then every event.
async fn push_events(mut socket: WebSocket, session: Arc<Session>) {
    let (revision, mut rx) = session.subscribe();
    let hello = Event {
        revision,
        changed: Vec::new(),
    };
    let text = serde_json::to_string(&hello).expect("event serializes");
    if socket.send(Message::Text(text.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            event = rx.recv() => match event {
                Ok(event) => {
                    let text = serde_json::to_string(&event).expect("event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(skipped)) => {
                    warn!(session = %session.id, skipped, "event subscriber lagged; closing");
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
