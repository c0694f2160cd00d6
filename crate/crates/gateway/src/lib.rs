//! HTTP/1.1 front end for a vault. Untrusted clients only ever reach stored
//! objects through the access gate exposed here.
//!
//! | method | path                 | notes                                       |
//! |--------|----------------------|---------------------------------------------|
//! | PUT    | `/objects?name=<n>`  | body = content, complete identity headers   |
//! | GET    | `/objects/<sel>`     | object id or logical name                   |
//! | POST   | `/shares`            | `{"object_id", "grantee": {..}}`            |
//! | GET    | `/shares/<token>`    |                                             |
//! | GET    | `/level`             | `{"level": n}`                              |
//! | PUT    | `/level`             | `{"level", "reason"}`, admin bearer token   |
//! | GET    | `/audit`             | `kind`, `object_id`, `page`, `page_size`; admin bearer token |
//!
//! The requester's identity travels in `X-Host-MAC`, `X-Host-IP`,
//! `X-Hostname`, `X-User-Id` and `X-Quad-Hash`. Headers are the simulation
//! boundary for client-side collection; a real deployment has to attest them.
//! Missing or malformed headers become absent fields, never a parse error.
//!
//! A failed verification is not an HTTP error: the response is a 200 with
//! decoy bytes and the same header set as a verified download.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{ConnectInfo, DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use decoyvault_core::broker::Delivery;
use decoyvault_core::{AuditQuery, Error, EventKind, HostIdentity, InfoconLevel, Selector, Vault};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub const HEADER_MAC: &str = "x-host-mac";
pub const HEADER_IP: &str = "x-host-ip";
pub const HEADER_HOSTNAME: &str = "x-hostname";
pub const HEADER_USER_ID: &str = "x-user-id";
pub const HEADER_QUAD_HASH: &str = "x-quad-hash";
pub const HEADER_OBJECT_NAME: &str = "x-object-name";

const DEFAULT_AUDIT_PAGE_SIZE: usize = 100;
const MAX_AUDIT_PAGE_SIZE: usize = 1000;

/// Per-request facts extracted before any handler logic runs.
#[derive(Debug, Clone)]
pub struct RequestContext {
    pub presented: HostIdentity,
    pub remote: Option<SocketAddr>,
    pub request_id: u64,
}

pub fn identity_from_headers(headers: &HeaderMap) -> HostIdentity {
    let get = |name: &str| headers.get(name).and_then(|v| v.to_str().ok());
    HostIdentity::new(
        get(HEADER_MAC),
        get(HEADER_IP),
        get(HEADER_HOSTNAME),
        get(HEADER_USER_ID),
    )
    .with_claimed_quad_hash(get(HEADER_QUAD_HASH))
}

struct AppState {
    vault: Arc<Vault>,
    next_request: AtomicU64,
}

impl AppState {
    fn context(&self, headers: &HeaderMap, remote: Option<SocketAddr>) -> RequestContext {
        RequestContext {
            presented: identity_from_headers(headers),
            remote,
            request_id: self.next_request.fetch_add(1, Ordering::Relaxed) + 1,
        }
    }

    fn is_admin(&self, headers: &HeaderMap) -> bool {
        let expected = format!("Bearer {}", self.vault.config().admin_token);
        headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| constant_time_eq(v.as_bytes(), expected.as_bytes()))
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

type Shared = Arc<AppState>;

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::InvalidInput(_)
            | Error::IncompleteIdentity(_)
            | Error::Policy(_)
            | Error::UndefinedHash(_) => StatusCode::BAD_REQUEST,
            Error::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, Error> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

/// Percent-encodes anything that is not printable ASCII.
fn header_safe(name: &str) -> HeaderValue {
    let mut out = String::with_capacity(name.len());
    for b in name.bytes() {
        if (0x20..0x7f).contains(&b) && b != b'%' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    HeaderValue::from_str(&out).expect("printable ASCII")
}

/// Same status and header set for originals and decoys.
fn content_response(delivery: Delivery) -> Response {
    let mut response = Response::new(Body::from(delivery.content));
    let headers = response.headers_mut();
    headers.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    headers.insert(HEADER_OBJECT_NAME, header_safe(&delivery.name));
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    response
}

#[derive(Deserialize)]
struct UploadParams {
    name: Option<String>,
}

#[derive(Serialize)]
struct UploadResponse {
    object_id: String,
    logical_name: String,
    decoy_names: Vec<String>,
    sensitive_run_count: usize,
    upload_level: InfoconLevel,
}

async fn upload(
    State(state): State<Shared>,
    ConnectInfo(remote): ConnectInfo<SocketAddr>,
    Query(params): Query<UploadParams>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = state.context(&headers, Some(remote));
    let name = params
        .name
        .ok_or_else(|| bad_request("missing name query parameter"))?;
    let vault = state.vault.clone();
    let level = vault.level();
    tracing::info!(request = ctx.request_id, remote = %remote, %name, "upload");
    let record =
        blocking(move || vault.broker().upload(&name, &body, &ctx.presented, level)).await?;
    let response = UploadResponse {
        object_id: record.object_id,
        logical_name: record.logical_name,
        decoy_names: record.decoys.into_iter().map(|d| d.decoy_name).collect(),
        sensitive_run_count: record.sensitive_run_count,
        upload_level: record.upload_level,
    };
    Ok((StatusCode::CREATED, Json(response)).into_response())
}

async fn download(
    State(state): State<Shared>,
    ConnectInfo(remote): ConnectInfo<SocketAddr>,
    Path(selector): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let ctx = state.context(&headers, Some(remote));
    let vault = state.vault.clone();
    let level = vault.level();
    tracing::info!(request = ctx.request_id, remote = %remote, %selector, "download");
    let delivery = blocking(move || {
        vault
            .broker()
            .request_download(&Selector::Any(selector), &ctx.presented, level)
    })
    .await?;
    Ok(content_response(delivery))
}

#[derive(Deserialize)]
struct GranteeBody {
    mac: Option<String>,
    ip: Option<String>,
    hostname: Option<String>,
    user_id: Option<String>,
}

#[derive(Deserialize)]
struct ShareBody {
    object_id: String,
    grantee: GranteeBody,
}

async fn create_share(
    State(state): State<Shared>,
    ConnectInfo(remote): ConnectInfo<SocketAddr>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let ctx = state.context(&headers, Some(remote));
    let body: ShareBody = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
    let g = &body.grantee;
    let grantee = HostIdentity::new(
        g.mac.as_deref(),
        g.ip.as_deref(),
        g.hostname.as_deref(),
        g.user_id.as_deref(),
    );
    let vault = state.vault.clone();
    let level = vault.level();
    tracing::info!(request = ctx.request_id, remote = %remote, object = %body.object_id, "share");
    let grant = blocking(move || {
        vault
            .broker()
            .create_share(&body.object_id, &ctx.presented, &grantee, level)
    })
    .await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "token": grant.token })),
    )
        .into_response())
}

async fn redeem_share(
    State(state): State<Shared>,
    ConnectInfo(remote): ConnectInfo<SocketAddr>,
    Path(token): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let ctx = state.context(&headers, Some(remote));
    let vault = state.vault.clone();
    let level = vault.level();
    tracing::info!(request = ctx.request_id, remote = %remote, "redeem");
    let delivery =
        blocking(move || vault.broker().redeem_share(&token, &ctx.presented, level)).await?;
    Ok(content_response(delivery))
}

async fn get_level(State(state): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "level": state.vault.level() }))
}

#[derive(Deserialize)]
struct LevelBody {
    level: i64,
    #[serde(default)]
    reason: String,
}

async fn set_level(
    State(state): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<StatusCode, ApiError> {
    if !state.is_admin(&headers) {
        return Err(ApiError(
            StatusCode::UNAUTHORIZED,
            "admin token required".into(),
        ));
    }
    let body: LevelBody = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
    let level = u8::try_from(body.level)
        .map_err(|_| bad_request(format!("threat level {} outside 1..=5", body.level)))
        .and_then(|v| InfoconLevel::new(v).map_err(ApiError::from))?;
    let vault = state.vault.clone();
    blocking(move || vault.threat().set_level(level, &body.reason)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct AuditParams {
    kind: Option<String>,
    object_id: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn audit(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(params): Query<AuditParams>,
) -> Result<Response, ApiError> {
    if !state.is_admin(&headers) {
        return Err(ApiError(
            StatusCode::UNAUTHORIZED,
            "admin token required".into(),
        ));
    }
    let kind = match params.kind.as_deref() {
        None | Some("") => None,
        Some(k) => Some(k.parse::<EventKind>()?),
    };
    let query = AuditQuery {
        kind,
        object_id: params.object_id.filter(|s| !s.is_empty()),
        ..Default::default()
    };
    let page = params.page.unwrap_or(0);
    let page_size = params
        .page_size
        .unwrap_or(DEFAULT_AUDIT_PAGE_SIZE)
        .clamp(1, MAX_AUDIT_PAGE_SIZE);
    let vault = state.vault.clone();
    let events = blocking(move || vault.audit().query(&query, page, page_size)).await?;
    Ok(Json(events).into_response())
}

pub fn router(vault: Arc<Vault>) -> Router {
    let body_limit = usize::try_from(vault.config().max_object_size)
        .unwrap_or(usize::MAX)
        .saturating_add(1);
    let state = Arc::new(AppState {
        vault,
        next_request: AtomicU64::new(0),
    });
    Router::new()
        .route("/objects", put(upload))
        .route("/objects/{selector}", get(download))
        .route("/shares", post(create_share))
        .route("/shares/{token}", get(redeem_share))
        .route("/level", get(get_level).put(set_level))
        .route("/audit", get(audit))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    vault: Arc<Vault>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(vault).into_make_service_with_connect_info::<SocketAddr>();
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `bind_address` and serves until Ctrl-C or SIGTERM.
pub async fn run(bind_address: &str, vault: Arc<Vault>) -> std::io::Result<()> {
    let listener = TcpListener::bind(bind_address).await?;
    tracing::info!(addr = %listener.local_addr()?, vault = %vault.root().display(), "gateway listening");
    serve(listener, vault, shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
