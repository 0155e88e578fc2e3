//! HTTP/JSON gateway over the session engine.
//!
//! Every endpoint decodes its request, makes one engine call and maps the
//! result; the only state kept here is the bearer-token table. Session
//! tokens travel in the `Authorization: Bearer` header and never in URLs.

pub mod device;
pub mod error;
mod wire;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use iam_core::domain::{A1Method, BiometricTemplate, Geolocation, ServiceId, SessionId, SessionStatus, TemplateKind, UserId};
use iam_core::engine::{
    Credential, DeviceSource, LoginOutcome, LoginRequest, StepUpOutcome, TransactionOutcome,
};
use iam_core::enrollment::EnrollmentSpec;
use iam_core::kb::LogFilter;
use iam_core::{Engine, EngineError};
use rand::RngCore;
use serde::de::DeserializeOwned;

pub use device::detect_device;
pub use error::ApiError;
use wire::*;

/// Shared by all handlers.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    engine: Arc<Engine>,
    admin_token: Option<String>,
    tokens: RwLock<HashMap<String, SessionId>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, admin_token: Option<String>) -> Self {
        Self {
            inner: Arc::new(Inner {
                engine,
                admin_token,
                tokens: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.inner.engine
    }

    fn issue_token(&self, session_id: SessionId) -> String {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        self.tokens_mut().insert(token.clone(), session_id);
        token
    }

    fn session_for(&self, token: &str) -> Option<SessionId> {
        self.inner
            .tokens
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(token)
            .cloned()
    }

    fn tokens_mut(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, SessionId>> {
        self.inner.tokens.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Closes expired sessions and forgets closed ones older than one
    /// session lifetime, together with their bearer tokens.
    pub fn sweep(&self) -> Result<usize, EngineError> {
        let engine = self.engine();
        let now = engine.now();
        let expired = engine.sweep_expired(now)?;
        let horizon = now - chrono::Duration::seconds(engine.config().session_ttl_seconds as i64);
        if engine.forget_closed(horizon) > 0 {
            self.tokens_mut().retain(|_, id| engine.session(id).is_some());
        }
        Ok(expired)
    }
}

/// Runs [`AppState::sweep`] every `interval` on the current runtime.
pub fn spawn_sweeper(state: AppState, interval: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.tick().await;
        loop {
            ticker.tick().await;
            let state = state.clone();
            match tokio::task::spawn_blocking(move || state.sweep()).await {
                Ok(Ok(n)) if n > 0 => tracing::info!(expired = n, "session sweep"),
                Ok(Err(err)) => tracing::error!(error = %err, "session sweep failed"),
                _ => {}
            }
        }
    })
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/login", post(login))
        .route("/services", get(list_services))
        .route("/services/{id}/upgrade", post(upgrade_service))
        .route("/transactions", post(initiate_transaction))
        .route("/step-up", post(complete_step_up))
        .route("/logout", post(logout))
        .route("/logs", get(own_logs))
        .route("/admin/users", post(admin_enroll))
        .route("/admin/users/{id}/unlock", post(admin_unlock))
        .route("/admin/logs", get(admin_logs));
    Router::new()
        .nest("/api/v1", api)
        .fallback(unknown_route)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn(request_log))
        .with_state(state)
}

async fn request_log(request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_owned();
    let started = Instant::now();
    let response = next.run(request).await;
    tracing::info!(
        "{method} {path} {} {}ms",
        response.status().as_u16(),
        started.elapsed().as_millis()
    );
    response
}

async fn unknown_route() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "UNKNOWN_ROUTE", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED", "method not allowed here")
}

/// Runs a blocking engine call off the async workers.
async fn blocking<T, F>(state: &AppState, call: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(state.engine());
    tokio::task::spawn_blocking(move || call(&engine))
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "STORAGE_ERROR", "worker failed"))?
        .map_err(ApiError::from)
}

// --- extractors ------------------------------------------------------------

/// JSON body whose rejections become `422 MALFORMED_BODY`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(value)| Body(value))
            .map_err(|rejection| ApiError::malformed(rejection.body_text()))
    }
}

/// Query string whose rejections become `422 MALFORMED_BODY`.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Params(q.0))
            .map_err(|rejection| ApiError::malformed(rejection.body_text()))
    }
}

/// The session named by the bearer token.
pub struct Authenticated(pub SessionId);

impl FromRequestParts<AppState> for Authenticated {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::not_authenticated)?;
        state
            .session_for(token.trim())
            .map(Authenticated)
            .ok_or_else(ApiError::not_authenticated)
    }
}

/// Passes only requests carrying the configured `X-Admin-Token`.
pub struct Admin;

impl FromRequestParts<AppState> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let forbidden = || ApiError::new(StatusCode::FORBIDDEN, "ADMIN_FORBIDDEN", "admin access denied");
        let expected = state.inner.admin_token.as_deref().ok_or_else(forbidden)?;
        let given = parts
            .headers
            .get("x-admin-token")
            .and_then(|v| v.to_str().ok())
            .ok_or_else(forbidden)?;
        if constant_time_eq(given.as_bytes(), expected.as_bytes()) {
            Ok(Admin)
        } else {
            Err(forbidden())
        }
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn probe(hex: Option<&str>, field: &str, kind: TemplateKind) -> Result<BiometricTemplate, ApiError> {
    let hex = hex.ok_or_else(|| ApiError::malformed(format!("{field} is required")))?;
    BiometricTemplate::from_hex(hex, kind).map_err(|err| ApiError::malformed(format!("{field}: {err}")))
}

// --- handlers --------------------------------------------------------------

async fn login(
    State(state): State<AppState>,
    headers: HeaderMap,
    Body(body): Body<LoginBody>,
) -> Result<Json<LoginResponse>, ApiError> {
    let credential = match body.method {
        A1Method::Pin => Credential::Pin(
            body.pin
                .ok_or_else(|| ApiError::malformed("pin is required for method pin"))?,
        ),
        A1Method::Fingerprint => Credential::Fingerprint {
            device_id: body
                .device_id
                .ok_or_else(|| ApiError::malformed("device_id is required for method fingerprint"))?,
            probe: probe(
                body.fingerprint_probe_hex.as_deref(),
                "fingerprint_probe_hex",
                TemplateKind::Fingerprint,
            )?,
        },
        A1Method::None => return Err(ApiError::malformed("method must be pin or fingerprint")),
    };
    let (device_type, device_source) = match body.device_type {
        Some(declared) => (declared, DeviceSource::Declared),
        None => {
            let agent = headers
                .get(header::USER_AGENT)
                .and_then(|v| v.to_str().ok())
                .unwrap_or("");
            (detect_device(agent), DeviceSource::UserAgent)
        }
    };
    let geolocation = match body.geolocation {
        Some(geo) => Geolocation::declared(geo.latitude, geo.longitude)
            .map_err(|err| ApiError::malformed(err.to_string()))?,
        None => Geolocation::unknown(),
    };
    let request = LoginRequest {
        user_id: body.user_id,
        credential,
        device_type,
        device_source,
        geolocation,
    };
    match blocking(&state, move |engine| engine.login(request)).await? {
        LoginOutcome::Granted(session) => {
            let token = state.issue_token(session.session_id().clone());
            Ok(Json(LoginResponse {
                session_id: session.session_id().clone(),
                status: session.status(),
                a1_method: session.a1_method(),
                token,
                device_type: session.device_type(),
                expires_at: session.expires_at(),
            }))
        }
        LoginOutcome::Denied {
            locked,
            remaining_attempts,
        } => {
            let mut err = ApiError::new(StatusCode::UNAUTHORIZED, "AUTH_DENIED", "authentication failed")
                .with_attempts(remaining_attempts);
            err.locked = Some(locked);
            Err(err)
        }
    }
}

async fn list_services(
    State(state): State<AppState>,
    Authenticated(session): Authenticated,
) -> Result<Json<Vec<ServiceView>>, ApiError> {
    let services = blocking(&state, move |engine| engine.list_services(&session)).await?;
    Ok(Json(services.iter().map(ServiceView::from).collect()))
}

async fn upgrade_service(
    State(state): State<AppState>,
    Authenticated(session): Authenticated,
    Path(service_id): Path<String>,
) -> Result<Json<ServiceView>, ApiError> {
    let service_id = ServiceId::new(service_id);
    let view = blocking(&state, move |engine| engine.upgrade_service(&session, &service_id)).await?;
    Ok(Json(ServiceView::from(&view)))
}

async fn initiate_transaction(
    State(state): State<AppState>,
    Authenticated(session): Authenticated,
    Body(body): Body<TransactionBody>,
) -> Result<Json<TransactionResponse>, ApiError> {
    let sid = session.clone();
    let outcome = blocking(&state, move |engine| {
        engine.initiate_transaction(&sid, &body.service_id, body.amount)
    })
    .await?;
    Ok(Json(match outcome {
        TransactionOutcome::Executed(record) => {
            let status = state
                .engine()
                .session(&session)
                .map_or(SessionStatus::Online, |s| s.status());
            TransactionResponse::Executed(Executed {
                executed: true,
                transaction_id: record.transaction_id,
                status,
            })
        }
        TransactionOutcome::StepUpRequired(step_up) => TransactionResponse::StepUp(StepUpRequired {
            step_up_required: true,
            service_id: step_up.challenge.service_id.clone(),
            expires_at: step_up.challenge.expires_at(),
            challenge: step_up.challenge.token,
            required_method: step_up.required_method,
        }),
    }))
}

async fn complete_step_up(
    State(state): State<AppState>,
    Authenticated(session): Authenticated,
    Body(body): Body<StepUpBody>,
) -> Result<Json<Executed>, ApiError> {
    let face = probe(Some(&body.face_probe_hex), "face_probe_hex", TemplateKind::Face)?;
    let outcome = blocking(&state, move |engine| {
        engine.complete_step_up(&session, &body.challenge, &face)
    })
    .await?;
    match outcome {
        StepUpOutcome::Executed { transaction, status } => Ok(Json(Executed {
            executed: true,
            transaction_id: transaction.transaction_id,
            status,
        })),
        StepUpOutcome::Denied {
            remaining_attempts,
            refused: false,
        } => Err(
            ApiError::new(StatusCode::FORBIDDEN, "STEP_UP_DENIED", "face verification failed")
                .with_attempts(remaining_attempts),
        ),
        StepUpOutcome::Denied { refused: true, .. } => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "TRANSACTION_REFUSED",
            "face verification failed too often; transaction refused",
        )
        .with_attempts(0)),
    }
}

async fn logout(
    State(state): State<AppState>,
    headers: HeaderMap,
    Authenticated(session): Authenticated,
) -> Result<Json<StatusOnly>, ApiError> {
    blocking(&state, move |engine| engine.logout(&session)).await?;
    if let Some(token) = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
    {
        state.tokens_mut().remove(token.trim());
    }
    Ok(Json(StatusOnly {
        status: SessionStatus::Offline,
    }))
}

async fn own_logs(
    State(state): State<AppState>,
    Authenticated(session): Authenticated,
    Params(query): Params<OwnLogsQuery>,
) -> Result<Json<Vec<LogView>>, ApiError> {
    let entries =
        blocking(&state, move |engine| engine.user_logs(&session, query.session_id.as_ref())).await?;
    Ok(Json(entries.iter().map(LogView::from).collect()))
}

async fn admin_enroll(
    State(state): State<AppState>,
    _admin: Admin,
    Body(spec): Body<EnrollmentSpec>,
) -> Result<impl IntoResponse, ApiError> {
    let summary = blocking(&state, move |engine| engine.enroll(&spec)).await?;
    Ok((StatusCode::CREATED, Json(EnrollmentView::from(summary))))
}

async fn admin_unlock(
    State(state): State<AppState>,
    _admin: Admin,
    Path(user_id): Path<String>,
) -> Result<Json<UserStatusView>, ApiError> {
    let user_id = UserId::new(user_id);
    let id = user_id.clone();
    blocking(&state, move |engine| engine.unlock_user(&id)).await?;
    Ok(Json(UserStatusView {
        user_id,
        status: iam_core::domain::UserStatus::Active,
    }))
}

async fn admin_logs(
    State(state): State<AppState>,
    _admin: Admin,
    Params(query): Params<AdminLogsQuery>,
) -> Result<Json<Vec<LogView>>, ApiError> {
    let filter = LogFilter {
        user_id: query.user_id,
        session_id: query.session_id,
        event: query.event,
        since: query.since,
        until: query.until,
    };
    let entries = blocking(&state, move |engine| Ok(engine.kb().query_logs(&filter))).await?;
    Ok(Json(entries.iter().map(LogView::from).collect()))
}
