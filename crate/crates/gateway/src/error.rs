//! Error mapping. Every engine and knowledge-base error has exactly one code.
//!
//! | code                      | status | raised by |
//! |---------------------------|--------|-----------|
//! | `AUTH_DENIED`             | 401    | wrong PIN or fingerprint |
//! | `NOT_AUTHENTICATED`       | 401    | missing or unknown bearer token |
//! | `SESSION_EXPIRED`         | 401    | session logged out or timed out |
//! | `UNKNOWN_SESSION`         | 401    | logout of a closed session |
//! | `DEVICE_METHOD_VIOLATION` | 403    | fingerprint on desktop/laptop |
//! | `UNKNOWN_DEVICE`          | 403    | fingerprint from a device without a binding |
//! | `USER_LOCKED`             | 403    | locked account |
//! | `PARTITION_VIOLATION`     | 403    | template routed to the wrong store |
//! | `STEP_UP_DENIED`          | 403    | face did not match |
//! | `TRANSACTION_REFUSED`     | 403    | face failures reached the cap |
//! | `ADMIN_FORBIDDEN`         | 403    | admin token missing, wrong or not configured |
//! | `UNKNOWN_USER`            | 404    | no such user |
//! | `UNKNOWN_SERVICE`         | 404    | no such service |
//! | `UNKNOWN_ROUTE`           | 404    | no such endpoint (includes any downgrade path) |
//! | `METHOD_NOT_ALLOWED`      | 405    | wrong verb |
//! | `CHALLENGE_PENDING`       | 409    | second sensitive initiation while one waits |
//! | `CHALLENGE_EXPIRED`       | 409    | challenge past its TTL |
//! | `CHALLENGE_CONSUMED`      | 409    | challenge already used |
//! | `CHALLENGE_MISMATCH`      | 409    | challenge unknown or bound to another session |
//! | `ALREADY_A2`              | 409    | upgrade of a service that already needs A2 |
//! | `DUPLICATE_USER`          | 409    | enrollment of an existing user |
//! | `SENSITIVITY_DOWNGRADE`   | 409    | lowering a bank A2 service |
//! | `MALFORMED_BODY`          | 422    | unparsable or invalid request body |
//! | `STORAGE_ERROR`           | 500    | I/O, corrupt files, broken references |

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use iam_core::enrollment::EnrollmentError;
use iam_core::{EngineError, KbError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    pub code: &'static str,
    pub http_status: u16,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remaining_attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub locked: Option<bool>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            http_status: status.as_u16(),
            message: message.into(),
            remaining_attempts: None,
            locked: None,
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "MALFORMED_BODY", message)
    }

    pub fn not_authenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "NOT_AUTHENTICATED", "a valid bearer token is required")
    }

    pub fn with_attempts(mut self, remaining: u32) -> Self {
        self.remaining_attempts = Some(remaining);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<KbError> for ApiError {
    fn from(err: KbError) -> Self {
        use StatusCode as S;
        let (status, code) = match &err {
            KbError::PartitionViolation { .. } => (S::FORBIDDEN, "PARTITION_VIOLATION"),
            KbError::UnknownUser(_) => (S::NOT_FOUND, "UNKNOWN_USER"),
            KbError::UnknownService(_) => (S::NOT_FOUND, "UNKNOWN_SERVICE"),
            KbError::DuplicateUser(_) => (S::CONFLICT, "DUPLICATE_USER"),
            KbError::SensitivityDowngrade(_) => (S::CONFLICT, "SENSITIVITY_DOWNGRADE"),
            KbError::AlreadyA2 { .. } => (S::CONFLICT, "ALREADY_A2"),
            KbError::InvalidIdentifier(_) | KbError::Domain(_) => (S::UNPROCESSABLE_ENTITY, "MALFORMED_BODY"),
            KbError::NotFound(_)
            | KbError::DuplicateTransaction(_)
            | KbError::IntegrityViolation(_)
            | KbError::Corrupt { .. }
            | KbError::Io(_) => {
                tracing::error!(error = %err, "storage failure");
                return Self::new(S::INTERNAL_SERVER_ERROR, "STORAGE_ERROR", "storage error");
            }
        };
        Self::new(status, code, err.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        use StatusCode as S;
        let err = match err {
            EngineError::Kb(kb) | EngineError::Enrollment(EnrollmentError::Kb(kb)) => return kb.into(),
            other => other,
        };
        let (status, code) = match &err {
            EngineError::UnknownUser(_) => (S::NOT_FOUND, "UNKNOWN_USER"),
            EngineError::UserLocked(_) => (S::FORBIDDEN, "USER_LOCKED"),
            EngineError::DeviceMethodViolation(_) => (S::FORBIDDEN, "DEVICE_METHOD_VIOLATION"),
            EngineError::UnknownDevice(_) => (S::FORBIDDEN, "UNKNOWN_DEVICE"),
            EngineError::SessionExpired => (S::UNAUTHORIZED, "SESSION_EXPIRED"),
            EngineError::NotAuthenticated => (S::UNAUTHORIZED, "NOT_AUTHENTICATED"),
            EngineError::UnknownSession => (S::UNAUTHORIZED, "UNKNOWN_SESSION"),
            EngineError::UnknownService(_) => (S::NOT_FOUND, "UNKNOWN_SERVICE"),
            EngineError::ChallengePending => (S::CONFLICT, "CHALLENGE_PENDING"),
            EngineError::ChallengeExpired => (S::CONFLICT, "CHALLENGE_EXPIRED"),
            EngineError::ChallengeConsumed => (S::CONFLICT, "CHALLENGE_CONSUMED"),
            EngineError::ChallengeMismatch => (S::CONFLICT, "CHALLENGE_MISMATCH"),
            EngineError::AlreadyA2(_) => (S::CONFLICT, "ALREADY_A2"),
            EngineError::ProbeKind { .. } => (S::UNPROCESSABLE_ENTITY, "MALFORMED_BODY"),
            EngineError::Enrollment(EnrollmentError::DuplicateUser(_)) => (S::CONFLICT, "DUPLICATE_USER"),
            EngineError::Enrollment(
                EnrollmentError::DuplicateDevice(_) | EnrollmentError::EmptyName | EnrollmentError::Pin(_),
            ) => (S::UNPROCESSABLE_ENTITY, "MALFORMED_BODY"),
            EngineError::Enrollment(EnrollmentError::Kb(_)) | EngineError::Kb(_) => {
                unreachable!("handled above")
            }
        };
        Self::new(status, code, err.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use iam_core::domain::{DeviceType, ServiceId, UserId};

    #[test]
    fn codes_and_statuses() {
        let cases: Vec<(EngineError, u16, &str)> = vec![
            (EngineError::DeviceMethodViolation(DeviceType::Laptop), 403, "DEVICE_METHOD_VIOLATION"),
            (EngineError::UserLocked(UserId::from("a")), 403, "USER_LOCKED"),
            (EngineError::SessionExpired, 401, "SESSION_EXPIRED"),
            (EngineError::ChallengeConsumed, 409, "CHALLENGE_CONSUMED"),
            (EngineError::AlreadyA2(ServiceId::from("x")), 409, "ALREADY_A2"),
            (EngineError::Kb(KbError::Io(std::io::Error::other("disk"))), 500, "STORAGE_ERROR"),
            (
                EngineError::Enrollment(EnrollmentError::DuplicateUser(UserId::from("a"))),
                409,
                "DUPLICATE_USER",
            ),
        ];
        for (err, status, code) in cases {
            let api = ApiError::from(err);
            assert_eq!((api.http_status, api.code), (status, code));
        }
    }

    #[test]
    fn storage_errors_do_not_leak_detail() {
        let api = ApiError::from(KbError::Io(std::io::Error::other("/secret/path")));
        assert_eq!(api.message, "storage error");
    }
}
