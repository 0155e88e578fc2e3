//! Request and response bodies.

use chrono::{DateTime, SecondsFormat, Utc};
use iam_core::domain::{
    A1Method, Amount, AuthMethod, ClassifiedBy, DeviceId, DeviceType, GeoSource, LogEvent,
    Sensitivity, ServiceDefinition, ServiceId, SessionId, SessionStatus, TemplateRef,
    TransactionId, UserId, UserLogEntry, UserStatus,
};
use iam_core::enrollment::EnrollmentSummary;
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginBody {
    pub user_id: UserId,
    pub method: A1Method,
    pub pin: Option<String>,
    pub fingerprint_probe_hex: Option<String>,
    pub device_id: Option<DeviceId>,
    pub device_type: Option<DeviceType>,
    pub geolocation: Option<GeoBody>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeoBody {
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Serialize)]
pub struct LoginResponse {
    pub session_id: SessionId,
    pub status: SessionStatus,
    pub a1_method: A1Method,
    /// Bearer credential for later requests.
    pub token: String,
    pub device_type: DeviceType,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Serialize)]
pub struct ServiceView {
    pub service_id: ServiceId,
    pub name: String,
    pub sensitivity: Sensitivity,
    pub classified_by: ClassifiedBy,
}

impl From<&ServiceDefinition> for ServiceView {
    fn from(service: &ServiceDefinition) -> Self {
        Self {
            service_id: service.service_id().clone(),
            name: service.name().to_owned(),
            sensitivity: service.sensitivity(),
            classified_by: service.classified_by(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionBody {
    pub service_id: ServiceId,
    pub amount: Option<Amount>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
pub enum TransactionResponse {
    Executed(Executed),
    StepUp(StepUpRequired),
}

#[derive(Debug, Serialize)]
pub struct Executed {
    pub executed: bool,
    pub transaction_id: TransactionId,
    pub status: SessionStatus,
}

#[derive(Debug, Serialize)]
pub struct StepUpRequired {
    pub step_up_required: bool,
    pub challenge: String,
    pub required_method: AuthMethod,
    pub service_id: ServiceId,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepUpBody {
    pub challenge: String,
    pub face_probe_hex: String,
}

#[derive(Debug, Serialize)]
pub struct StatusOnly {
    pub status: SessionStatus,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnLogsQuery {
    pub session_id: Option<SessionId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminLogsQuery {
    pub user_id: Option<UserId>,
    pub session_id: Option<SessionId>,
    pub event: Option<LogEvent>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

#[derive(Debug, Serialize)]
pub struct GeoView {
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub source: GeoSource,
}

#[derive(Debug, Serialize)]
pub struct LogView {
    pub entry_id: String,
    pub session_id: Option<SessionId>,
    pub user_id: UserId,
    pub event: LogEvent,
    pub device_type: Option<DeviceType>,
    pub status: SessionStatus,
    pub geolocation: GeoView,
    pub auth_method_used: AuthMethod,
    pub timestamp: String,
    pub detail: String,
}

impl From<&UserLogEntry> for LogView {
    fn from(entry: &UserLogEntry) -> Self {
        let geo = entry.geolocation();
        Self {
            entry_id: entry.entry_id().to_string(),
            session_id: entry.session_id().cloned(),
            user_id: entry.user_id().clone(),
            event: entry.event(),
            device_type: entry.device_type(),
            status: entry.status(),
            geolocation: GeoView {
                latitude: geo.latitude(),
                longitude: geo.longitude(),
                source: geo.source(),
            },
            auth_method_used: entry.auth_method_used(),
            timestamp: entry.timestamp().to_rfc3339_opts(SecondsFormat::AutoSi, true),
            detail: entry.detail().to_owned(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FingerprintRefView {
    pub device_id: DeviceId,
    pub template_ref: TemplateRef,
}

#[derive(Debug, Serialize)]
pub struct EnrollmentView {
    pub user_id: UserId,
    pub face_template_ref: TemplateRef,
    pub fingerprint_refs: Vec<FingerprintRefView>,
}

impl From<EnrollmentSummary> for EnrollmentView {
    fn from(summary: EnrollmentSummary) -> Self {
        Self {
            user_id: summary.user_id,
            face_template_ref: summary.face_template_ref,
            fingerprint_refs: summary
                .fingerprint_refs
                .into_iter()
                .map(|(device_id, template_ref)| FingerprintRefView {
                    device_id,
                    template_ref,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct UserStatusView {
    pub user_id: UserId,
    pub status: UserStatus,
}
