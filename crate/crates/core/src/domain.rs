//! Domain types shared by every other module.
//!
//! Everything here is an immutable value. State changes happen in
//! [`crate::engine`] and [`crate::kb`], which build new values through the
//! constructors below so that the invariants hold at every construction site.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of bits in every biometric template.
pub const TEMPLATE_BITS: usize = 256;
/// Number of bytes backing a template.
pub const TEMPLATE_BYTES: usize = TEMPLATE_BITS / 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("flag pair a1=0, a2=1 has no session status")]
    InvalidFlagPair,
    #[error("template must be {expected} bits, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("template hex is not valid hexadecimal")]
    MalformedHex,
    #[error("{0} devices cannot carry fingerprint credentials")]
    FingerprintOnFixedDevice(DeviceType),
    #[error("coordinates out of range: latitude {latitude}, longitude {longitude}")]
    CoordinatesOutOfRange { latitude: f64, longitude: f64 },
    #[error("{event} entries must record {expected}, got {actual}")]
    LogMethodMismatch {
        event: LogEvent,
        expected: &'static str,
        actual: AuthMethod,
    },
    #[error("user-classified services must name their owner")]
    MissingOwner,
    #[error("bank-classified services cannot have an owner")]
    UnexpectedOwner,
    #[error("malformed amount {0:?}")]
    MalformedAmount(String),
    #[error("unknown {kind} value {value:?}")]
    UnknownVariant { kind: &'static str, value: String },
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Self {
                Self(value.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self(value.to_owned())
            }
        }
    };
}

string_id!(
    /// Identifies an enrolled banking customer.
    UserId
);
string_id!(DeviceId);
string_id!(SessionId);
string_id!(ServiceId);
string_id!(TransactionId);
string_id!(EntryId);
string_id!(
    /// Opaque handle into either the cloud face store or a device-local
    /// fingerprint store.
    TemplateRef
);

/// Defines a closed enum with a stable lower-case wire name per variant,
/// used for both JSON and the tab-separated store files.
macro_rules! wire_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal { $($variant:ident => $wire:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $wire),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($wire => Ok($name::$variant),)+
                    other => Err(DomainError::UnknownVariant {
                        kind: $kind,
                        value: other.to_owned(),
                    }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

wire_enum!(
    DeviceType, "device type" {
        Smartphone => "smartphone",
        Tablet => "tablet",
        Desktop => "desktop",
        Laptop => "laptop",
    }
);

impl DeviceType {
    /// Only handheld devices have a fingerprint sensor and a local store.
    pub fn supports_fingerprint(self) -> bool {
        matches!(self, DeviceType::Smartphone | DeviceType::Tablet)
    }
}

wire_enum!(
    UserStatus, "user status" {
        Active => "active",
        Locked => "locked",
    }
);

wire_enum!(
    TemplateKind, "template kind" {
        Fingerprint => "fingerprint",
        Face => "face",
    }
);

wire_enum!(
    /// Sensitivity class of a banking service. `A1 < A2`.
    Sensitivity, "sensitivity" {
        A1 => "A1",
        A2 => "A2",
    }
);

impl PartialOrd for Sensitivity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Sensitivity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

wire_enum!(
    ClassifiedBy, "classification source" {
        Bank => "bank",
        User => "user",
    }
);

wire_enum!(
    /// How level one was granted on a session.
    A1Method, "a1 method" {
        Pin => "pin",
        Fingerprint => "fingerprint",
        None => "none",
    }
);

wire_enum!(
    /// Credential recorded on an audit entry.
    AuthMethod, "auth method" {
        Pin => "pin",
        Fingerprint => "fingerprint",
        Face => "face",
        None => "none",
    }
);

impl From<A1Method> for AuthMethod {
    fn from(method: A1Method) -> Self {
        match method {
            A1Method::Pin => AuthMethod::Pin,
            A1Method::Fingerprint => AuthMethod::Fingerprint,
            A1Method::None => AuthMethod::None,
        }
    }
}

wire_enum!(
    LogEvent, "log event" {
        A1Granted => "a1_granted",
        A1Denied => "a1_denied",
        A2Granted => "a2_granted",
        A2Denied => "a2_denied",
        Logout => "logout",
        Timeout => "timeout",
        Lockout => "lockout",
        ServiceUpgraded => "service_upgraded",
        TxExecuted => "tx_executed",
        TxRefused => "tx_refused",
    }
);

wire_enum!(
    GeoSource, "geolocation source" {
        ClientDeclared => "client_declared",
        Unknown => "unknown",
    }
);

/// Session status as the pair of access flags.
///
/// | status | A1 | A2 | meaning                               |
/// |--------|----|----|---------------------------------------|
/// | S-1    | 0  | 0  | offline                               |
/// | S-2    | 1  | 0  | online                                |
/// | S-3    | 1  | 1  | online and in sensitive mode          |
///
/// The pair `(0, 1)` has no variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionStatus {
    Offline,
    Online,
    Sensitive,
}

impl SessionStatus {
    pub const ALL: [SessionStatus; 3] = [
        SessionStatus::Offline,
        SessionStatus::Online,
        SessionStatus::Sensitive,
    ];

    pub fn a1(self) -> bool {
        !matches!(self, SessionStatus::Offline)
    }

    pub fn a2(self) -> bool {
        matches!(self, SessionStatus::Sensitive)
    }

    pub fn label(self) -> &'static str {
        match self {
            SessionStatus::Offline => "S-1",
            SessionStatus::Online => "S-2",
            SessionStatus::Sensitive => "S-3",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SessionStatus::Offline => "User is Offline",
            SessionStatus::Online => "User is Online",
            SessionStatus::Sensitive => "User is Online and in Sensitive Mode",
        }
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SessionStatus {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "S-1" => Ok(SessionStatus::Offline),
            "S-2" => Ok(SessionStatus::Online),
            "S-3" => Ok(SessionStatus::Sensitive),
            other => Err(DomainError::UnknownVariant {
                kind: "session status",
                value: other.to_owned(),
            }),
        }
    }
}

impl Serialize for SessionStatus {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for SessionStatus {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps an access-flag pair onto its status row.
pub fn classify_status(a1: bool, a2: bool) -> Result<SessionStatus, DomainError> {
    match (a1, a2) {
        (false, false) => Ok(SessionStatus::Offline),
        (true, false) => Ok(SessionStatus::Online),
        (true, true) => Ok(SessionStatus::Sensitive),
        (false, true) => Err(DomainError::InvalidFlagPair),
    }
}

/// A simulated biometric feature vector of [`TEMPLATE_BITS`] bits.
///
/// Bit `i` lives in byte `i / 8` at position `i % 8` (least significant first).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BiometricTemplate {
    bits: [u8; TEMPLATE_BYTES],
    kind: TemplateKind,
}

impl BiometricTemplate {
    pub fn from_bytes(bytes: &[u8], kind: TemplateKind) -> Result<Self, DomainError> {
        let bits: [u8; TEMPLATE_BYTES] =
            bytes.try_into().map_err(|_| DomainError::LengthMismatch {
                expected: TEMPLATE_BITS,
                actual: bytes.len() * 8,
            })?;
        Ok(Self { bits, kind })
    }

    pub fn from_hex(text: &str, kind: TemplateKind) -> Result<Self, DomainError> {
        if !text.len().is_multiple_of(2) {
            return Err(DomainError::MalformedHex);
        }
        let bytes = hex::decode(text).map_err(|_| DomainError::MalformedHex)?;
        Self::from_bytes(&bytes, kind)
    }

    pub(crate) fn from_array(bits: [u8; TEMPLATE_BYTES], kind: TemplateKind) -> Self {
        Self { bits, kind }
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn bytes(&self) -> &[u8; TEMPLATE_BYTES] {
        &self.bits
    }

    /// Lower-case hex, 64 characters.
    pub fn to_hex(&self) -> String {
        hex::encode(self.bits)
    }

    pub fn bit(&self, index: usize) -> bool {
        self.bits[index / 8] >> (index % 8) & 1 == 1
    }

    pub fn complement(&self) -> Self {
        let mut bits = self.bits;
        for byte in &mut bits {
            *byte = !*byte;
        }
        Self {
            bits,
            kind: self.kind,
        }
    }

    /// Returns a copy with each listed bit inverted.
    pub fn with_flipped(&self, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = self.bits;
        for i in indices {
            bits[i / 8] ^= 1 << (i % 8);
        }
        Self {
            bits,
            kind: self.kind,
        }
    }
}

// Template bits are credential material; keep them out of debug output.
impl fmt::Debug for BiometricTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BiometricTemplate")
            .field("kind", &self.kind)
            .field("bits", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceBinding {
    device_id: DeviceId,
    device_type: DeviceType,
    fingerprint_template_ref: Option<TemplateRef>,
}

impl DeviceBinding {
    pub fn new(
        device_id: DeviceId,
        device_type: DeviceType,
        fingerprint_template_ref: Option<TemplateRef>,
    ) -> Result<Self, DomainError> {
        if fingerprint_template_ref.is_some() && !device_type.supports_fingerprint() {
            return Err(DomainError::FingerprintOnFixedDevice(device_type));
        }
        Ok(Self {
            device_id,
            device_type,
            fingerprint_template_ref,
        })
    }

    pub fn device_id(&self) -> &DeviceId {
        &self.device_id
    }

    pub fn device_type(&self) -> DeviceType {
        self.device_type
    }

    pub fn fingerprint_template_ref(&self) -> Option<&TemplateRef> {
        self.fingerprint_template_ref.as_ref()
    }
}

/// A row of the user-details table.
#[derive(Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: UserId,
    pub full_name: String,
    /// Hex of the salted one-way digest. Never the PIN itself.
    pub pin_digest: String,
    pub pin_salt: String,
    pub face_template_ref: TemplateRef,
    pub enrolled_devices: Vec<DeviceBinding>,
    pub status: UserStatus,
}

impl UserRecord {
    pub fn device(&self, device_id: &DeviceId) -> Option<&DeviceBinding> {
        self.enrolled_devices
            .iter()
            .find(|binding| binding.device_id() == device_id)
    }
}

impl fmt::Debug for UserRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserRecord")
            .field("user_id", &self.user_id)
            .field("full_name", &self.full_name)
            .field("face_template_ref", &self.face_template_ref)
            .field("enrolled_devices", &self.enrolled_devices)
            .field("status", &self.status)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geolocation {
    coordinates: Option<(f64, f64)>,
    source: GeoSource,
}

impl Geolocation {
    pub fn declared(latitude: f64, longitude: f64) -> Result<Self, DomainError> {
        let in_range = (-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude);
        if !in_range {
            return Err(DomainError::CoordinatesOutOfRange {
                latitude,
                longitude,
            });
        }
        Ok(Self {
            coordinates: Some((latitude, longitude)),
            source: GeoSource::ClientDeclared,
        })
    }

    pub fn unknown() -> Self {
        Self {
            coordinates: None,
            source: GeoSource::Unknown,
        }
    }

    pub fn latitude(&self) -> Option<f64> {
        self.coordinates.map(|(lat, _)| lat)
    }

    pub fn longitude(&self) -> Option<f64> {
        self.coordinates.map(|(_, lon)| lon)
    }

    pub fn source(&self) -> GeoSource {
        self.source
    }
}

impl Default for Geolocation {
    fn default() -> Self {
        Self::unknown()
    }
}

/// Currency amount in integer minor units (cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(i64);

impl Amount {
    pub fn from_minor(minor: i64) -> Self {
        Self(minor)
    }

    pub fn minor_units(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Amount {
    type Err = DomainError;

    /// Accepts `"12"`, `"12.5"` and `"12.50"`; at most two fractional digits.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || DomainError::MalformedAmount(s.to_owned());
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        let digits = |part: &str| !part.is_empty() && part.bytes().all(|b| b.is_ascii_digit());
        if !digits(whole) || (body.contains('.') && !digits(frac)) || frac.len() > 2 {
            return Err(malformed());
        }
        let whole: i64 = whole.parse().map_err(|_| malformed())?;
        let frac: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().map_err(|_| malformed())? * 10,
            _ => frac.parse().map_err(|_| malformed())?,
        };
        let minor = whole
            .checked_mul(100)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(malformed)?;
        Ok(Self(if negative { -minor } else { minor }))
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Amount {
    /// Decimal text, or a JSON integer meaning whole currency units. Floating
    /// point numbers are refused.
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Whole(i64),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Text(text) => text.parse().map_err(serde::de::Error::custom),
            Raw::Whole(units) => units
                .checked_mul(100)
                .map(Amount)
                .ok_or_else(|| serde::de::Error::custom("amount out of range")),
        }
    }
}

/// Single-use credential binding a pending sensitive transaction to the face
/// verification it is waiting on.
#[derive(Clone, PartialEq, Eq)]
pub struct ChallengeToken {
    pub token: String,
    pub session_id: SessionId,
    pub service_id: ServiceId,
    pub issued_at: DateTime<Utc>,
    pub ttl_seconds: u64,
    pub consumed: bool,
}

impl ChallengeToken {
    pub fn expires_at(&self) -> DateTime<Utc> {
        self.issued_at + chrono::Duration::seconds(self.ttl_seconds as i64)
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now > self.expires_at()
    }
}

impl fmt::Debug for ChallengeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChallengeToken")
            .field("session_id", &self.session_id)
            .field("service_id", &self.service_id)
            .field("issued_at", &self.issued_at)
            .field("ttl_seconds", &self.ttl_seconds)
            .field("consumed", &self.consumed)
            .finish_non_exhaustive()
    }
}

/// A row of the bank-services table, or a user's upgraded view of one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceDefinition {
    service_id: ServiceId,
    name: String,
    sensitivity: Sensitivity,
    classified_by: ClassifiedBy,
    owner_user_id: Option<UserId>,
}

impl ServiceDefinition {
    pub fn bank(service_id: ServiceId, name: impl Into<String>, sensitivity: Sensitivity) -> Self {
        Self {
            service_id,
            name: name.into(),
            sensitivity,
            classified_by: ClassifiedBy::Bank,
            owner_user_id: None,
        }
    }

    pub fn new(
        service_id: ServiceId,
        name: impl Into<String>,
        sensitivity: Sensitivity,
        classified_by: ClassifiedBy,
        owner_user_id: Option<UserId>,
    ) -> Result<Self, DomainError> {
        match (classified_by, &owner_user_id) {
            (ClassifiedBy::User, None) => return Err(DomainError::MissingOwner),
            (ClassifiedBy::Bank, Some(_)) => return Err(DomainError::UnexpectedOwner),
            _ => {}
        }
        Ok(Self {
            service_id,
            name: name.into(),
            sensitivity,
            classified_by,
            owner_user_id,
        })
    }

    /// The same service as seen by `owner` after upgrading it to A2.
    pub fn upgraded_for(&self, owner: UserId) -> Self {
        Self {
            service_id: self.service_id.clone(),
            name: self.name.clone(),
            sensitivity: Sensitivity::A2,
            classified_by: ClassifiedBy::User,
            owner_user_id: Some(owner),
        }
    }

    pub fn service_id(&self) -> &ServiceId {
        &self.service_id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sensitivity(&self) -> Sensitivity {
        self.sensitivity
    }

    pub fn classified_by(&self) -> ClassifiedBy {
        self.classified_by
    }

    pub fn owner_user_id(&self) -> Option<&UserId> {
        self.owner_user_id.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransactionRecord {
    pub transaction_id: TransactionId,
    pub session_id: SessionId,
    pub user_id: UserId,
    pub service_id: ServiceId,
    pub amount: Option<Amount>,
    pub executed_at: DateTime<Utc>,
    pub required_level: Sensitivity,
}

/// An audit record before the knowledge base assigns its id.
#[derive(Debug, Clone, PartialEq)]
pub struct NewLogEntry {
    session_id: Option<SessionId>,
    user_id: UserId,
    event: LogEvent,
    device_type: Option<DeviceType>,
    status: SessionStatus,
    geolocation: Geolocation,
    auth_method_used: AuthMethod,
    timestamp: DateTime<Utc>,
    detail: String,
}

/// Arguments for [`NewLogEntry::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogFields {
    pub session_id: Option<SessionId>,
    pub user_id: UserId,
    pub event: LogEvent,
    pub device_type: Option<DeviceType>,
    /// Status of the session after the event.
    pub status: SessionStatus,
    pub geolocation: Geolocation,
    pub auth_method_used: AuthMethod,
    pub timestamp: DateTime<Utc>,
    pub detail: String,
}

impl NewLogEntry {
    pub fn new(fields: LogFields) -> Result<Self, DomainError> {
        let method = fields.auth_method_used;
        match fields.event {
            LogEvent::A1Granted if !matches!(method, AuthMethod::Pin | AuthMethod::Fingerprint) => {
                return Err(DomainError::LogMethodMismatch {
                    event: fields.event,
                    expected: "pin or fingerprint",
                    actual: method,
                });
            }
            LogEvent::A2Granted if method != AuthMethod::Face => {
                return Err(DomainError::LogMethodMismatch {
                    event: fields.event,
                    expected: "face",
                    actual: method,
                });
            }
            _ => {}
        }
        Ok(Self {
            session_id: fields.session_id,
            user_id: fields.user_id,
            event: fields.event,
            device_type: fields.device_type,
            status: fields.status,
            geolocation: fields.geolocation,
            auth_method_used: fields.auth_method_used,
            timestamp: fields.timestamp,
            detail: fields.detail,
        })
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn session_id(&self) -> Option<&SessionId> {
        self.session_id.as_ref()
    }

    pub fn event(&self) -> LogEvent {
        self.event
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }

    pub fn into_entry(self, entry_id: EntryId) -> UserLogEntry {
        UserLogEntry {
            entry_id,
            session_id: self.session_id,
            user_id: self.user_id,
            event: self.event,
            device_type: self.device_type,
            status: self.status,
            geolocation: self.geolocation,
            auth_method_used: self.auth_method_used,
            timestamp: self.timestamp,
            detail: self.detail,
        }
    }
}

/// A row of the append-only user-logs table.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLogEntry {
    entry_id: EntryId,
    session_id: Option<SessionId>,
    user_id: UserId,
    event: LogEvent,
    device_type: Option<DeviceType>,
    status: SessionStatus,
    geolocation: Geolocation,
    auth_method_used: AuthMethod,
    timestamp: DateTime<Utc>,
    detail: String,
}

impl UserLogEntry {
    pub fn entry_id(&self) -> &EntryId {
        &self.entry_id
    }

    pub fn session_id(&self) -> Option<&SessionId> {
        self.session_id.as_ref()
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn event(&self) -> LogEvent {
        self.event
    }

    pub fn device_type(&self) -> Option<DeviceType> {
        self.device_type
    }

    /// Status of the session right after this event.
    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn geolocation(&self) -> Geolocation {
        self.geolocation
    }

    pub fn auth_method_used(&self) -> AuthMethod {
        self.auth_method_used
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.timestamp
    }

    pub fn detail(&self) -> &str {
        &self.detail
    }
}

/// Live authentication context of one login.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    session_id: SessionId,
    user_id: UserId,
    status: SessionStatus,
    device_type: DeviceType,
    a1_method: A1Method,
    a1_timestamp: Option<DateTime<Utc>>,
    a2_timestamp: Option<DateTime<Utc>>,
    geolocation: Geolocation,
    created_at: DateTime<Utc>,
    expires_at: DateTime<Utc>,
    pending_challenge: Option<ChallengeToken>,
}

/// Arguments for [`Session::open`].
#[derive(Debug, Clone)]
pub struct SessionOpening {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub device_type: DeviceType,
    pub a1_method: A1Method,
    pub geolocation: Geolocation,
    pub now: DateTime<Utc>,
    pub ttl_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionTransitionError {
    #[error("fingerprint level-one access requires a smartphone or tablet, not a {0}")]
    FingerprintOnFixedDevice(DeviceType),
    #[error("level-one access needs a pin or fingerprint method")]
    MissingMethod,
    #[error("session is offline")]
    Offline,
    #[error("level-two grant at {a2} precedes level-one grant at {a1}")]
    NonIncreasingGrant { a1: DateTime<Utc>, a2: DateTime<Utc> },
}

impl Session {
    /// Grants level one: the new session is `S-2`.
    pub fn open(opening: SessionOpening) -> Result<Self, SessionTransitionError> {
        match opening.a1_method {
            A1Method::None => return Err(SessionTransitionError::MissingMethod),
            A1Method::Fingerprint if !opening.device_type.supports_fingerprint() => {
                return Err(SessionTransitionError::FingerprintOnFixedDevice(
                    opening.device_type,
                ));
            }
            _ => {}
        }
        Ok(Self {
            session_id: opening.session_id,
            user_id: opening.user_id,
            status: SessionStatus::Online,
            device_type: opening.device_type,
            a1_method: opening.a1_method,
            a1_timestamp: Some(opening.now),
            a2_timestamp: None,
            geolocation: opening.geolocation,
            created_at: opening.now,
            expires_at: opening.now + chrono::Duration::seconds(opening.ttl_seconds as i64),
            pending_challenge: None,
        })
    }

    /// `S-2 -> S-3`. The level-two instant may not precede level one.
    pub fn grant_a2(&mut self, now: DateTime<Utc>) -> Result<(), SessionTransitionError> {
        let a1 = match (self.status, self.a1_timestamp) {
            (SessionStatus::Offline, _) | (_, None) => return Err(SessionTransitionError::Offline),
            (_, Some(a1)) => a1,
        };
        if now < a1 {
            return Err(SessionTransitionError::NonIncreasingGrant { a1, a2: now });
        }
        self.status = SessionStatus::Sensitive;
        self.a2_timestamp = Some(now);
        Ok(())
    }

    /// `S-3 -> S-2`; a no-op in other states.
    pub fn leave_sensitive_mode(&mut self) {
        if self.status == SessionStatus::Sensitive {
            self.status = SessionStatus::Online;
            self.a2_timestamp = None;
        }
    }

    /// Clears both flags at once: any status becomes `S-1`.
    pub fn close(&mut self) {
        self.status = SessionStatus::Offline;
        self.a1_timestamp = None;
        self.a2_timestamp = None;
        self.pending_challenge = None;
    }

    pub fn set_pending_challenge(&mut self, challenge: Option<ChallengeToken>) {
        self.pending_challenge = challenge;
    }

    pub fn pending_challenge_mut(&mut self) -> Option<&mut ChallengeToken> {
        self.pending_challenge.as_mut()
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn device_type(&self) -> DeviceType {
        self.device_type
    }

    pub fn a1_method(&self) -> A1Method {
        self.a1_method
    }

    pub fn a1_timestamp(&self) -> Option<DateTime<Utc>> {
        self.a1_timestamp
    }

    pub fn a2_timestamp(&self) -> Option<DateTime<Utc>> {
        self.a2_timestamp
    }

    pub fn geolocation(&self) -> Geolocation {
        self.geolocation
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn expires_at(&self) -> DateTime<Utc> {
        self.expires_at
    }

    pub fn pending_challenge(&self) -> Option<&ChallengeToken> {
        self.pending_challenge.as_ref()
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now > self.expires_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 5, 9, 0, 0).unwrap()
    }

    #[test]
    fn status_table_rows() {
        let rows = [
            (false, false, "S-1", "User is Offline"),
            (true, false, "S-2", "User is Online"),
            (true, true, "S-3", "User is Online and in Sensitive Mode"),
        ];
        for (a1, a2, label, description) in rows {
            let status = classify_status(a1, a2).unwrap();
            assert_eq!(status.label(), label);
            assert_eq!(status.description(), description);
            assert_eq!((status.a1(), status.a2()), (a1, a2));
        }
        assert_eq!(classify_status(false, true), Err(DomainError::InvalidFlagPair));
    }

    #[test]
    fn every_status_round_trips_through_its_flags() {
        for status in SessionStatus::ALL {
            assert_eq!(classify_status(status.a1(), status.a2()), Ok(status));
            assert_eq!(status.label().parse::<SessionStatus>(), Ok(status));
        }
    }

    #[test]
    fn template_hex_round_trip_and_length_check() {
        let t = BiometricTemplate::from_array([0xa5; TEMPLATE_BYTES], TemplateKind::Face);
        let hex = t.to_hex();
        assert_eq!(hex.len(), 64);
        assert_eq!(BiometricTemplate::from_hex(&hex, TemplateKind::Face).unwrap(), t);
        assert_eq!(
            BiometricTemplate::from_hex("abcd", TemplateKind::Face),
            Err(DomainError::LengthMismatch {
                expected: 256,
                actual: 16
            })
        );
        assert_eq!(
            BiometricTemplate::from_hex("zz", TemplateKind::Face),
            Err(DomainError::MalformedHex)
        );
    }

    #[test]
    fn desktop_binding_cannot_hold_fingerprint() {
        let err = DeviceBinding::new(
            DeviceId::from("pc"),
            DeviceType::Desktop,
            Some(TemplateRef::from("fp-1")),
        )
        .unwrap_err();
        assert_eq!(err, DomainError::FingerprintOnFixedDevice(DeviceType::Desktop));
        assert!(DeviceBinding::new(DeviceId::from("pc"), DeviceType::Laptop, None).is_ok());
        assert!(DeviceBinding::new(
            DeviceId::from("ph"),
            DeviceType::Tablet,
            Some(TemplateRef::from("fp-1"))
        )
        .is_ok());
    }

    #[test]
    fn geolocation_bounds() {
        assert!(Geolocation::declared(90.0, -180.0).is_ok());
        assert!(Geolocation::declared(90.5, 0.0).is_err());
        assert!(Geolocation::declared(0.0, 181.0).is_err());
        assert!(Geolocation::declared(f64::NAN, 0.0).is_err());
        let unknown = Geolocation::unknown();
        assert_eq!(unknown.latitude(), None);
        assert_eq!(unknown.source(), GeoSource::Unknown);
    }

    #[test]
    fn amounts_parse_exactly() {
        assert_eq!("12".parse::<Amount>().unwrap().minor_units(), 1200);
        assert_eq!("12.5".parse::<Amount>().unwrap().minor_units(), 1250);
        assert_eq!("0.07".parse::<Amount>().unwrap().minor_units(), 7);
        assert_eq!("-3.10".parse::<Amount>().unwrap().to_string(), "-3.10");
        for bad in ["", "1.", ".5", "1.234", "1e3", "abc"] {
            assert!(bad.parse::<Amount>().is_err(), "{bad}");
        }
        let json: Amount = serde_json_like("\"250.75\"");
        assert_eq!(json.minor_units(), 25075);
    }

    fn serde_json_like(text: &str) -> Amount {
        // toml has no bare values; wrap in a table to exercise the serde path
        #[derive(Deserialize)]
        struct Wrap {
            amount: Amount,
        }
        let wrap: Wrap = toml::from_str(&format!("amount = {text}")).unwrap();
        wrap.amount
    }

    #[test]
    fn log_entries_enforce_method_per_event() {
        let fields = |event, method| LogFields {
            session_id: None,
            user_id: UserId::from("u"),
            event,
            device_type: Some(DeviceType::Desktop),
            status: SessionStatus::Online,
            geolocation: Geolocation::unknown(),
            auth_method_used: method,
            timestamp: t0(),
            detail: String::new(),
        };
        assert!(NewLogEntry::new(fields(LogEvent::A1Granted, AuthMethod::Pin)).is_ok());
        assert!(NewLogEntry::new(fields(LogEvent::A1Granted, AuthMethod::Fingerprint)).is_ok());
        assert!(NewLogEntry::new(fields(LogEvent::A1Granted, AuthMethod::Face)).is_err());
        assert!(NewLogEntry::new(fields(LogEvent::A2Granted, AuthMethod::Face)).is_ok());
        assert!(NewLogEntry::new(fields(LogEvent::A2Granted, AuthMethod::Pin)).is_err());
    }

    fn opening(method: A1Method, device_type: DeviceType) -> SessionOpening {
        SessionOpening {
            session_id: SessionId::from("s"),
            user_id: UserId::from("u"),
            device_type,
            a1_method: method,
            geolocation: Geolocation::unknown(),
            now: t0(),
            ttl_seconds: 600,
        }
    }

    #[test]
    fn session_transitions_keep_flags_and_timestamps_consistent() {
        assert_eq!(
            Session::open(opening(A1Method::Fingerprint, DeviceType::Laptop)).unwrap_err(),
            SessionTransitionError::FingerprintOnFixedDevice(DeviceType::Laptop)
        );
        assert_eq!(
            Session::open(opening(A1Method::None, DeviceType::Laptop)).unwrap_err(),
            SessionTransitionError::MissingMethod
        );

        let mut session = Session::open(opening(A1Method::Pin, DeviceType::Desktop)).unwrap();
        assert_eq!(session.status(), SessionStatus::Online);
        assert_eq!(session.a1_timestamp(), Some(t0()));
        assert!(session.grant_a2(t0() - chrono::Duration::seconds(1)).is_err());

        let later = t0() + chrono::Duration::seconds(1);
        session.grant_a2(later).unwrap();
        assert_eq!(session.status(), SessionStatus::Sensitive);
        assert_eq!(session.a2_timestamp(), Some(later));

        session.leave_sensitive_mode();
        assert_eq!(session.status(), SessionStatus::Online);
        assert_eq!(session.a2_timestamp(), None);

        session.grant_a2(later).unwrap();
        session.close();
        assert_eq!(session.status(), SessionStatus::Offline);
        assert_eq!((session.a1_timestamp(), session.a2_timestamp()), (None, None));
        assert_eq!(session.grant_a2(later), Err(SessionTransitionError::Offline));
    }

    #[test]
    fn sensitivity_orders_a1_below_a2() {
        assert!(Sensitivity::A1 < Sensitivity::A2);
        assert_eq!(Sensitivity::A1.max(Sensitivity::A2), Sensitivity::A2);
    }

    #[test]
    fn user_service_rows_need_an_owner() {
        let id = ServiceId::from("bill");
        assert_eq!(
            ServiceDefinition::new(id.clone(), "Bill", Sensitivity::A2, ClassifiedBy::User, None),
            Err(DomainError::MissingOwner)
        );
        let bank = ServiceDefinition::bank(id, "Bill", Sensitivity::A1);
        let view = bank.upgraded_for(UserId::from("u"));
        assert_eq!(view.sensitivity(), Sensitivity::A2);
        assert_eq!(view.classified_by(), ClassifiedBy::User);
        assert_eq!(view.owner_user_id(), Some(&UserId::from("u")));
    }
}
