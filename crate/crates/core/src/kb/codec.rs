//! Tab-separated record encoding.
//!
//! One record per line, fields joined by `\t`. Free text escapes `\\`, `\t`,
//! `\n` and `\r` with a backslash; absent optional fields are written as `-`.
//! Templates are 64 lower-case hex characters, timestamps RFC 3339 UTC.

use chrono::{DateTime, SecondsFormat, Utc};

use crate::domain::{
    Amount, BiometricTemplate, ClassifiedBy, DeviceBinding, DeviceId, DeviceType, EntryId,
    GeoSource, Geolocation, LogFields, NewLogEntry, Sensitivity, ServiceDefinition, ServiceId,
    SessionId, TemplateKind, TemplateRef, TransactionId, TransactionRecord, UserId,
    UserLogEntry, UserRecord, UserStatus,
};

pub(crate) const ABSENT: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct DecodeError(pub String);

impl<E: std::fmt::Display> From<E> for DecodeError {
    fn from(err: E) -> Self {
        DecodeError(err.to_string())
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(field: &str) -> Result<String, DecodeError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(DecodeError(format!("bad escape \\{other:?}"))),
        }
    }
    Ok(out)
}

pub(crate) fn timestamp(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_timestamp(field: &str) -> Result<DateTime<Utc>, DecodeError> {
    Ok(DateTime::parse_from_rfc3339(field)?.with_timezone(&Utc))
}

fn optional<T: ToString>(value: Option<T>) -> String {
    value.map_or_else(|| ABSENT.to_owned(), |v| v.to_string())
}

fn parse_optional<T>(
    field: &str,
    parse: impl FnOnce(&str) -> Result<T, DecodeError>,
) -> Result<Option<T>, DecodeError> {
    if field == ABSENT {
        Ok(None)
    } else {
        parse(field).map(Some)
    }
}

struct Fields<'a> {
    iter: std::str::Split<'a, char>,
    expected: usize,
    seen: usize,
}

impl<'a> Fields<'a> {
    fn new(line: &'a str, expected: usize) -> Self {
        Self {
            iter: line.split('\t'),
            expected,
            seen: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str, DecodeError> {
        self.seen += 1;
        self.iter.next().ok_or_else(|| {
            DecodeError(format!(
                "expected {} fields, found {}",
                self.expected,
                self.seen - 1
            ))
        })
    }

    fn finish(mut self) -> Result<(), DecodeError> {
        match self.iter.next() {
            None => Ok(()),
            Some(_) => Err(DecodeError(format!("more than {} fields", self.expected))),
        }
    }
}

pub(crate) fn encode_user(user: &UserRecord) -> String {
    let devices = if user.enrolled_devices.is_empty() {
        ABSENT.to_owned()
    } else {
        user.enrolled_devices
            .iter()
            .map(|d| {
                format!(
                    "{}/{}/{}",
                    d.device_id(),
                    d.device_type(),
                    optional(d.fingerprint_template_ref())
                )
            })
            .collect::<Vec<_>>()
            .join(",")
    };
    [
        user.user_id.to_string(),
        escape(&user.full_name),
        user.pin_digest.clone(),
        user.pin_salt.clone(),
        user.face_template_ref.to_string(),
        user.status.to_string(),
        devices,
    ]
    .join("\t")
}

pub(crate) fn decode_user(line: &str) -> Result<UserRecord, DecodeError> {
    let mut f = Fields::new(line, 7);
    let user_id = UserId::from(f.next()?);
    let full_name = unescape(f.next()?)?;
    let pin_digest = f.next()?.to_owned();
    let pin_salt = f.next()?.to_owned();
    let face_template_ref = TemplateRef::from(f.next()?);
    let status: UserStatus = f.next()?.parse()?;
    let devices_field = f.next()?;
    f.finish()?;
    let mut enrolled_devices = Vec::new();
    if devices_field != ABSENT {
        for item in devices_field.split(',') {
            let parts: Vec<&str> = item.split('/').collect();
            let [id, kind, fp] = parts[..] else {
                return Err(DecodeError(format!("bad device binding {item:?}")));
            };
            let device_type: DeviceType = kind.parse()?;
            let fp = parse_optional(fp, |s| Ok(TemplateRef::from(s)))?;
            enrolled_devices.push(DeviceBinding::new(DeviceId::from(id), device_type, fp)?);
        }
    }
    Ok(UserRecord {
        user_id,
        full_name,
        pin_digest,
        pin_salt,
        face_template_ref,
        enrolled_devices,
        status,
    })
}

pub(crate) fn encode_service(service: &ServiceDefinition) -> String {
    [
        service.service_id().to_string(),
        escape(service.name()),
        service.sensitivity().to_string(),
        service.classified_by().to_string(),
    ]
    .join("\t")
}

pub(crate) fn decode_service(line: &str) -> Result<ServiceDefinition, DecodeError> {
    let mut f = Fields::new(line, 4);
    let id = ServiceId::from(f.next()?);
    let name = unescape(f.next()?)?;
    let sensitivity: Sensitivity = f.next()?.parse()?;
    let classified_by: ClassifiedBy = f.next()?.parse()?;
    f.finish()?;
    Ok(ServiceDefinition::new(id, name, sensitivity, classified_by, None)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct OverlayRow {
    pub user_id: UserId,
    pub service_id: ServiceId,
    pub sensitivity: Sensitivity,
    pub upgraded_at: DateTime<Utc>,
}

pub(crate) fn encode_overlay(row: &OverlayRow) -> String {
    [
        row.user_id.to_string(),
        row.service_id.to_string(),
        row.sensitivity.to_string(),
        timestamp(row.upgraded_at),
    ]
    .join("\t")
}

pub(crate) fn decode_overlay(line: &str) -> Result<OverlayRow, DecodeError> {
    let mut f = Fields::new(line, 4);
    let row = OverlayRow {
        user_id: UserId::from(f.next()?),
        service_id: ServiceId::from(f.next()?),
        sensitivity: f.next()?.parse()?,
        upgraded_at: parse_timestamp(f.next()?)?,
    };
    f.finish()?;
    Ok(row)
}

pub(crate) fn encode_transaction(tx: &TransactionRecord) -> String {
    [
        tx.transaction_id.to_string(),
        tx.session_id.to_string(),
        tx.user_id.to_string(),
        tx.service_id.to_string(),
        optional(tx.amount),
        timestamp(tx.executed_at),
        tx.required_level.to_string(),
    ]
    .join("\t")
}

pub(crate) fn decode_transaction(line: &str) -> Result<TransactionRecord, DecodeError> {
    let mut f = Fields::new(line, 7);
    let tx = TransactionRecord {
        transaction_id: TransactionId::from(f.next()?),
        session_id: SessionId::from(f.next()?),
        user_id: UserId::from(f.next()?),
        service_id: ServiceId::from(f.next()?),
        amount: parse_optional(f.next()?, |s| Ok(s.parse::<Amount>()?))?,
        executed_at: parse_timestamp(f.next()?)?,
        required_level: f.next()?.parse()?,
    };
    f.finish()?;
    Ok(tx)
}

pub(crate) fn encode_log(entry: &UserLogEntry) -> String {
    let geo = entry.geolocation();
    [
        entry.entry_id().to_string(),
        optional(entry.session_id()),
        entry.user_id().to_string(),
        entry.event().to_string(),
        optional(entry.device_type()),
        entry.status().to_string(),
        optional(geo.latitude()),
        optional(geo.longitude()),
        geo.source().to_string(),
        entry.auth_method_used().to_string(),
        timestamp(entry.timestamp()),
        escape(entry.detail()),
    ]
    .join("\t")
}

pub(crate) fn decode_log(line: &str) -> Result<UserLogEntry, DecodeError> {
    let mut f = Fields::new(line, 12);
    let entry_id = EntryId::from(f.next()?);
    let session_id = parse_optional(f.next()?, |s| Ok(SessionId::from(s)))?;
    let user_id = UserId::from(f.next()?);
    let event = f.next()?.parse()?;
    let device_type = parse_optional(f.next()?, |s| Ok(s.parse::<DeviceType>()?))?;
    let status = f.next()?.parse()?;
    let latitude = parse_optional(f.next()?, |s| Ok(s.parse::<f64>()?))?;
    let longitude = parse_optional(f.next()?, |s| Ok(s.parse::<f64>()?))?;
    let source: GeoSource = f.next()?.parse()?;
    let auth_method_used = f.next()?.parse()?;
    let timestamp = parse_timestamp(f.next()?)?;
    let detail = unescape(f.next()?)?;
    f.finish()?;
    let geolocation = match (source, latitude, longitude) {
        (GeoSource::ClientDeclared, Some(lat), Some(lon)) => Geolocation::declared(lat, lon)?,
        (GeoSource::Unknown, None, None) => Geolocation::unknown(),
        _ => return Err(DecodeError("inconsistent geolocation fields".into())),
    };
    let draft = NewLogEntry::new(LogFields {
        session_id,
        user_id,
        event,
        device_type,
        status,
        geolocation,
        auth_method_used,
        timestamp,
        detail,
    })?;
    Ok(draft.into_entry(entry_id))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TemplateRow {
    pub template_ref: TemplateRef,
    pub owner: UserId,
    pub template: BiometricTemplate,
}

pub(crate) fn encode_template(row: &TemplateRow) -> String {
    [
        row.template_ref.to_string(),
        row.owner.to_string(),
        row.template.kind().to_string(),
        row.template.to_hex(),
    ]
    .join("\t")
}

pub(crate) fn decode_template(line: &str) -> Result<TemplateRow, DecodeError> {
    let mut f = Fields::new(line, 4);
    let template_ref = TemplateRef::from(f.next()?);
    let owner = UserId::from(f.next()?);
    let kind: TemplateKind = f.next()?.parse()?;
    let template = BiometricTemplate::from_hex(f.next()?, kind)?;
    f.finish()?;
    Ok(TemplateRow {
        template_ref,
        owner,
        template,
    })
}
