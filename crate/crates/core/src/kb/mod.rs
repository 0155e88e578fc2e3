//! The internet-banking knowledge base: user-details, bank-services,
//! transactions and user-logs tables, plus the cloud face store and one
//! fingerprint store per handheld device.
//!
//! The central guarantee is the storage partition: fingerprint templates
//! only ever land in a device-local store and face templates only in the
//! cloud store. PIN digests live in the user-details table; raw PINs are
//! never handed to this module at all.
//!
//! Tables live in memory behind a lock. When opened on a directory, every
//! write is also persisted (see [`files`] for the layout and [`codec`] for
//! the record encoding) before the in-memory state changes.

mod codec;
mod files;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::domain::{
    Amount, BiometricTemplate, ClassifiedBy, DeviceId, DomainError, EntryId, LogEvent,
    NewLogEntry, Sensitivity, ServiceDefinition, ServiceId, SessionId, TemplateKind,
    TemplateRef, TransactionId, TransactionRecord, UserId, UserLogEntry, UserRecord, UserStatus,
};
use codec::{OverlayRow, TemplateRow};
use files::{CommitLock, FileStore, Table, Target};

/// Which namespace holds a biometric template.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StoreLocation {
    CloudKb,
    DeviceLocal(DeviceId),
}

impl fmt::Display for StoreLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreLocation::CloudKb => f.write_str("cloud_kb"),
            StoreLocation::DeviceLocal(device) => write!(f, "device_local({device})"),
        }
    }
}

/// A reference that failed to resolve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DanglingRef {
    User(UserId),
    Service(ServiceId),
    Session(SessionId),
    Template(TemplateRef),
}

impl fmt::Display for DanglingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DanglingRef::User(id) => write!(f, "user_id {id}"),
            DanglingRef::Service(id) => write!(f, "service_id {id}"),
            DanglingRef::Session(id) => write!(f, "session_id {id}"),
            DanglingRef::Template(id) => write!(f, "template_ref {id}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{kind} templates may not be stored in {location}")]
    PartitionViolation {
        kind: TemplateKind,
        location: StoreLocation,
    },
    #[error("template {0} not found")]
    NotFound(TemplateRef),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("user {0} is already enrolled")]
    DuplicateUser(UserId),
    #[error("transaction {0} already recorded")]
    DuplicateTransaction(TransactionId),
    #[error("dangling reference: {0}")]
    IntegrityViolation(DanglingRef),
    #[error("service {0} is classified A2 by the bank and cannot be lowered to A1 (sensitivity is monotone: A1 < A2)")]
    SensitivityDowngrade(ServiceId),
    #[error("service {service_id} already resolves to A2 for user {user_id}")]
    AlreadyA2 {
        user_id: UserId,
        service_id: ServiceId,
    },
    #[error("invalid identifier {0:?}: use 1-64 characters from [A-Za-z0-9._-], starting alphanumeric")]
    InvalidIdentifier(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("corrupt record in {file} line {line}: {reason}")]
    Corrupt {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("storage I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Identifiers end up in file paths and tab-separated rows.
pub fn validate_identifier(id: &str) -> Result<(), KbError> {
    let ok = (1..=64).contains(&id.len())
        && id.as_bytes()[0].is_ascii_alphanumeric()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(KbError::InvalidIdentifier(id.to_owned()))
    }
}

/// A transaction as handed to the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewTransaction {
    pub transaction_id: TransactionId,
    pub session_id: SessionId,
    pub user_id: UserId,
    pub service_id: ServiceId,
    pub amount: Option<Amount>,
    pub executed_at: DateTime<Utc>,
    pub required_level: Sensitivity,
}

/// One element of an all-or-nothing [`KnowledgeBase::commit`].
#[derive(Debug, Clone)]
pub enum Mutation {
    AppendLog(NewLogEntry),
    RecordTransaction(NewTransaction),
    SetUserStatus(UserId, UserStatus),
    /// Raise `service_id` to A2 in `user_id`'s view.
    AddOverlay {
        user_id: UserId,
        service_id: ServiceId,
        at: DateTime<Utc>,
    },
}

/// Result of each [`Mutation`], in batch order.
#[derive(Debug, Clone, PartialEq)]
pub enum Committed {
    Log(EntryId),
    Transaction(TransactionRecord),
    UserStatus,
    Overlay(ServiceDefinition),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogFilter {
    pub user_id: Option<UserId>,
    pub session_id: Option<SessionId>,
    pub event: Option<LogEvent>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl LogFilter {
    fn accepts(&self, entry: &UserLogEntry) -> bool {
        self.user_id.as_ref().is_none_or(|u| entry.user_id() == u)
            && self
                .session_id
                .as_ref()
                .is_none_or(|s| entry.session_id() == Some(s))
            && self.event.is_none_or(|e| entry.event() == e)
            && self.since.is_none_or(|t| entry.timestamp() >= t)
            && self.until.is_none_or(|t| entry.timestamp() <= t)
    }
}

/// Copy of the four tables, for comparisons and replay checks.
#[derive(Debug, Clone, PartialEq)]
pub struct KbSnapshot {
    pub user_details: Vec<UserRecord>,
    pub bank_services: Vec<ServiceDefinition>,
    /// Per-user upgraded views layered over `bank_services`.
    pub overlays: Vec<ServiceDefinition>,
    pub transactions: Vec<TransactionRecord>,
    pub user_logs: Vec<UserLogEntry>,
}

#[derive(Debug, Clone, Default)]
struct Tables {
    users: BTreeMap<UserId, UserRecord>,
    services: BTreeMap<ServiceId, ServiceDefinition>,
    overlays: Vec<OverlayRow>,
    transactions: Vec<TransactionRecord>,
    logs: Vec<UserLogEntry>,
    faces: BTreeMap<TemplateRef, TemplateRow>,
    device_stores: BTreeMap<DeviceId, BTreeMap<TemplateRef, TemplateRow>>,
    template_index: HashMap<TemplateRef, StoreLocation>,
    /// Sessions opened by an `a1_granted` entry, with their owner.
    sessions: HashMap<SessionId, UserId>,
    transaction_ids: HashSet<TransactionId>,
    /// Value of the on-disk generation marker these tables reflect.
    generation: u64,
}

impl Tables {
    fn user(&self, id: &UserId) -> Result<&UserRecord, KbError> {
        self.users
            .get(id)
            .ok_or_else(|| KbError::UnknownUser(id.clone()))
    }

    fn service(&self, id: &ServiceId) -> Result<&ServiceDefinition, KbError> {
        self.services
            .get(id)
            .ok_or_else(|| KbError::UnknownService(id.clone()))
    }

    fn has_overlay(&self, user: &UserId, service: &ServiceId) -> bool {
        self.overlays
            .iter()
            .any(|o| &o.user_id == user && &o.service_id == service)
    }

    fn resolve(&self, user: &UserId, service: &ServiceId) -> Result<Sensitivity, KbError> {
        self.user(user)?;
        let bank = self.service(service)?.sensitivity();
        let overlay = self
            .overlays
            .iter()
            .filter(|o| &o.user_id == user && &o.service_id == service)
            .map(|o| o.sensitivity)
            .max();
        Ok(overlay.map_or(bank, |o| bank.max(o)))
    }

    fn template_count(&self) -> usize {
        self.template_index.len()
    }

    fn view(&self, user: &UserId, service: &ServiceDefinition) -> ServiceDefinition {
        if service.sensitivity() == Sensitivity::A1 && self.has_overlay(user, service.service_id()) {
            service.upgraded_for(user.clone())
        } else {
            service.clone()
        }
    }
}

pub struct KnowledgeBase {
    tables: RwLock<Tables>,
    files: Option<FileStore>,
}

impl fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnowledgeBase")
            .field("root", &self.files.as_ref().map(FileStore::root))
            .finish_non_exhaustive()
    }
}

fn corrupt(target: &Target, line: usize, reason: impl fmt::Display) -> KbError {
    let file = match target {
        Target::Cloud(table) => format!("{table:?}"),
        Target::Device(device) => format!("devices/{device}"),
    };
    KbError::Corrupt {
        file,
        line: line + 1,
        reason: reason.to_string(),
    }
}

/// Replays every persisted file. The caller holds the commit lock.
fn load(store: &FileStore) -> Result<Tables, KbError> {
    let mut tables = Tables {
        generation: store.read_generation()?,
        ..Tables::default()
    };

    let load = |table: Table| -> Result<Vec<(usize, String)>, KbError> {
        Ok(store
            .read_lines(&Target::Cloud(table))?
            .into_iter()
            .enumerate()
            .collect())
    };

    let faces_target = Target::Cloud(Table::Faces);
    for (n, line) in load(Table::Faces)? {
        let row = codec::decode_template(&line).map_err(|e| corrupt(&faces_target, n, e.0))?;
        if row.template.kind() != TemplateKind::Face {
            return Err(corrupt(&faces_target, n, "non-face template in cloud store"));
        }
        tables
            .template_index
            .insert(row.template_ref.clone(), StoreLocation::CloudKb);
        tables.faces.insert(row.template_ref.clone(), row);
    }
    for device in store.device_ids()? {
        let target = Target::Device(device.clone());
        let store_rows = tables.device_stores.entry(device.clone()).or_default();
        for (n, line) in store.read_lines(&target)?.into_iter().enumerate() {
            let row = codec::decode_template(&line).map_err(|e| corrupt(&target, n, e.0))?;
            if row.template.kind() != TemplateKind::Fingerprint {
                return Err(corrupt(&target, n, "non-fingerprint template in device store"));
            }
            tables
                .template_index
                .insert(row.template_ref.clone(), StoreLocation::DeviceLocal(device.clone()));
            store_rows.insert(row.template_ref.clone(), row);
        }
    }

    let target = Target::Cloud(Table::Users);
    for (n, line) in load(Table::Users)? {
        let user = codec::decode_user(&line).map_err(|e| corrupt(&target, n, e.0))?;
        tables.users.insert(user.user_id.clone(), user);
    }
    let target = Target::Cloud(Table::Services);
    for (n, line) in load(Table::Services)? {
        let service = codec::decode_service(&line).map_err(|e| corrupt(&target, n, e.0))?;
        tables.services.insert(service.service_id().clone(), service);
    }
    let target = Target::Cloud(Table::Overlays);
    for (n, line) in load(Table::Overlays)? {
        tables
            .overlays
            .push(codec::decode_overlay(&line).map_err(|e| corrupt(&target, n, e.0))?);
    }
    let target = Target::Cloud(Table::Transactions);
    for (n, line) in load(Table::Transactions)? {
        let tx = codec::decode_transaction(&line).map_err(|e| corrupt(&target, n, e.0))?;
        tables.transaction_ids.insert(tx.transaction_id.clone());
        tables.transactions.push(tx);
    }
    let target = Target::Cloud(Table::UserLogs);
    for (n, line) in load(Table::UserLogs)? {
        let entry = codec::decode_log(&line).map_err(|e| corrupt(&target, n, e.0))?;
        if let (LogEvent::A1Granted, Some(session)) = (entry.event(), entry.session_id()) {
            tables
                .sessions
                .insert(session.clone(), entry.user_id().clone());
        }
        tables.logs.push(entry);
    }
    Ok(tables)
}

impl KnowledgeBase {
    pub fn in_memory() -> Self {
        Self {
            tables: RwLock::new(Tables::default()),
            files: None,
        }
    }

    /// Opens (creating if needed) a file-backed knowledge base under `root`
    /// and replays whatever is already persisted there.
    pub fn open(root: &Path) -> Result<Self, KbError> {
        let store = FileStore::create(root)?;
        let lock = store.lock()?;
        let tables = load(&store)?;
        drop(lock);
        Ok(Self {
            tables: RwLock::new(tables),
            files: Some(store),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.files.as_ref().map(FileStore::root)
    }

    /// Read access, first picking up writes made by another process.
    fn read(&self) -> RwLockReadGuard<'_, Tables> {
        if let Some(store) = &self.files {
            let current = self.tables.read().expect("knowledge base lock poisoned").generation;
            if store.read_generation().is_ok_and(|g| g != current) {
                // a failed reload keeps serving the last good state; the next
                // write reports the problem
                let _ = self.write_synced();
            }
        }
        self.tables.read().expect("knowledge base lock poisoned")
    }

    /// Write access plus the commit lock, with the tables brought up to date
    /// if another process wrote since we last looked.
    fn write_synced(&self) -> Result<(RwLockWriteGuard<'_, Tables>, Option<CommitLock>), KbError> {
        let mut tables = self.tables.write().expect("knowledge base lock poisoned");
        let Some(store) = &self.files else {
            return Ok((tables, None));
        };
        let lock = store.lock()?;
        if store.read_generation()? != tables.generation {
            *tables = load(store)?;
        }
        Ok((tables, Some(lock)))
    }

    fn persist(
        &self,
        tables: &mut Tables,
        appends: &[(Target, Vec<String>)],
        rewrites: &[(Target, Vec<String>)],
    ) -> Result<(), KbError> {
        let Some(store) = &self.files else {
            return Ok(());
        };
        for (target, lines) in rewrites {
            store.rewrite(target, lines)?;
        }
        for (target, lines) in appends {
            store.append(target, lines)?;
        }
        tables.generation += 1;
        store.write_generation(tables.generation)?;
        Ok(())
    }

    // --- template stores ---------------------------------------------------

    /// Persists `template` at `location`, refusing anything that would break
    /// the storage partition.
    pub fn store_template(
        &self,
        template: &BiometricTemplate,
        owner: &UserId,
        location: &StoreLocation,
    ) -> Result<TemplateRef, KbError> {
        match (template.kind(), location) {
            (TemplateKind::Fingerprint, StoreLocation::DeviceLocal(device)) => {
                validate_identifier(device.as_str())?
            }
            (TemplateKind::Face, StoreLocation::CloudKb) => {}
            (kind, location) => {
                return Err(KbError::PartitionViolation {
                    kind,
                    location: location.clone(),
                })
            }
        }
        let (mut tables, _lock) = self.write_synced()?;
        let ordinal = tables.template_count() + 1;
        let template_ref = match template.kind() {
            TemplateKind::Face => TemplateRef::new(format!("fr-{ordinal:06}")),
            TemplateKind::Fingerprint => TemplateRef::new(format!("fp-{ordinal:06}")),
        };
        let row = TemplateRow {
            template_ref: template_ref.clone(),
            owner: owner.clone(),
            template: template.clone(),
        };
        let target = match location {
            StoreLocation::CloudKb => Target::Cloud(Table::Faces),
            StoreLocation::DeviceLocal(device) => Target::Device(device.clone()),
        };
        self.persist(&mut tables, &[(target, vec![codec::encode_template(&row)])], &[])?;
        match location {
            StoreLocation::CloudKb => {
                tables.faces.insert(template_ref.clone(), row);
            }
            StoreLocation::DeviceLocal(device) => {
                tables
                    .device_stores
                    .entry(device.clone())
                    .or_default()
                    .insert(template_ref.clone(), row);
            }
        }
        tables
            .template_index
            .insert(template_ref.clone(), location.clone());
        Ok(template_ref)
    }

    pub fn fetch_template(
        &self,
        template_ref: &TemplateRef,
        location: &StoreLocation,
    ) -> Result<BiometricTemplate, KbError> {
        let tables = self.read();
        let stored_at = tables
            .template_index
            .get(template_ref)
            .ok_or_else(|| KbError::NotFound(template_ref.clone()))?;
        if stored_at != location {
            let kind = match stored_at {
                StoreLocation::CloudKb => TemplateKind::Face,
                StoreLocation::DeviceLocal(_) => TemplateKind::Fingerprint,
            };
            return Err(KbError::PartitionViolation {
                kind,
                location: location.clone(),
            });
        }
        let row = match location {
            StoreLocation::CloudKb => tables.faces.get(template_ref),
            StoreLocation::DeviceLocal(device) => tables
                .device_stores
                .get(device)
                .and_then(|store| store.get(template_ref)),
        };
        row.map(|r| r.template.clone())
            .ok_or_else(|| KbError::NotFound(template_ref.clone()))
    }

    // --- user-details ------------------------------------------------------

    fn check_user_refs(tables: &Tables, user: &UserRecord) -> Result<(), KbError> {
        validate_identifier(user.user_id.as_str())?;
        let face = tables.faces.get(&user.face_template_ref).ok_or_else(|| {
            KbError::IntegrityViolation(DanglingRef::Template(user.face_template_ref.clone()))
        })?;
        if face.owner != user.user_id {
            return Err(KbError::IntegrityViolation(DanglingRef::Template(
                user.face_template_ref.clone(),
            )));
        }
        for device in &user.enrolled_devices {
            validate_identifier(device.device_id().as_str())?;
            if let Some(fp) = device.fingerprint_template_ref() {
                let found = tables
                    .device_stores
                    .get(device.device_id())
                    .and_then(|store| store.get(fp))
                    .is_some_and(|row| row.owner == user.user_id);
                if !found {
                    return Err(KbError::IntegrityViolation(DanglingRef::Template(fp.clone())));
                }
            }
        }
        Ok(())
    }

    fn put_user(&self, user: UserRecord, allow_replace: bool) -> Result<(), KbError> {
        let (mut tables, _lock) = self.write_synced()?;
        if !allow_replace && tables.users.contains_key(&user.user_id) {
            return Err(KbError::DuplicateUser(user.user_id));
        }
        Self::check_user_refs(&tables, &user)?;
        let mut staged = tables.users.clone();
        staged.insert(user.user_id.clone(), user);
        let lines = staged.values().map(codec::encode_user).collect();
        self.persist(&mut tables, &[], &[(Target::Cloud(Table::Users), lines)])?;
        tables.users = staged;
        Ok(())
    }

    /// Adds a new row; fails with [`KbError::DuplicateUser`] if present.
    pub fn insert_user(&self, user: UserRecord) -> Result<(), KbError> {
        self.put_user(user, false)
    }

    pub fn upsert_user(&self, user: UserRecord) -> Result<(), KbError> {
        self.put_user(user, true)
    }

    pub fn get_user(&self, user_id: &UserId) -> Result<UserRecord, KbError> {
        self.read().user(user_id).cloned()
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.read().users.values().cloned().collect()
    }

    pub fn lock_user(&self, user_id: &UserId) -> Result<(), KbError> {
        self.commit(vec![Mutation::SetUserStatus(user_id.clone(), UserStatus::Locked)])
            .map(drop)
    }

    pub fn unlock_user(&self, user_id: &UserId) -> Result<(), KbError> {
        self.commit(vec![Mutation::SetUserStatus(user_id.clone(), UserStatus::Active)])
            .map(drop)
    }

    // --- bank-services -----------------------------------------------------

    /// Inserts or reclassifies a bank-level service. A bank-A2 service can
    /// never be lowered to A1.
    pub fn upsert_service(&self, service: ServiceDefinition) -> Result<(), KbError> {
        validate_identifier(service.service_id().as_str())?;
        if service.classified_by() != ClassifiedBy::Bank {
            return Err(DomainError::UnexpectedOwner.into());
        }
        let (mut tables, _lock) = self.write_synced()?;
        if let Some(existing) = tables.services.get(service.service_id()) {
            if existing.sensitivity() > service.sensitivity() {
                return Err(KbError::SensitivityDowngrade(service.service_id().clone()));
            }
        }
        let mut staged = tables.services.clone();
        staged.insert(service.service_id().clone(), service);
        let lines = staged.values().map(codec::encode_service).collect();
        self.persist(&mut tables, &[], &[(Target::Cloud(Table::Services), lines)])?;
        tables.services = staged;
        Ok(())
    }

    pub fn get_service(&self, service_id: &ServiceId) -> Result<ServiceDefinition, KbError> {
        self.read().service(service_id).cloned()
    }

    /// Bank-level rows.
    pub fn services(&self) -> Vec<ServiceDefinition> {
        self.read().services.values().cloned().collect()
    }

    /// Every service as `user_id` sees it, upgrades applied.
    pub fn services_for(&self, user_id: &UserId) -> Result<Vec<ServiceDefinition>, KbError> {
        let tables = self.read();
        tables.user(user_id)?;
        Ok(tables
            .services
            .values()
            .map(|service| tables.view(user_id, service))
            .collect())
    }

    /// `max(bank classification, user overlay)` under `A1 < A2`.
    pub fn resolve_sensitivity(
        &self,
        user_id: &UserId,
        service_id: &ServiceId,
    ) -> Result<Sensitivity, KbError> {
        self.read().resolve(user_id, service_id)
    }

    // --- user-logs and transactions ---------------------------------------

    pub fn append_log(&self, entry: NewLogEntry) -> Result<EntryId, KbError> {
        match self.commit(vec![Mutation::AppendLog(entry)])?.pop() {
            Some(Committed::Log(id)) => Ok(id),
            other => unreachable!("log commit returned {other:?}"),
        }
    }

    /// Matching entries in timestamp order; ties keep insertion order.
    pub fn query_logs(&self, filter: &LogFilter) -> Vec<UserLogEntry> {
        let mut entries: Vec<UserLogEntry> = self
            .read()
            .logs
            .iter()
            .filter(|e| filter.accepts(e))
            .cloned()
            .collect();
        entries.sort_by_key(UserLogEntry::timestamp);
        entries
    }

    pub fn log_count(&self) -> usize {
        self.read().logs.len()
    }

    pub fn record_transaction(&self, tx: NewTransaction) -> Result<TransactionId, KbError> {
        match self.commit(vec![Mutation::RecordTransaction(tx)])?.pop() {
            Some(Committed::Transaction(record)) => Ok(record.transaction_id),
            other => unreachable!("transaction commit returned {other:?}"),
        }
    }

    pub fn get_transaction(&self, id: &TransactionId) -> Option<TransactionRecord> {
        self.read()
            .transactions
            .iter()
            .find(|tx| &tx.transaction_id == id)
            .cloned()
    }

    /// That user's transactions ordered by `executed_at`.
    pub fn list_transactions(&self, user_id: &UserId) -> Vec<TransactionRecord> {
        let mut txs: Vec<_> = self
            .read()
            .transactions
            .iter()
            .filter(|tx| &tx.user_id == user_id)
            .cloned()
            .collect();
        txs.sort_by_key(|tx| tx.executed_at);
        txs
    }

    pub fn all_transactions(&self) -> Vec<TransactionRecord> {
        self.read().transactions.clone()
    }

    /// Applies every mutation or none of them.
    ///
    /// All mutations are validated first (later ones see the effect of
    /// earlier ones, so a batch may open a session and record a transaction
    /// on it). Only then are the records written out and the in-memory
    /// tables updated, all under one write lock.
    pub fn commit(&self, batch: Vec<Mutation>) -> Result<Vec<Committed>, KbError> {
        let (mut tables, _lock) = self.write_synced()?;

        let mut new_sessions: HashMap<SessionId, UserId> = HashMap::new();
        let mut new_logs = Vec::new();
        let mut new_txs = Vec::new();
        let mut new_overlays: Vec<OverlayRow> = Vec::new();
        let mut status_changes: Vec<(UserId, UserStatus)> = Vec::new();
        let mut results = Vec::with_capacity(batch.len());

        let session_owner = |id: &SessionId, new: &HashMap<SessionId, UserId>| {
            tables.sessions.get(id).or_else(|| new.get(id)).cloned()
        };

        for mutation in batch {
            match mutation {
                Mutation::AppendLog(draft) => {
                    tables.user(draft.user_id())?;
                    if let Some(session) = draft.session_id() {
                        let owner = session_owner(session, &new_sessions);
                        match (draft.event(), owner) {
                            (LogEvent::A1Granted, None) => {
                                new_sessions.insert(session.clone(), draft.user_id().clone());
                            }
                            (LogEvent::A1Granted, Some(_)) => {
                                return Err(KbError::IntegrityViolation(DanglingRef::Session(
                                    session.clone(),
                                )))
                            }
                            (_, Some(owner)) if &owner == draft.user_id() => {}
                            _ => {
                                return Err(KbError::IntegrityViolation(DanglingRef::Session(
                                    session.clone(),
                                )))
                            }
                        }
                    }
                    let id = EntryId::new(format!("log-{:08}", tables.logs.len() + new_logs.len() + 1));
                    results.push(Committed::Log(id.clone()));
                    new_logs.push(draft.into_entry(id));
                }
                Mutation::RecordTransaction(tx) => {
                    if !tables.users.contains_key(&tx.user_id) {
                        return Err(KbError::IntegrityViolation(DanglingRef::User(tx.user_id)));
                    }
                    if !tables.services.contains_key(&tx.service_id) {
                        return Err(KbError::IntegrityViolation(DanglingRef::Service(
                            tx.service_id,
                        )));
                    }
                    if session_owner(&tx.session_id, &new_sessions).as_ref() != Some(&tx.user_id) {
                        return Err(KbError::IntegrityViolation(DanglingRef::Session(
                            tx.session_id,
                        )));
                    }
                    let duplicate = tables.transaction_ids.contains(&tx.transaction_id)
                        || new_txs
                            .iter()
                            .any(|r: &TransactionRecord| r.transaction_id == tx.transaction_id);
                    if duplicate {
                        return Err(KbError::DuplicateTransaction(tx.transaction_id));
                    }
                    let record = TransactionRecord {
                        transaction_id: tx.transaction_id,
                        session_id: tx.session_id,
                        user_id: tx.user_id,
                        service_id: tx.service_id,
                        amount: tx.amount,
                        executed_at: tx.executed_at,
                        required_level: tx.required_level,
                    };
                    results.push(Committed::Transaction(record.clone()));
                    new_txs.push(record);
                }
                Mutation::SetUserStatus(user_id, status) => {
                    tables.user(&user_id)?;
                    status_changes.push((user_id, status));
                    results.push(Committed::UserStatus);
                }
                Mutation::AddOverlay {
                    user_id,
                    service_id,
                    at,
                } => {
                    let resolved = tables.resolve(&user_id, &service_id)?;
                    let pending = new_overlays
                        .iter()
                        .any(|o| o.user_id == user_id && o.service_id == service_id);
                    if resolved == Sensitivity::A2 || pending {
                        return Err(KbError::AlreadyA2 {
                            user_id,
                            service_id,
                        });
                    }
                    let view = tables.service(&service_id)?.upgraded_for(user_id.clone());
                    new_overlays.push(OverlayRow {
                        user_id,
                        service_id,
                        sensitivity: Sensitivity::A2,
                        upgraded_at: at,
                    });
                    results.push(Committed::Overlay(view));
                }
            }
        }

        let mut staged_users = None;
        if !status_changes.is_empty() {
            let mut users = tables.users.clone();
            for (id, status) in &status_changes {
                if let Some(user) = users.get_mut(id) {
                    user.status = *status;
                }
            }
            staged_users = Some(users);
        }

        let appends = [
            (
                Target::Cloud(Table::Overlays),
                new_overlays.iter().map(codec::encode_overlay).collect(),
            ),
            (
                Target::Cloud(Table::Transactions),
                new_txs.iter().map(codec::encode_transaction).collect(),
            ),
            (
                Target::Cloud(Table::UserLogs),
                new_logs.iter().map(codec::encode_log).collect(),
            ),
        ];
        let rewrites: Vec<_> = staged_users
            .iter()
            .map(|users| {
                (
                    Target::Cloud(Table::Users),
                    users.values().map(codec::encode_user).collect(),
                )
            })
            .collect();
        self.persist(&mut tables, &appends, &rewrites)?;

        if let Some(users) = staged_users {
            tables.users = users;
        }
        tables.sessions.extend(new_sessions);
        tables.overlays.extend(new_overlays);
        tables
            .transaction_ids
            .extend(new_txs.iter().map(|tx| tx.transaction_id.clone()));
        tables.transactions.extend(new_txs);
        tables.logs.extend(new_logs);
        Ok(results)
    }

    pub fn snapshot(&self) -> KbSnapshot {
        let tables = self.read();
        let overlays = tables
            .overlays
            .iter()
            .filter_map(|o| {
                tables
                    .services
                    .get(&o.service_id)
                    .map(|s| s.upgraded_for(o.user_id.clone()))
            })
            .collect();
        KbSnapshot {
            user_details: tables.users.values().cloned().collect(),
            bank_services: tables.services.values().cloned().collect(),
            overlays,
            transactions: tables.transactions.clone(),
            user_logs: tables.logs.clone(),
        }
    }

    /// Whether an `a1_granted` entry opened this session.
    pub fn session_owner(&self, session_id: &SessionId) -> Option<UserId> {
        self.read().sessions.get(session_id).cloned()
    }
}
