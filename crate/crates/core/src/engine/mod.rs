//! The session state machine.
//!
//! Each session is a single-writer entity behind its own mutex; distinct
//! sessions proceed concurrently. Every transition builds one
//! [`Mutation`] batch and commits it to the knowledge base before the
//! in-memory session changes, so a granted flag is never visible without its
//! log entry.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::authenticators::{match_templates, verify_pin, AuthError};
use crate::clock::{Clock, ManualClock, SystemClock};
use crate::config::{Config, ConfigError, EngineConfig, SensitiveModeScope};
use crate::domain::{
    A1Method, Amount, AuthMethod, BiometricTemplate, ChallengeToken, DeviceId, DeviceType,
    DomainError, Geolocation, LogEvent, LogFields, NewLogEntry, Sensitivity, ServiceDefinition,
    ServiceId, Session, SessionId, SessionOpening, SessionStatus, TemplateKind, TransactionId,
    TransactionRecord, UserId, UserLogEntry, UserStatus,
};
use crate::enrollment::{self, EnrollmentError, EnrollmentSpec, EnrollmentSummary};
use crate::kb::{Committed, KbError, KnowledgeBase, LogFilter, Mutation, NewTransaction, StoreLocation};
use crate::seed;

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("user {0} is locked")]
    UserLocked(UserId),
    #[error("fingerprint login is not available on a {0}")]
    DeviceMethodViolation(DeviceType),
    #[error("device {0} holds no fingerprint binding for this user")]
    UnknownDevice(DeviceId),
    #[error("session has expired or was closed")]
    SessionExpired,
    #[error("no authenticated session")]
    NotAuthenticated,
    #[error("unknown session")]
    UnknownSession,
    #[error("unknown service {0}")]
    UnknownService(ServiceId),
    #[error("a step-up challenge is already pending for this session")]
    ChallengePending,
    #[error("challenge has expired")]
    ChallengeExpired,
    #[error("challenge was already used")]
    ChallengeConsumed,
    #[error("challenge is not bound to this session")]
    ChallengeMismatch,
    #[error("service {0} already requires level two")]
    AlreadyA2(ServiceId),
    #[error("expected a {expected} probe, got {actual}")]
    ProbeKind {
        expected: TemplateKind,
        actual: TemplateKind,
    },
    #[error(transparent)]
    Enrollment(#[from] EnrollmentError),
    #[error(transparent)]
    Kb(KbError),
}

impl From<KbError> for EngineError {
    fn from(err: KbError) -> Self {
        match err {
            KbError::UnknownUser(id) => EngineError::UnknownUser(id),
            KbError::UnknownService(id) => EngineError::UnknownService(id),
            other => EngineError::Kb(other),
        }
    }
}

impl From<DomainError> for EngineError {
    fn from(err: DomainError) -> Self {
        EngineError::Kb(KbError::Domain(err))
    }
}

impl From<AuthError> for EngineError {
    fn from(err: AuthError) -> Self {
        // Thresholds are validated with the config, so only a kind mismatch
        // can surface here.
        match err {
            AuthError::KindMismatch { probe, enrolled } => EngineError::ProbeKind {
                expected: enrolled,
                actual: probe,
            },
            other => EngineError::Kb(KbError::Corrupt {
                file: "engine".into(),
                line: 0,
                reason: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open the knowledge base: {0}")]
    Kb(#[from] KbError),
}

/// Opens the file-backed knowledge base under `config.data_dir` and builds
/// an engine on it, with a frozen clock when `fixed_clock` is set.
pub fn open_engine(config: &Config) -> Result<Engine, StartupError> {
    let kb = Arc::new(KnowledgeBase::open(&config.data_dir)?);
    let clock: Arc<dyn Clock> = match config.fixed_clock {
        Some(at) => Arc::new(ManualClock::new(at)),
        None => Arc::new(SystemClock::new()),
    };
    Ok(Engine::new(config.engine.clone(), kb, clock, config.run_seed)?)
}

/// Level-one credential.
#[derive(Clone)]
pub enum Credential {
    Pin(String),
    Fingerprint {
        device_id: DeviceId,
        probe: BiometricTemplate,
    },
}

impl Credential {
    pub fn method(&self) -> A1Method {
        match self {
            Credential::Pin(_) => A1Method::Pin,
            Credential::Fingerprint { .. } => A1Method::Fingerprint,
        }
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Credential::Pin(_) => f.write_str("Pin(..)"),
            Credential::Fingerprint { device_id, .. } => f
                .debug_struct("Fingerprint")
                .field("device_id", device_id)
                .finish_non_exhaustive(),
        }
    }
}

/// How the device type of a login was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeviceSource {
    #[default]
    Declared,
    UserAgent,
}

impl DeviceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceSource::Declared => "declared",
            DeviceSource::UserAgent => "user_agent",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoginRequest {
    pub user_id: UserId,
    pub credential: Credential,
    pub device_type: DeviceType,
    pub device_source: DeviceSource,
    pub geolocation: Geolocation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoginOutcome {
    Granted(Session),
    Denied { locked: bool, remaining_attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepUpChallenge {
    pub challenge: ChallengeToken,
    /// Always [`AuthMethod::Face`].
    pub required_method: AuthMethod,
}

impl StepUpChallenge {
    pub fn service_id(&self) -> &ServiceId {
        &self.challenge.service_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransactionOutcome {
    Executed(TransactionRecord),
    StepUpRequired(StepUpChallenge),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepUpOutcome {
    Executed {
        transaction: TransactionRecord,
        /// Status after execution: `S-2` under single-transaction scope.
        status: SessionStatus,
    },
    Denied {
        remaining_attempts: u32,
        /// The challenge hit its failure cap and the transaction is refused.
        refused: bool,
    },
}

struct Slot {
    session: Session,
    /// Amount and failed attempts of the current challenge.
    step_up: Option<PendingStepUp>,
    /// Earlier challenge tokens of this session, with their consumed flag.
    retired: HashMap<String, bool>,
}

struct PendingStepUp {
    amount: Option<Amount>,
    failures: u32,
}

pub struct Engine {
    config: EngineConfig,
    kb: Arc<KnowledgeBase>,
    clock: Arc<dyn Clock>,
    entropy: Mutex<ChaCha20Rng>,
    /// Ordered so sweeps log in a reproducible order.
    sessions: RwLock<BTreeMap<SessionId, Arc<Mutex<Slot>>>>,
    challenges: Mutex<HashMap<String, SessionId>>,
    /// Consecutive level-one failures per user. Held for the whole login so
    /// the counter and the lockout commit stay consistent.
    a1_failures: Mutex<HashMap<UserId, u32>>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("kb", &self.kb)
            .finish_non_exhaustive()
    }
}

fn guard<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl Engine {
    /// `entropy_seed` makes session ids, challenge tokens, transaction ids
    /// and PIN salts reproducible; `None` draws from the OS.
    pub fn new(
        config: EngineConfig,
        kb: Arc<KnowledgeBase>,
        clock: Arc<dyn Clock>,
        entropy_seed: Option<u64>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let entropy = match entropy_seed {
            Some(run_seed) => seed::stream(run_seed, seed::ENGINE_ENTROPY),
            None => ChaCha20Rng::from_os_rng(),
        };
        Ok(Self {
            config,
            kb,
            clock,
            entropy: Mutex::new(entropy),
            sessions: RwLock::new(BTreeMap::new()),
            challenges: Mutex::new(HashMap::new()),
            a1_failures: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.kb
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn random_hex(&self, bytes: usize) -> String {
        let mut buf = vec![0u8; bytes];
        guard(&self.entropy).fill_bytes(&mut buf);
        hex::encode(buf)
    }

    fn slot(&self, session_id: &SessionId) -> Option<Arc<Mutex<Slot>>> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(session_id)
            .cloned()
    }

    /// Copy of a session's current state.
    pub fn session(&self, session_id: &SessionId) -> Option<Session> {
        self.slot(session_id).map(|slot| guard(&slot).session.clone())
    }

    pub fn sessions(&self) -> Vec<Session> {
        let slots: Vec<_> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        slots.iter().map(|slot| guard(slot).session.clone()).collect()
    }

    pub fn enroll(&self, spec: &EnrollmentSpec) -> Result<EnrollmentSummary, EngineError> {
        let mut salt = [0u8; 16];
        guard(&self.entropy).fill_bytes(&mut salt);
        Ok(enrollment::enroll(&self.kb, spec, &salt)?)
    }

    // --- level one ---------------------------------------------------------

    pub fn login(&self, request: LoginRequest) -> Result<LoginOutcome, EngineError> {
        let mut failures = guard(&self.a1_failures);
        let now = self.clock.now();
        let user = self.kb.get_user(&request.user_id)?;
        let method = request.credential.method();
        if method == A1Method::Fingerprint && !request.device_type.supports_fingerprint() {
            return Err(EngineError::DeviceMethodViolation(request.device_type));
        }
        if user.status == UserStatus::Locked {
            return Err(EngineError::UserLocked(user.user_id));
        }
        let (verified, mut detail) = match &request.credential {
            Credential::Pin(pin) => (
                verify_pin(pin, &user).map_err(|_| EngineError::UserLocked(user.user_id.clone()))?,
                String::new(),
            ),
            Credential::Fingerprint { device_id, probe } => {
                let fp_ref = user
                    .device(device_id)
                    .and_then(|binding| binding.fingerprint_template_ref())
                    .ok_or_else(|| EngineError::UnknownDevice(device_id.clone()))?;
                let enrolled = self
                    .kb
                    .fetch_template(fp_ref, &StoreLocation::DeviceLocal(device_id.clone()))?;
                let result = match_templates(probe, &enrolled, self.config.fingerprint_threshold)?;
                (result.matched, format!("device_id={device_id};"))
            }
        };
        let fields = |event, status, auth_method_used, detail: String| LogFields {
            session_id: None,
            user_id: user.user_id.clone(),
            event,
            device_type: Some(request.device_type),
            status,
            geolocation: request.geolocation,
            auth_method_used,
            timestamp: now,
            detail,
        };

        if verified {
            let session_id = SessionId::new(self.random_hex(16));
            let session = Session::open(SessionOpening {
                session_id: session_id.clone(),
                user_id: user.user_id.clone(),
                device_type: request.device_type,
                a1_method: method,
                geolocation: request.geolocation,
                now,
                ttl_seconds: self.config.session_ttl_seconds,
            })
            .map_err(|_| EngineError::DeviceMethodViolation(request.device_type))?;
            detail.push_str("device_source=");
            detail.push_str(request.device_source.as_str());
            let entry = NewLogEntry::new(LogFields {
                session_id: Some(session_id.clone()),
                ..fields(LogEvent::A1Granted, SessionStatus::Online, method.into(), detail)
            })?;
            self.kb.commit(vec![Mutation::AppendLog(entry)])?;
            failures.remove(&user.user_id);
            self.sessions
                .write()
                .unwrap_or_else(|p| p.into_inner())
                .insert(
                    session_id,
                    Arc::new(Mutex::new(Slot {
                        session: session.clone(),
                        step_up: None,
                        retired: HashMap::new(),
                    })),
                );
            return Ok(LoginOutcome::Granted(session));
        }

        let count = failures.get(&user.user_id).copied().unwrap_or(0) + 1;
        let locked = count >= self.config.max_a1_failures;
        let reason = match method {
            A1Method::Fingerprint => "no_match",
            _ => "bad_pin",
        };
        detail.push_str(&format!("reason={reason};failures={count}"));
        let mut batch = vec![Mutation::AppendLog(NewLogEntry::new(fields(
            LogEvent::A1Denied,
            SessionStatus::Offline,
            AuthMethod::None,
            detail,
        ))?)];
        if locked {
            batch.push(Mutation::AppendLog(NewLogEntry::new(fields(
                LogEvent::Lockout,
                SessionStatus::Offline,
                AuthMethod::None,
                format!("failures={count}"),
            ))?));
            batch.push(Mutation::SetUserStatus(user.user_id.clone(), UserStatus::Locked));
        }
        self.kb.commit(batch)?;
        if locked {
            failures.remove(&user.user_id);
        } else {
            failures.insert(user.user_id.clone(), count);
        }
        Ok(LoginOutcome::Denied {
            locked,
            remaining_attempts: self.config.max_a1_failures - count,
        })
    }

    /// Clears the lock and the failure counter.
    pub fn unlock_user(&self, user_id: &UserId) -> Result<(), EngineError> {
        let mut failures = guard(&self.a1_failures);
        self.kb.unlock_user(user_id)?;
        failures.remove(user_id);
        Ok(())
    }

    // --- transactions and level two ----------------------------------------

    pub fn initiate_transaction(
        &self,
        session_id: &SessionId,
        service_id: &ServiceId,
        amount: Option<Amount>,
    ) -> Result<TransactionOutcome, EngineError> {
        let slot = self.slot(session_id).ok_or(EngineError::NotAuthenticated)?;
        let mut slot = guard(&slot);
        let now = self.clock.now();
        self.ensure_live(&mut slot, now)?;
        let level = self
            .kb
            .resolve_sensitivity(slot.session.user_id(), service_id)?;

        if level == Sensitivity::A1 || slot.session.status() == SessionStatus::Sensitive {
            let record = self.execute(&mut slot, service_id, amount, level, now, Vec::new(), None)?;
            return Ok(TransactionOutcome::Executed(record));
        }

        if let Some(current) = slot.session.pending_challenge() {
            if !current.consumed && !current.is_expired(now) {
                return Err(EngineError::ChallengePending);
            }
            let (token, consumed) = (current.token.clone(), current.consumed);
            slot.retired.insert(token, consumed);
        }
        let challenge = ChallengeToken {
            token: self.random_hex(32),
            session_id: session_id.clone(),
            service_id: service_id.clone(),
            issued_at: now,
            ttl_seconds: self.config.challenge_ttl_seconds,
            consumed: false,
        };
        guard(&self.challenges).insert(challenge.token.clone(), session_id.clone());
        slot.session.set_pending_challenge(Some(challenge.clone()));
        slot.step_up = Some(PendingStepUp {
            amount,
            failures: 0,
        });
        Ok(TransactionOutcome::StepUpRequired(StepUpChallenge {
            challenge,
            required_method: AuthMethod::Face,
        }))
    }

    pub fn complete_step_up(
        &self,
        session_id: &SessionId,
        token: &str,
        face_probe: &BiometricTemplate,
    ) -> Result<StepUpOutcome, EngineError> {
        let bound_to = guard(&self.challenges).get(token).cloned();
        let slot = self.slot(session_id).ok_or(EngineError::NotAuthenticated)?;
        let mut slot = guard(&slot);
        let now = self.clock.now();
        self.ensure_live(&mut slot, now)?;
        if bound_to.as_ref() != Some(session_id) {
            return Err(EngineError::ChallengeMismatch);
        }
        let challenge = match slot.session.pending_challenge() {
            Some(current) if current.token == token => current.clone(),
            _ => {
                return Err(match slot.retired.get(token) {
                    Some(true) => EngineError::ChallengeConsumed,
                    _ => EngineError::ChallengeExpired,
                })
            }
        };
        if challenge.consumed {
            return Err(EngineError::ChallengeConsumed);
        }
        if challenge.is_expired(now) {
            return Err(EngineError::ChallengeExpired);
        }
        if face_probe.kind() != TemplateKind::Face {
            return Err(EngineError::ProbeKind {
                expected: TemplateKind::Face,
                actual: face_probe.kind(),
            });
        }

        let user = self.kb.get_user(slot.session.user_id())?;
        let enrolled = self
            .kb
            .fetch_template(&user.face_template_ref, &StoreLocation::CloudKb)?;
        let result = match_templates(face_probe, &enrolled, self.config.face_threshold)?;
        let service_id = challenge.service_id.clone();

        if result.matched {
            let amount = slot.step_up.as_ref().and_then(|p| p.amount);
            let granted = self.session_entry(
                &slot.session,
                LogEvent::A2Granted,
                SessionStatus::Sensitive,
                AuthMethod::Face,
                now,
                format!("service={service_id}"),
            )?;
            let after = match self.config.sensitive_mode_scope {
                SensitiveModeScope::SingleTransaction => SessionStatus::Online,
                SensitiveModeScope::Session => SessionStatus::Sensitive,
            };
            let record = self.execute(
                &mut slot,
                &service_id,
                amount,
                Sensitivity::A2,
                now,
                vec![Mutation::AppendLog(granted)],
                Some(after),
            )?;
            slot.session
                .grant_a2(now)
                .map_err(|_| EngineError::SessionExpired)?;
            if after == SessionStatus::Online {
                slot.session.leave_sensitive_mode();
            }
            if let Some(pending) = slot.session.pending_challenge_mut() {
                pending.consumed = true;
            }
            slot.step_up = None;
            return Ok(StepUpOutcome::Executed {
                transaction: record,
                status: after,
            });
        }

        let failures = slot.step_up.as_ref().map_or(0, |p| p.failures) + 1;
        let refused = failures >= self.config.max_a2_failures;
        let status = slot.session.status();
        let mut batch = vec![Mutation::AppendLog(self.session_entry(
            &slot.session,
            LogEvent::A2Denied,
            status,
            AuthMethod::None,
            now,
            format!("service={service_id};failures={failures}"),
        )?)];
        if refused {
            batch.push(Mutation::AppendLog(self.session_entry(
                &slot.session,
                LogEvent::TxRefused,
                status,
                AuthMethod::None,
                now,
                format!("service={service_id};reason=step_up_failures"),
            )?));
        }
        self.kb.commit(batch)?;
        if refused {
            if let Some(pending) = slot.session.pending_challenge_mut() {
                pending.consumed = true;
            }
            slot.step_up = None;
        } else if let Some(pending) = slot.step_up.as_mut() {
            pending.failures = failures;
        }
        Ok(StepUpOutcome::Denied {
            remaining_attempts: self.config.max_a2_failures - failures,
            refused,
        })
    }

    /// Records the transaction and its `tx_executed` entry after `prefix`, in
    /// one commit. `status_after` overrides the status logged with the entry.
    #[allow(clippy::too_many_arguments)]
    fn execute(
        &self,
        slot: &mut Slot,
        service_id: &ServiceId,
        amount: Option<Amount>,
        level: Sensitivity,
        now: DateTime<Utc>,
        mut prefix: Vec<Mutation>,
        status_after: Option<SessionStatus>,
    ) -> Result<TransactionRecord, EngineError> {
        let transaction_id = TransactionId::new(format!("tx-{}", self.random_hex(8)));
        let status = status_after.unwrap_or(slot.session.status());
        let mut detail = format!("tx={transaction_id};service={service_id};level={level}");
        if level == Sensitivity::A2 && status == SessionStatus::Online {
            detail.push_str(";reverted_to=S-2");
        }
        prefix.push(Mutation::RecordTransaction(NewTransaction {
            transaction_id,
            session_id: slot.session.session_id().clone(),
            user_id: slot.session.user_id().clone(),
            service_id: service_id.clone(),
            amount,
            executed_at: now,
            required_level: level,
        }));
        prefix.push(Mutation::AppendLog(self.session_entry(
            &slot.session,
            LogEvent::TxExecuted,
            status,
            AuthMethod::None,
            now,
            detail,
        )?));
        let committed = self.kb.commit(prefix)?;
        committed
            .into_iter()
            .find_map(|c| match c {
                Committed::Transaction(record) => Some(record),
                _ => None,
            })
            .ok_or(EngineError::SessionExpired)
    }

    fn session_entry(
        &self,
        session: &Session,
        event: LogEvent,
        status: SessionStatus,
        auth_method_used: AuthMethod,
        now: DateTime<Utc>,
        detail: String,
    ) -> Result<NewLogEntry, EngineError> {
        Ok(NewLogEntry::new(LogFields {
            session_id: Some(session.session_id().clone()),
            user_id: session.user_id().clone(),
            event,
            device_type: Some(session.device_type()),
            status,
            geolocation: session.geolocation(),
            auth_method_used,
            timestamp: now,
            detail,
        })?)
    }

    /// Fails with `SessionExpired` for closed sessions, closing (and logging)
    /// sessions whose lifetime ran out.
    fn ensure_live(&self, slot: &mut Slot, now: DateTime<Utc>) -> Result<(), EngineError> {
        if slot.session.status() == SessionStatus::Offline {
            return Err(EngineError::SessionExpired);
        }
        if slot.session.is_expired(now) {
            self.close(slot, LogEvent::Timeout, now)?;
            return Err(EngineError::SessionExpired);
        }
        Ok(())
    }

    fn close(&self, slot: &mut Slot, event: LogEvent, now: DateTime<Utc>) -> Result<(), EngineError> {
        let entry = self.session_entry(
            &slot.session,
            event,
            SessionStatus::Offline,
            AuthMethod::None,
            now,
            String::new(),
        )?;
        self.kb.commit(vec![Mutation::AppendLog(entry)])?;
        if let Some(pending) = slot.session.pending_challenge() {
            let (token, consumed) = (pending.token.clone(), pending.consumed);
            slot.retired.insert(token, consumed);
        }
        slot.session.close();
        slot.step_up = None;
        Ok(())
    }

    // --- leaving -----------------------------------------------------------

    pub fn logout(&self, session_id: &SessionId) -> Result<(), EngineError> {
        let slot = self.slot(session_id).ok_or(EngineError::UnknownSession)?;
        let mut slot = guard(&slot);
        if slot.session.status() == SessionStatus::Offline {
            return Err(EngineError::UnknownSession);
        }
        let now = self.clock.now();
        self.close(&mut slot, LogEvent::Logout, now)
    }

    /// Closes every live session whose `expires_at` is before `now`.
    pub fn sweep_expired(&self, now: DateTime<Utc>) -> Result<usize, EngineError> {
        let slots: Vec<_> = self
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .values()
            .cloned()
            .collect();
        let mut expired = 0;
        for slot in slots {
            let mut slot = guard(&slot);
            if slot.session.status() != SessionStatus::Offline && slot.session.expires_at() < now {
                self.close(&mut slot, LogEvent::Timeout, now)?;
                expired += 1;
            }
        }
        Ok(expired)
    }

    /// Drops closed sessions that expired before `before`, with their
    /// challenge tokens. Later requests naming them see `NotAuthenticated`.
    pub fn forget_closed(&self, before: DateTime<Utc>) -> usize {
        let mut sessions = self.sessions.write().unwrap_or_else(|p| p.into_inner());
        let mut challenges = guard(&self.challenges);
        let stale: Vec<SessionId> = sessions
            .iter()
            .filter(|(_, slot)| {
                let slot = guard(slot);
                slot.session.status() == SessionStatus::Offline && slot.session.expires_at() < before
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            sessions.remove(id);
        }
        challenges.retain(|_, owner| !stale.contains(owner));
        stale.len()
    }

    // --- service views -----------------------------------------------------

    /// The session user's view of the services.
    pub fn list_services(&self, session_id: &SessionId) -> Result<Vec<ServiceDefinition>, EngineError> {
        let user_id = self.live_user(session_id)?;
        Ok(self.kb.services_for(&user_id)?)
    }

    /// The session user's own log entries, optionally narrowed to one session.
    pub fn user_logs(
        &self,
        session_id: &SessionId,
        of_session: Option<&SessionId>,
    ) -> Result<Vec<UserLogEntry>, EngineError> {
        let user_id = self.live_user(session_id)?;
        Ok(self.kb.query_logs(&LogFilter {
            user_id: Some(user_id),
            session_id: of_session.cloned(),
            ..LogFilter::default()
        }))
    }

    fn live_user(&self, session_id: &SessionId) -> Result<UserId, EngineError> {
        let slot = self.slot(session_id).ok_or(EngineError::NotAuthenticated)?;
        let mut slot = guard(&slot);
        let now = self.clock.now();
        self.ensure_live(&mut slot, now)?;
        Ok(slot.session.user_id().clone())
    }

    /// Raises a service to A2 in the session user's view.
    pub fn upgrade_service(
        &self,
        session_id: &SessionId,
        service_id: &ServiceId,
    ) -> Result<ServiceDefinition, EngineError> {
        let slot = self.slot(session_id).ok_or(EngineError::NotAuthenticated)?;
        let mut slot = guard(&slot);
        let now = self.clock.now();
        self.ensure_live(&mut slot, now)?;
        let session = slot.session.clone();
        self.upgrade(session.user_id(), service_id, Some(&session), now)
    }

    /// Operator variant of [`Engine::upgrade_service`], acting for `user_id`.
    pub fn upgrade_service_sensitivity(
        &self,
        user_id: &UserId,
        service_id: &ServiceId,
    ) -> Result<ServiceDefinition, EngineError> {
        let now = self.clock.now();
        self.upgrade(user_id, service_id, None, now)
    }

    fn upgrade(
        &self,
        user_id: &UserId,
        service_id: &ServiceId,
        session: Option<&Session>,
        now: DateTime<Utc>,
    ) -> Result<ServiceDefinition, EngineError> {
        let user = self.kb.get_user(user_id)?;
        if user.status == UserStatus::Locked {
            return Err(EngineError::UserLocked(user.user_id));
        }
        if self.kb.resolve_sensitivity(user_id, service_id)? == Sensitivity::A2 {
            return Err(EngineError::AlreadyA2(service_id.clone()));
        }
        let entry = NewLogEntry::new(LogFields {
            session_id: session.map(|s| s.session_id().clone()),
            user_id: user_id.clone(),
            event: LogEvent::ServiceUpgraded,
            device_type: session.map(Session::device_type),
            status: session.map_or(SessionStatus::Offline, Session::status),
            geolocation: session.map_or_else(Geolocation::unknown, Session::geolocation),
            auth_method_used: AuthMethod::None,
            timestamp: now,
            detail: format!("service={service_id}"),
        })?;
        let committed = self.kb.commit(vec![
            Mutation::AddOverlay {
                user_id: user_id.clone(),
                service_id: service_id.clone(),
                at: now,
            },
            Mutation::AppendLog(entry),
        ])?;
        match committed.into_iter().next() {
            Some(Committed::Overlay(view)) => Ok(view),
            _ => Err(EngineError::UnknownService(service_id.clone())),
        }
    }
}
