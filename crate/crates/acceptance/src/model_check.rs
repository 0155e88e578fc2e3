//! Exhaustive comparison of the engine against [`crate::model`] over every
//! event sequence up to a fixed length, under both sensitive-mode scopes.
//!
//! After each event the driver checks:
//! - the outcome and the appended audit events against the model;
//! - every session's flag pair is a row of the status table, and its
//!   label agrees with the pair;
//! - each new level-two transaction was executed while the level-two flag was
//!   set, and follows exactly one consumed face challenge for its service;
//! - replaying a token that just succeeded yields `ChallengeConsumed` and
//!   writes nothing.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use iam_core::domain::{
    classify_status, BiometricTemplate, DeviceType, Geolocation, LogEvent, Sensitivity,
    ServiceDefinition, ServiceId, Session, SessionId, SessionStatus, UserId, UserLogEntry,
};
use iam_core::engine::{Credential, DeviceSource, LoginOutcome, LoginRequest, StepUpOutcome, TransactionOutcome};
use iam_core::enrollment::{enrolled_face, EnrollmentSpec};
use iam_core::kb::LogFilter;
use iam_core::{Engine, EngineConfig, EngineError, KnowledgeBase, ManualClock, SensitiveModeScope};

use crate::model::{Event, Limits, Model, Outcome, Rejection, Scope, EVENTS};

const PIN: &str = "482916";
const TEMPLATE_SEED: u64 = 31;
const A1_SERVICE: &str = "balance";
const A2_SERVICE: &str = "funds-transfer";

pub fn limits(scope: Scope) -> Limits {
    Limits {
        session_ttl: 600,
        // Short enough for an expired challenge to be reachable in six events.
        challenge_ttl: 2,
        max_a1_failures: 3,
        max_a2_failures: 3,
        scope,
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub sequences: u64,
    pub steps: u64,
    pub model_divergences: u64,
    pub table_violations: u64,
    pub audit_violations: u64,
    pub a2_without_flag: u64,
    pub a2_transactions: u64,
    pub step_up_violations: u64,
    pub replays: u64,
    pub replay_failures: u64,
    /// Distinct (scope, status) pairs observed, as a coverage signal.
    pub statuses_seen: Vec<(Scope, SessionStatus)>,
    pub first_failure: Option<String>,
    pub elapsed: Duration,
}

impl Report {
    fn fail(&mut self, counter: fn(&mut Report) -> &mut u64, trace: &[Event], message: String) {
        *counter(self) += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(format!("{trace:?}: {message}"));
        }
    }

    pub fn table_clean(&self) -> bool {
        self.model_divergences == 0
            && self.table_violations == 0
            && self.audit_violations == 0
            && self.a2_without_flag == 0
    }

    /// All three table rows were observed between events. `S-3` only rests
    /// between events under session scope; under single-transaction scope it
    /// lasts for the one commit that grants and executes.
    pub fn rows_covered(&self) -> bool {
        [SessionStatus::Offline, SessionStatus::Online, SessionStatus::Sensitive]
            .iter()
            .all(|status| self.statuses_seen.iter().any(|(_, seen)| seen == status))
    }

    pub fn step_up_clean(&self) -> bool {
        self.step_up_violations == 0 && self.replay_failures == 0 && self.replays > 0
    }
}

struct Rig {
    engine: Engine,
    clock: ManualClock,
    user: UserId,
    face: BiometricTemplate,
    session: Option<SessionId>,
    token: Option<String>,
}

fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 6, 1, 9, 0, 0).unwrap()
}

impl Rig {
    fn new(limits: &Limits) -> Self {
        let kb = Arc::new(KnowledgeBase::in_memory());
        kb.upsert_service(ServiceDefinition::bank(ServiceId::from(A1_SERVICE), "Balance", Sensitivity::A1))
            .unwrap();
        kb.upsert_service(ServiceDefinition::bank(ServiceId::from(A2_SERVICE), "Transfer", Sensitivity::A2))
            .unwrap();
        let clock = ManualClock::new(start());
        let config = EngineConfig {
            session_ttl_seconds: limits.session_ttl as u64,
            challenge_ttl_seconds: limits.challenge_ttl as u64,
            max_a1_failures: limits.max_a1_failures,
            max_a2_failures: limits.max_a2_failures,
            sensitive_mode_scope: match limits.scope {
                Scope::SingleTransaction => SensitiveModeScope::SingleTransaction,
                Scope::Session => SensitiveModeScope::Session,
            },
            ..EngineConfig::default()
        };
        let engine = Engine::new(config, kb, Arc::new(clock.clone()), Some(17)).unwrap();
        let user = UserId::from("model-user");
        engine
            .enroll(&EnrollmentSpec {
                user_id: user.clone(),
                full_name: "Model User".into(),
                pin: PIN.into(),
                devices: Vec::new(),
                template_seed: TEMPLATE_SEED,
            })
            .unwrap();
        Self {
            engine,
            clock,
            user,
            face: enrolled_face(TEMPLATE_SEED),
            session: None,
            token: None,
        }
    }

    fn session_id(&self) -> SessionId {
        self.session.clone().unwrap_or_else(|| SessionId::from("no-session"))
    }

    fn token(&self) -> String {
        self.token.clone().unwrap_or_else(|| "no-token".into())
    }

    fn login(&mut self, pin: &str) -> Result<Outcome, EngineError> {
        let outcome = self.engine.login(LoginRequest {
            user_id: self.user.clone(),
            credential: Credential::Pin(pin.into()),
            device_type: DeviceType::Desktop,
            device_source: DeviceSource::Declared,
            geolocation: Geolocation::unknown(),
        })?;
        Ok(match outcome {
            LoginOutcome::Granted(session) => {
                self.session = Some(session.session_id().clone());
                self.token = None;
                Outcome::Granted
            }
            LoginOutcome::Denied { locked, remaining_attempts } => Outcome::Denied {
                locked,
                remaining: remaining_attempts,
            },
        })
    }

    fn initiate(&mut self, service: &str) -> Result<Outcome, EngineError> {
        let outcome = self
            .engine
            .initiate_transaction(&self.session_id(), &ServiceId::from(service), None)?;
        Ok(match outcome {
            TransactionOutcome::Executed(tx) => Outcome::Executed {
                a2: tx.required_level == Sensitivity::A2,
            },
            TransactionOutcome::StepUpRequired(step_up) => {
                self.token = Some(step_up.challenge.token);
                Outcome::Challenge
            }
        })
    }

    fn step_up(&mut self, probe: &BiometricTemplate) -> Result<Outcome, EngineError> {
        let outcome = self.engine.complete_step_up(&self.session_id(), &self.token(), probe)?;
        Ok(match outcome {
            StepUpOutcome::Executed { status, .. } => Outcome::StepUpExecuted {
                sensitive_after: status == SessionStatus::Sensitive,
            },
            StepUpOutcome::Denied { remaining_attempts, refused } => Outcome::StepUpDenied {
                remaining: remaining_attempts,
                refused,
            },
        })
    }

    fn apply(&mut self, event: Event, limits: &Limits) -> Result<Outcome, EngineError> {
        if event == Event::Timeout {
            self.clock.advance_secs(limits.session_ttl + 1);
        } else {
            self.clock.advance_secs(1);
        }
        match event {
            Event::LoginOk => self.login(PIN),
            Event::LoginFail => self.login("000000"),
            Event::InitiateA1 => self.initiate(A1_SERVICE),
            Event::InitiateA2 => self.initiate(A2_SERVICE),
            Event::StepUpOk => {
                let probe = self.face.clone();
                self.step_up(&probe)
            }
            Event::StepUpFail => {
                let probe = self.face.complement();
                self.step_up(&probe)
            }
            Event::Logout => self.engine.logout(&self.session_id()).map(|()| Outcome::LoggedOut),
            Event::Timeout => self.engine.sweep_expired(self.engine.now()).map(Outcome::Swept),
        }
    }

    fn logs(&self) -> Vec<UserLogEntry> {
        self.engine.kb().query_logs(&LogFilter::default())
    }
}

fn rejection(err: &EngineError) -> Option<Rejection> {
    Some(match err {
        EngineError::UserLocked(_) => Rejection::UserLocked,
        EngineError::NotAuthenticated => Rejection::NotAuthenticated,
        EngineError::SessionExpired => Rejection::SessionExpired,
        EngineError::UnknownSession => Rejection::UnknownSession,
        EngineError::ChallengePending => Rejection::ChallengePending,
        EngineError::ChallengeMismatch => Rejection::ChallengeMismatch,
        EngineError::ChallengeConsumed => Rejection::ChallengeConsumed,
        EngineError::ChallengeExpired => Rejection::ChallengeExpired,
        _ => return None,
    })
}

/// The flag pair the session carries, read from its grant timestamps.
fn flags(session: &Session) -> (bool, bool) {
    (session.a1_timestamp().is_some(), session.a2_timestamp().is_some())
}

fn table_row_problem(session: &Session) -> Option<String> {
    let (a1, a2) = flags(session);
    match classify_status(a1, a2) {
        Err(_) => Some(format!("flag pair ({}, {}) outside the table", a1 as u8, a2 as u8)),
        Ok(status) if status != session.status() => {
            Some(format!("label {} disagrees with flags ({a1}, {a2})", session.status()))
        }
        Ok(_) => match (session.a1_timestamp(), session.a2_timestamp()) {
            (Some(t1), Some(t2)) if t2 < t1 => Some(format!("a2 grant {t2} precedes a1 grant {t1}")),
            _ => None,
        },
    }
}

fn detail_service(entry: &UserLogEntry) -> Option<&str> {
    entry
        .detail()
        .split(';')
        .find_map(|part| part.strip_prefix("service="))
}

struct Checker<'a> {
    limits: Limits,
    report: &'a mut Report,
}

impl Checker<'_> {
    fn run_sequence(&mut self, sequence: &[Event]) {
        let limits = self.limits;
        let mut model = Model::new(limits);
        let mut rig = Rig::new(&limits);
        for (i, &event) in sequence.iter().enumerate() {
            let trace = &sequence[..=i];
            self.report.steps += 1;
            let logs_before = rig.engine.kb().log_count();
            let txs_before = rig.engine.kb().all_transactions().len();
            let status_before = rig.session.as_ref().and_then(|id| rig.engine.session(id)).map(|s| s.status());

            let expected = model.apply(event);
            let actual = match rig.apply(event, &limits) {
                Ok(outcome) => outcome,
                Err(err) => match rejection(&err) {
                    Some(r) => Outcome::Rejected(r),
                    None => {
                        self.report.fail(|r| &mut r.model_divergences, trace, format!("engine error {err}"));
                        return;
                    }
                },
            };
            if actual != expected.outcome {
                self.report.fail(
                    |r| &mut r.model_divergences,
                    trace,
                    format!("engine {actual:?}, model {:?}", expected.outcome),
                );
                return;
            }

            let logs = rig.logs();
            self.check_audit(trace, &logs, logs_before, &expected.audit, &rig);
            self.check_sessions(trace, &rig, &model);
            let txs = rig.engine.kb().all_transactions();
            if txs.len() - txs_before != actual.transactions() {
                self.report.fail(
                    |r| &mut r.model_divergences,
                    trace,
                    format!("{} transactions recorded for {actual:?}", txs.len() - txs_before),
                );
            }
            for tx in &txs[txs_before..] {
                if tx.required_level != Sensitivity::A2 {
                    continue;
                }
                self.report.a2_transactions += 1;
                self.check_a2_transaction(trace, &rig, &logs, logs_before, tx, status_before);
            }
            if matches!(actual, Outcome::StepUpExecuted { .. }) {
                self.replay(trace, &rig);
            }
        }
    }

    fn check_audit(&mut self, trace: &[Event], logs: &[UserLogEntry], before: usize, expected: &[&str], rig: &Rig) {
        let appended: Vec<String> = logs[before..].iter().map(|e| e.event().to_string()).collect();
        if appended != expected {
            self.report.fail(
                |r| &mut r.audit_violations,
                trace,
                format!("appended {appended:?}, expected {expected:?}"),
            );
        }
        let now = rig.engine.now();
        if logs[before..].iter().any(|e| e.timestamp() != now) {
            self.report.fail(|r| &mut r.audit_violations, trace, "entry stamped away from the clock".into());
        }
        if logs.windows(2).any(|w| w[0].timestamp() > w[1].timestamp()) {
            self.report.fail(|r| &mut r.audit_violations, trace, "log out of timestamp order".into());
        }
    }

    fn check_sessions(&mut self, trace: &[Event], rig: &Rig, model: &Model) {
        let sessions = rig.engine.sessions();
        for session in &sessions {
            if let Some(problem) = table_row_problem(session) {
                self.report.fail(|r| &mut r.table_violations, trace, problem);
            }
            let seen = (self.limits.scope, session.status());
            if !self.report.statuses_seen.contains(&seen) {
                self.report.statuses_seen.push(seen);
            }
        }
        let live = sessions.iter().filter(|s| s.status() != SessionStatus::Offline).count();
        let model_live = model.sessions.iter().filter(|s| s.live).count();
        if sessions.len() != model.sessions.len() || live != model_live {
            self.report.fail(
                |r| &mut r.model_divergences,
                trace,
                format!("engine {live}/{} live sessions, model {model_live}/{}", sessions.len(), model.sessions.len()),
            );
        }
        if let (Some(id), Some(expected)) = (&rig.session, model.current()) {
            let actual = rig.engine.session(id).map(|s| flags(&s));
            if actual != Some((expected.a1, expected.a2)) {
                self.report.fail(
                    |r| &mut r.model_divergences,
                    trace,
                    format!("engine flags {actual:?}, model ({}, {})", expected.a1, expected.a2),
                );
            }
        }
    }

    fn check_a2_transaction(
        &mut self,
        trace: &[Event],
        rig: &Rig,
        logs: &[UserLogEntry],
        logs_before: usize,
        tx: &iam_core::domain::TransactionRecord,
        status_before: Option<SessionStatus>,
    ) {
        let session = rig.engine.session(&tx.session_id);
        let appended = &logs[logs_before..];
        // The flag is set at the execution instant either by a grant in the
        // same commit, or because the session was already sensitive.
        let granted_here = appended.windows(2).any(|w| {
            w[0].event() == LogEvent::A2Granted
                && w[1].event() == LogEvent::TxExecuted
                && w[0].timestamp() == tx.executed_at
                && w[0].session_id() == Some(&tx.session_id)
        });
        let already_sensitive = status_before == Some(SessionStatus::Sensitive)
            && session
                .as_ref()
                .and_then(Session::a2_timestamp)
                .is_some_and(|t| t <= tx.executed_at);
        if !granted_here && !already_sensitive {
            self.report.fail(|r| &mut r.a2_without_flag, trace, format!("{} executed with a2 = 0", tx.transaction_id));
        }

        // Count grants since the previous level-two execution in this session
        // (the whole session under session scope).
        let session_logs: Vec<&UserLogEntry> = logs
            .iter()
            .filter(|e| e.session_id() == Some(&tx.session_id))
            .collect();
        let tx_marker = format!("tx={}", tx.transaction_id);
        let Some(at) = session_logs.iter().position(|e| e.detail().starts_with(&tx_marker)) else {
            self.report.fail(|r| &mut r.step_up_violations, trace, format!("{} has no tx_executed", tx.transaction_id));
            return;
        };
        let window_start = match self.limits.scope {
            Scope::Session => 0,
            Scope::SingleTransaction => session_logs[..at]
                .iter()
                .rposition(|e| e.event() == LogEvent::TxExecuted && e.detail().contains("level=A2"))
                .map_or(0, |p| p + 1),
        };
        let grants: Vec<&&UserLogEntry> = session_logs[window_start..at]
            .iter()
            .filter(|e| e.event() == LogEvent::A2Granted)
            .collect();
        let matching = grants.len() == 1 && detail_service(grants[0]) == Some(tx.service_id.as_str());
        let consumed = session
            .as_ref()
            .and_then(Session::pending_challenge)
            .is_some_and(|c| c.consumed && c.service_id == tx.service_id);
        if !matching || !consumed {
            self.report.fail(
                |r| &mut r.step_up_violations,
                trace,
                format!(
                    "{}: {} grants in window, challenge consumed = {consumed}",
                    tx.transaction_id,
                    grants.len()
                ),
            );
        }
    }

    fn replay(&mut self, trace: &[Event], rig: &Rig) {
        self.report.replays += 1;
        let logs = rig.engine.kb().log_count();
        let txs = rig.engine.kb().all_transactions().len();
        let result = rig.engine.complete_step_up(&rig.session_id(), &rig.token(), &rig.face);
        let unchanged = rig.engine.kb().log_count() == logs && rig.engine.kb().all_transactions().len() == txs;
        if !matches!(result, Err(EngineError::ChallengeConsumed)) || !unchanged {
            self.report.fail(
                |r| &mut r.replay_failures,
                trace,
                format!("replay gave {result:?}, store unchanged = {unchanged}"),
            );
        }
    }
}

/// Every sequence of exactly `length` events; shorter sequences are checked
/// as prefixes along the way.
pub fn sequences(length: usize) -> impl Iterator<Item = Vec<Event>> {
    let total = EVENTS.len().pow(length as u32);
    (0..total).map(move |mut index| {
        let mut sequence = Vec::with_capacity(length);
        for _ in 0..length {
            sequence.push(EVENTS[index % EVENTS.len()]);
            index /= EVENTS.len();
        }
        sequence
    })
}

pub fn run(length: usize) -> Report {
    let started = Instant::now();
    let mut report = Report::default();
    for scope in [Scope::SingleTransaction, Scope::Session] {
        let mut checker = Checker {
            limits: limits(scope),
            report: &mut report,
        };
        for sequence in sequences(length) {
            checker.report.sequences += 1;
            checker.run_sequence(&sequence);
        }
    }
    report.elapsed = started.elapsed();
    report
}

pub fn summary(report: &Report) -> String {
    let mut out = format!(
        "sequences={} steps={} divergences={} table_violations={} audit_violations={} a2_while_flag_clear={}",
        report.sequences,
        report.steps,
        report.model_divergences,
        report.table_violations,
        report.audit_violations,
        report.a2_without_flag
    );
    let _ = write!(out, " elapsed={:.1}s", report.elapsed.as_secs_f64());
    out
}
