use std::sync::Arc;
use std::thread;

use chrono::TimeZone;

use super::*;
use crate::authenticators::capture_sample;
use crate::catalog::install_default_services;
use crate::clock::ManualClock;
use crate::enrollment::{enrolled_face, enrolled_fingerprint, DeviceSpec};

const ALICE_SEED: u64 = 11;
const BOB_SEED: u64 = 12;

struct Rig {
    engine: Arc<Engine>,
    clock: ManualClock,
}

fn rig_with(config: EngineConfig) -> Rig {
    let kb = Arc::new(KnowledgeBase::in_memory());
    install_default_services(&kb).unwrap();
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 3, 2, 8, 0, 0).unwrap());
    let engine = Engine::new(config, kb, Arc::new(clock.clone()), Some(5)).unwrap();
    for (user, seed) in [("alice", ALICE_SEED), ("bob", BOB_SEED)] {
        engine
            .enroll(&EnrollmentSpec {
                user_id: UserId::from(user),
                full_name: format!("{user} test"),
                pin: "246810".into(),
                devices: vec![
                    DeviceSpec {
                        device_id: DeviceId::new(format!("{user}-phone")),
                        device_type: DeviceType::Smartphone,
                    },
                    DeviceSpec {
                        device_id: DeviceId::new(format!("{user}-pc")),
                        device_type: DeviceType::Desktop,
                    },
                ],
                template_seed: seed,
            })
            .unwrap();
    }
    Rig {
        engine: Arc::new(engine),
        clock,
    }
}

fn rig() -> Rig {
    rig_with(EngineConfig::default())
}

fn pin_login(user: &str, pin: &str, device_type: DeviceType) -> LoginRequest {
    LoginRequest {
        user_id: UserId::from(user),
        credential: Credential::Pin(pin.into()),
        device_type,
        device_source: DeviceSource::Declared,
        geolocation: Geolocation::declared(4.89, 114.94).unwrap(),
    }
}

fn fp_login(user: &str, probe: BiometricTemplate, device_type: DeviceType) -> LoginRequest {
    LoginRequest {
        credential: Credential::Fingerprint {
            device_id: DeviceId::new(format!("{user}-phone")),
            probe,
        },
        ..pin_login(user, "", device_type)
    }
}

impl Rig {
    fn login(&self, user: &str) -> SessionId {
        self.clock.advance_secs(1);
        match self.engine.login(pin_login(user, "246810", DeviceType::Desktop)).unwrap() {
            LoginOutcome::Granted(session) => session.session_id().clone(),
            other => panic!("login refused: {other:?}"),
        }
    }

    fn initiate(&self, session: &SessionId, service: &str) -> Result<TransactionOutcome, EngineError> {
        self.clock.advance_secs(1);
        self.engine
            .initiate_transaction(session, &ServiceId::from(service), Some(Amount::from_minor(5000)))
    }

    fn challenge(&self, session: &SessionId) -> String {
        match self.initiate(session, "funds-transfer").unwrap() {
            TransactionOutcome::StepUpRequired(step_up) => step_up.challenge.token,
            other => panic!("expected a challenge, got {other:?}"),
        }
    }

    fn step_up(&self, session: &SessionId, token: &str, probe: &BiometricTemplate) -> Result<StepUpOutcome, EngineError> {
        self.clock.advance_secs(1);
        self.engine.complete_step_up(session, token, probe)
    }

    fn events(&self, user: &str) -> Vec<LogEvent> {
        self.engine
            .kb()
            .query_logs(&LogFilter {
                user_id: Some(UserId::from(user)),
                ..LogFilter::default()
            })
            .iter()
            .map(UserLogEntry::event)
            .collect()
    }

    fn status(&self, session: &SessionId) -> SessionStatus {
        self.engine.session(session).unwrap().status()
    }
}

#[test]
fn pin_login_on_desktop_opens_online_session() {
    let rig = rig();
    let outcome = rig.engine.login(pin_login("alice", "246810", DeviceType::Desktop)).unwrap();
    let LoginOutcome::Granted(session) = outcome else { panic!("{outcome:?}") };
    assert_eq!(session.status(), SessionStatus::Online);
    assert_eq!(session.a1_method(), A1Method::Pin);
    assert_eq!(session.a1_timestamp(), Some(rig.engine.now()));
    assert_eq!(session.device_type(), DeviceType::Desktop);
    let logs = rig.engine.kb().query_logs(&LogFilter::default());
    assert_eq!(logs.len(), 1);
    assert_eq!(logs[0].event(), LogEvent::A1Granted);
    assert_eq!(logs[0].auth_method_used(), AuthMethod::Pin);
    assert_eq!(logs[0].session_id(), Some(session.session_id()));
    assert_eq!(logs[0].geolocation().latitude(), Some(4.89));
}

#[test]
fn exact_fingerprint_opens_session_on_handheld() {
    let rig = rig();
    let probe = enrolled_fingerprint(ALICE_SEED);
    let outcome = rig.engine.login(fp_login("alice", probe, DeviceType::Smartphone)).unwrap();
    let LoginOutcome::Granted(session) = outcome else { panic!("{outcome:?}") };
    assert_eq!(session.a1_method(), A1Method::Fingerprint);
    assert_eq!(rig.events("alice"), [LogEvent::A1Granted]);
}

#[test]
fn noisy_fingerprint_still_matches_and_strangers_do_not() {
    let rig = rig();
    let noisy = capture_sample(&enrolled_fingerprint(ALICE_SEED), 0.1, 77).unwrap();
    assert!(matches!(
        rig.engine.login(fp_login("alice", noisy, DeviceType::Tablet)).unwrap(),
        LoginOutcome::Granted(_)
    ));
    let bobs = enrolled_fingerprint(BOB_SEED);
    assert!(matches!(
        rig.engine.login(fp_login("alice", bobs, DeviceType::Smartphone)).unwrap(),
        LoginOutcome::Denied { locked: false, remaining_attempts: 2 }
    ));
}

#[test]
fn fingerprint_on_fixed_device_is_refused_without_side_effects() {
    let rig = rig();
    for device_type in [DeviceType::Laptop, DeviceType::Desktop] {
        let request = fp_login("alice", enrolled_fingerprint(ALICE_SEED), device_type);
        assert!(matches!(
            rig.engine.login(request),
            Err(EngineError::DeviceMethodViolation(t)) if t == device_type
        ));
    }
    assert_eq!(rig.engine.kb().log_count(), 0);
}

#[test]
fn unknown_user_and_device() {
    let rig = rig();
    assert!(matches!(
        rig.engine.login(pin_login("mallory", "246810", DeviceType::Desktop)),
        Err(EngineError::UnknownUser(_))
    ));
    let mut request = fp_login("alice", enrolled_fingerprint(ALICE_SEED), DeviceType::Smartphone);
    request.credential = Credential::Fingerprint {
        device_id: DeviceId::from("alice-pc"),
        probe: enrolled_fingerprint(ALICE_SEED),
    };
    assert!(matches!(rig.engine.login(request), Err(EngineError::UnknownDevice(_))));
}

#[test]
fn three_wrong_pins_lock_the_user() {
    let rig = rig();
    let wrong = || rig.engine.login(pin_login("alice", "000000", DeviceType::Desktop)).unwrap();
    assert_eq!(wrong(), LoginOutcome::Denied { locked: false, remaining_attempts: 2 });
    assert_eq!(wrong(), LoginOutcome::Denied { locked: false, remaining_attempts: 1 });
    assert_eq!(wrong(), LoginOutcome::Denied { locked: true, remaining_attempts: 0 });
    assert_eq!(
        rig.events("alice"),
        [LogEvent::A1Denied, LogEvent::A1Denied, LogEvent::A1Denied, LogEvent::Lockout]
    );
    assert!(matches!(
        rig.engine.login(pin_login("alice", "246810", DeviceType::Desktop)),
        Err(EngineError::UserLocked(_))
    ));
    rig.engine.unlock_user(&UserId::from("alice")).unwrap();
    assert!(matches!(
        rig.engine.login(pin_login("alice", "246810", DeviceType::Desktop)).unwrap(),
        LoginOutcome::Granted(_)
    ));
}

#[test]
fn success_resets_the_failure_count() {
    let rig = rig();
    let attempt = |pin: &str| rig.engine.login(pin_login("alice", pin, DeviceType::Desktop)).unwrap();
    attempt("000000");
    attempt("000000");
    assert!(matches!(attempt("246810"), LoginOutcome::Granted(_)));
    attempt("000000");
    assert_eq!(attempt("000000"), LoginOutcome::Denied { locked: false, remaining_attempts: 1 });
    // bob's counter is separate
    assert_eq!(
        rig.engine.login(pin_login("bob", "1", DeviceType::Desktop)).unwrap(),
        LoginOutcome::Denied { locked: false, remaining_attempts: 2 }
    );
}

#[test]
fn a1_service_executes_immediately() {
    let rig = rig();
    let session = rig.login("alice");
    let TransactionOutcome::Executed(record) = rig.initiate(&session, "balance").unwrap() else {
        panic!("expected execution")
    };
    assert_eq!(record.required_level, Sensitivity::A1);
    assert_eq!(record.session_id, session);
    assert_eq!(rig.status(&session), SessionStatus::Online);
    assert_eq!(rig.events("alice"), [LogEvent::A1Granted, LogEvent::TxExecuted]);
}

#[test]
fn a2_service_demands_face_and_records_nothing_yet() {
    let rig = rig();
    let session = rig.login("alice");
    let TransactionOutcome::StepUpRequired(step_up) = rig.initiate(&session, "funds-transfer").unwrap()
    else {
        panic!("expected a challenge")
    };
    assert_eq!(step_up.required_method, AuthMethod::Face);
    assert_eq!(step_up.service_id().as_str(), "funds-transfer");
    assert_eq!(step_up.challenge.token.len(), 64);
    assert!(rig.engine.kb().all_transactions().is_empty());
    assert!(matches!(
        rig.initiate(&session, "funds-transfer"),
        Err(EngineError::ChallengePending)
    ));
    // A1 services stay available while a challenge is pending
    assert!(matches!(rig.initiate(&session, "balance"), Ok(TransactionOutcome::Executed(_))));
}

#[test]
fn unknown_service_and_unauthenticated_session() {
    let rig = rig();
    let session = rig.login("alice");
    assert!(matches!(rig.initiate(&session, "lottery"), Err(EngineError::UnknownService(_))));
    assert!(matches!(
        rig.initiate(&SessionId::from("feedface"), "funds-transfer"),
        Err(EngineError::NotAuthenticated)
    ));
}

#[test]
fn step_up_with_exact_face_executes_and_reverts() {
    let rig = rig();
    let session = rig.login("alice");
    let a1_at = rig.engine.session(&session).unwrap().a1_timestamp().unwrap();
    let token = rig.challenge(&session);
    let outcome = rig.step_up(&session, &token, &enrolled_face(ALICE_SEED)).unwrap();
    let StepUpOutcome::Executed { transaction, status } = outcome else { panic!("{outcome:?}") };
    assert_eq!(status, SessionStatus::Online);
    assert_eq!(transaction.required_level, Sensitivity::A2);
    assert_eq!(transaction.amount, Some(Amount::from_minor(5000)));
    assert!(transaction.executed_at > a1_at);

    let after = rig.engine.session(&session).unwrap();
    assert_eq!(after.status(), SessionStatus::Online);
    assert_eq!(after.a2_timestamp(), None);
    assert!(after.pending_challenge().unwrap().consumed);

    let logs = rig.engine.kb().query_logs(&LogFilter::default());
    let tail: Vec<_> = logs.iter().map(|e| (e.event(), e.auth_method_used(), e.status())).collect();
    assert_eq!(
        tail,
        [
            (LogEvent::A1Granted, AuthMethod::Pin, SessionStatus::Online),
            (LogEvent::A2Granted, AuthMethod::Face, SessionStatus::Sensitive),
            (LogEvent::TxExecuted, AuthMethod::None, SessionStatus::Online),
        ]
    );
    assert!(logs[2].detail().contains("reverted_to=S-2"));
    assert!(logs[2].detail().contains(transaction.transaction_id.as_str()));

    // the next sensitive transaction needs a fresh challenge
    assert!(matches!(
        rig.initiate(&session, "funds-transfer"),
        Ok(TransactionOutcome::StepUpRequired(_))
    ));
}

#[test]
fn session_scope_keeps_sensitive_mode() {
    let rig = rig_with(EngineConfig {
        sensitive_mode_scope: SensitiveModeScope::Session,
        ..EngineConfig::default()
    });
    let session = rig.login("alice");
    let token = rig.challenge(&session);
    let outcome = rig.step_up(&session, &token, &enrolled_face(ALICE_SEED)).unwrap();
    assert!(matches!(outcome, StepUpOutcome::Executed { status: SessionStatus::Sensitive, .. }));
    let s = rig.engine.session(&session).unwrap();
    assert!(s.a2_timestamp().unwrap() > s.a1_timestamp().unwrap());
    let TransactionOutcome::Executed(second) = rig.initiate(&session, "add-payee").unwrap() else {
        panic!("sensitive mode should cover the session")
    };
    assert_eq!(second.required_level, Sensitivity::A2);
    rig.clock.advance_secs(1);
    rig.engine.logout(&session).unwrap();
    let closed = rig.engine.session(&session).unwrap();
    assert_eq!(closed.status(), SessionStatus::Offline);
    assert_eq!((closed.a1_timestamp(), closed.a2_timestamp()), (None, None));
}

#[test]
fn wrong_face_is_denied_until_refused() {
    let rig = rig();
    let session = rig.login("alice");
    let token = rig.challenge(&session);
    let wrong = enrolled_face(ALICE_SEED).complement();
    assert_eq!(
        rig.step_up(&session, &token, &wrong).unwrap(),
        StepUpOutcome::Denied { remaining_attempts: 2, refused: false }
    );
    assert_eq!(
        rig.step_up(&session, &token, &enrolled_face(BOB_SEED)).unwrap(),
        StepUpOutcome::Denied { remaining_attempts: 1, refused: false }
    );
    assert_eq!(
        rig.step_up(&session, &token, &wrong).unwrap(),
        StepUpOutcome::Denied { remaining_attempts: 0, refused: true }
    );
    assert!(matches!(
        rig.step_up(&session, &token, &enrolled_face(ALICE_SEED)),
        Err(EngineError::ChallengeConsumed)
    ));
    assert_eq!(
        rig.events("alice"),
        [
            LogEvent::A1Granted,
            LogEvent::A2Denied,
            LogEvent::A2Denied,
            LogEvent::A2Denied,
            LogEvent::TxRefused
        ]
    );
    assert!(rig.engine.kb().all_transactions().is_empty());
    assert_eq!(rig.status(&session), SessionStatus::Online);
}

#[test]
fn consumed_token_cannot_be_replayed() {
    let rig = rig();
    let session = rig.login("alice");
    let token = rig.challenge(&session);
    let face = enrolled_face(ALICE_SEED);
    rig.step_up(&session, &token, &face).unwrap();
    let before = rig.engine.kb().snapshot();
    assert!(matches!(rig.step_up(&session, &token, &face), Err(EngineError::ChallengeConsumed)));
    // still consumed after a newer challenge replaces it
    rig.challenge(&session);
    assert!(matches!(rig.step_up(&session, &token, &face), Err(EngineError::ChallengeConsumed)));
    assert_eq!(rig.engine.kb().snapshot(), before);
}

#[test]
fn challenge_expires_after_its_ttl() {
    let rig = rig();
    let session = rig.login("alice");
    let token = rig.challenge(&session);
    rig.clock.advance_secs(120);
    assert!(matches!(
        rig.engine.complete_step_up(&session, &token, &enrolled_face(ALICE_SEED)),
        Ok(StepUpOutcome::Executed { .. })
    ));

    let token = rig.challenge(&session);
    rig.clock.advance_secs(121);
    assert!(matches!(
        rig.engine.complete_step_up(&session, &token, &enrolled_face(ALICE_SEED)),
        Err(EngineError::ChallengeExpired)
    ));
    // an expired challenge does not block a new one, and stays expired
    let fresh = rig.challenge(&session);
    assert_ne!(fresh, token);
    assert!(matches!(
        rig.step_up(&session, &token, &enrolled_face(ALICE_SEED)),
        Err(EngineError::ChallengeExpired)
    ));
}

#[test]
fn tokens_are_bound_to_their_session() {
    let rig = rig();
    let alice = rig.login("alice");
    let bob = rig.login("bob");
    let token = rig.challenge(&alice);
    assert!(matches!(
        rig.step_up(&bob, &token, &enrolled_face(BOB_SEED)),
        Err(EngineError::ChallengeMismatch)
    ));
    assert!(matches!(
        rig.step_up(&alice, "not-a-token", &enrolled_face(ALICE_SEED)),
        Err(EngineError::ChallengeMismatch)
    ));
    assert!(matches!(
        rig.step_up(&alice, &token, &enrolled_fingerprint(ALICE_SEED)),
        Err(EngineError::ProbeKind { .. })
    ));
    assert!(matches!(
        rig.step_up(&alice, &token, &enrolled_face(ALICE_SEED)),
        Ok(StepUpOutcome::Executed { .. })
    ));
}

#[test]
fn logout_closes_and_second_logout_is_unknown() {
    let rig = rig();
    let session = rig.login("alice");
    rig.engine.logout(&session).unwrap();
    assert_eq!(rig.status(&session), SessionStatus::Offline);
    assert!(matches!(rig.engine.logout(&session), Err(EngineError::UnknownSession)));
    assert!(matches!(rig.initiate(&session, "balance"), Err(EngineError::SessionExpired)));
    assert!(matches!(
        rig.engine.logout(&SessionId::from("nope")),
        Err(EngineError::UnknownSession)
    ));
    assert_eq!(rig.events("alice"), [LogEvent::A1Granted, LogEvent::Logout]);
}

#[test]
fn sweep_expires_once() {
    let rig = rig();
    assert_eq!(rig.engine.sweep_expired(rig.engine.now()).unwrap(), 0);
    let session = rig.login("alice");
    let created = rig.engine.now();
    assert_eq!(rig.engine.sweep_expired(created + chrono::Duration::seconds(600)).unwrap(), 0);
    assert_eq!(rig.engine.sweep_expired(created + chrono::Duration::seconds(601)).unwrap(), 1);
    assert_eq!(rig.status(&session), SessionStatus::Offline);
    assert_eq!(rig.engine.sweep_expired(created + chrono::Duration::seconds(602)).unwrap(), 0);
    assert_eq!(rig.events("alice"), [LogEvent::A1Granted, LogEvent::Timeout]);
}

#[test]
fn expired_session_is_closed_on_next_use() {
    let rig = rig();
    let session = rig.login("alice");
    let token = rig.challenge(&session);
    rig.clock.advance_secs(600);
    assert!(matches!(
        rig.engine.complete_step_up(&session, &token, &enrolled_face(ALICE_SEED)),
        Err(EngineError::SessionExpired)
    ));
    assert_eq!(rig.status(&session), SessionStatus::Offline);
    assert_eq!(rig.events("alice"), [LogEvent::A1Granted, LogEvent::Timeout]);
    assert!(matches!(rig.engine.list_services(&session), Err(EngineError::SessionExpired)));
}

#[test]
fn forgetting_closed_sessions() {
    let rig = rig();
    let session = rig.login("alice");
    let live = rig.login("bob");
    rig.engine.logout(&session).unwrap();
    let later = rig.engine.now() + chrono::Duration::seconds(10_000);
    assert_eq!(rig.engine.forget_closed(later), 1);
    assert!(rig.engine.session(&session).is_none());
    assert!(rig.engine.session(&live).is_some());
    assert!(matches!(rig.initiate(&session, "balance"), Err(EngineError::NotAuthenticated)));
}

#[test]
fn upgrades_are_per_user_and_one_way() {
    let rig = rig();
    let alice = rig.login("alice");
    let bob = rig.login("bob");
    let view = rig.engine.upgrade_service(&alice, &ServiceId::from("bill-payment")).unwrap();
    assert_eq!(view.sensitivity(), Sensitivity::A2);
    assert_eq!(view.classified_by(), crate::domain::ClassifiedBy::User);
    assert!(matches!(
        rig.engine.upgrade_service(&alice, &ServiceId::from("bill-payment")),
        Err(EngineError::AlreadyA2(_))
    ));
    assert!(matches!(
        rig.engine.upgrade_service(&alice, &ServiceId::from("funds-transfer")),
        Err(EngineError::AlreadyA2(_))
    ));
    assert!(matches!(
        rig.engine.upgrade_service(&alice, &ServiceId::from("nothing")),
        Err(EngineError::UnknownService(_))
    ));
    assert!(matches!(
        rig.initiate(&alice, "bill-payment"),
        Ok(TransactionOutcome::StepUpRequired(_))
    ));
    assert!(matches!(rig.initiate(&bob, "bill-payment"), Ok(TransactionOutcome::Executed(_))));
    let logged = rig.engine.kb().query_logs(&LogFilter {
        event: Some(LogEvent::ServiceUpgraded),
        ..LogFilter::default()
    });
    assert_eq!(logged.len(), 1);
    assert_eq!(logged[0].session_id(), Some(&alice));

    let admin = rig
        .engine
        .upgrade_service_sensitivity(&UserId::from("bob"), &ServiceId::from("statement"))
        .unwrap();
    assert_eq!(admin.owner_user_id(), Some(&UserId::from("bob")));
}

#[test]
fn services_and_logs_are_scoped_to_the_session_user() {
    let rig = rig();
    let alice = rig.login("alice");
    let bob = rig.login("bob");
    rig.initiate(&bob, "balance").unwrap();
    assert_eq!(rig.engine.list_services(&alice).unwrap().len(), 5);
    let mine = rig.engine.user_logs(&alice, None).unwrap();
    assert!(mine.iter().all(|e| e.user_id().as_str() == "alice"));
    assert_eq!(mine.len(), 1);
    assert!(rig.engine.user_logs(&alice, Some(&bob)).unwrap().is_empty());
}

#[test]
fn concurrent_initiations_issue_one_challenge() {
    let rig = rig();
    let session = rig.login("alice");
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let engine = Arc::clone(&rig.engine);
            let session = session.clone();
            thread::spawn(move || {
                engine.initiate_transaction(&session, &ServiceId::from("funds-transfer"), None)
            })
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    let issued = results
        .iter()
        .filter(|r| matches!(r, Ok(TransactionOutcome::StepUpRequired(_))))
        .count();
    let pending = results
        .iter()
        .filter(|r| matches!(r, Err(EngineError::ChallengePending)))
        .count();
    assert_eq!((issued, pending), (1, 7));
}

#[test]
fn distinct_sessions_run_in_parallel() {
    let rig = rig();
    let sessions: Vec<_> = (0..4).map(|_| rig.login("alice")).collect();
    let handles: Vec<_> = sessions
        .into_iter()
        .map(|session| {
            let engine = Arc::clone(&rig.engine);
            thread::spawn(move || {
                for _ in 0..10 {
                    engine
                        .initiate_transaction(&session, &ServiceId::from("balance"), None)
                        .unwrap();
                }
            })
        })
        .collect();
    for handle in handles {
        handle.join().unwrap();
    }
    assert_eq!(rig.engine.kb().all_transactions().len(), 40);
}

#[test]
fn seeded_engines_draw_identical_identifiers() {
    let (a, b) = (rig(), rig());
    assert_eq!(a.login("alice"), b.login("alice"));
    assert_eq!(a.engine.kb().snapshot(), b.engine.kb().snapshot());
}
