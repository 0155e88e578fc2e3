//! Randomized fingerprint logins over HTTP: fixed devices must always be
//! refused, handhelds presenting an exact capture must always be let in.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use iam_core::authenticators::capture_sample;
use iam_core::catalog::install_default_services;
use iam_core::domain::{DeviceId, DeviceType, UserId, UserStatus};
use iam_core::enrollment::{enrolled_fingerprint, DeviceSpec, EnrollmentSpec};
use iam_core::{Engine, EngineConfig, KnowledgeBase, ManualClock};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

use crate::http::{runtime, Gateway};

pub const SEED: u64 = 0x4445_5649;
pub const ATTEMPTS: usize = 100;
const USERS: u64 = 5;

const FIXED_AGENTS: [(&str, DeviceType); 3] = [
    ("Mozilla/5.0 (Windows NT 10.0; Win64; x64)", DeviceType::Desktop),
    ("Mozilla/5.0 (X11; Linux x86_64)", DeviceType::Desktop),
    ("BankClient/3.2 (Laptop; macOS 14)", DeviceType::Laptop),
];
const HANDHELD_AGENTS: [(&str, DeviceType); 2] = [
    ("Mozilla/5.0 (Linux; Android 14; Pixel 8) Mobile Safari", DeviceType::Smartphone),
    ("Mozilla/5.0 (iPad; CPU OS 17_0 like Mac OS X)", DeviceType::Tablet),
];

#[derive(Debug, Default)]
pub struct Report {
    pub fixed_attempts: usize,
    pub fixed_refused: usize,
    pub handheld_attempts: usize,
    pub handheld_granted: usize,
    /// Audit entries or lockouts caused by the refused attempts.
    pub side_effects: usize,
    pub first_failure: Option<String>,
}

impl Report {
    fn note(&mut self, message: String) {
        self.first_failure.get_or_insert(message);
    }

    pub fn clean(&self) -> bool {
        self.fixed_attempts == ATTEMPTS
            && self.fixed_refused == ATTEMPTS
            && self.handheld_attempts == ATTEMPTS
            && self.handheld_granted == ATTEMPTS
            && self.side_effects == 0
    }
}

fn user(i: u64) -> String {
    format!("dr-{i}")
}

fn device(i: u64, kind: DeviceType) -> DeviceId {
    DeviceId::new(format!("dr-{i}-{kind}"))
}

fn engine() -> Arc<Engine> {
    let kb = Arc::new(KnowledgeBase::in_memory());
    install_default_services(&kb).expect("catalog");
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 9, 1, 12, 0, 0).unwrap());
    let engine = Engine::new(EngineConfig::default(), kb, Arc::new(clock), Some(SEED)).expect("engine");
    for i in 0..USERS {
        engine
            .enroll(&EnrollmentSpec {
                user_id: UserId::new(user(i)),
                full_name: format!("Device Rule {i}"),
                pin: "97531".into(),
                devices: [DeviceType::Smartphone, DeviceType::Tablet, DeviceType::Desktop, DeviceType::Laptop]
                    .into_iter()
                    .map(|kind| DeviceSpec {
                        device_id: device(i, kind),
                        device_type: kind,
                    })
                    .collect(),
                template_seed: 500 + i,
            })
            .expect("enroll");
    }
    Arc::new(engine)
}

/// Fingerprint login body; without `declare` the gateway falls back to the
/// agent string for the device type.
fn attempt(i: u64, device_id: &DeviceId, probe_hex: String, kind: DeviceType, declare: bool) -> Value {
    let mut body = json!({
        "user_id": user(i),
        "method": "fingerprint",
        "device_id": device_id,
        "fingerprint_probe_hex": probe_hex,
    });
    if declare {
        body["device_type"] = json!(kind);
    }
    body
}

pub fn run() -> Report {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let engine = engine();
    let mut report = Report::default();
    let rt = runtime();
    rt.block_on(async {
        let gateway = Gateway::spawn(Arc::clone(&engine)).await;
        let logs_before = engine.kb().log_count();
        for _ in 0..ATTEMPTS {
            let i = rng.random_range(0..USERS);
            let (agent, kind) = *FIXED_AGENTS.choose(&mut rng).expect("agents");
            // Any bound device id, and a probe that would otherwise match,
            // nearly match, or be noise.
            let bound = *[DeviceType::Smartphone, DeviceType::Tablet, DeviceType::Desktop, DeviceType::Laptop]
                .choose(&mut rng)
                .expect("kinds");
            let enrolled = enrolled_fingerprint(500 + i);
            let probe = match rng.random_range(0..3) {
                0 => enrolled.to_hex(),
                1 => capture_sample(&enrolled, 0.1, rng.next_u64()).expect("capture").to_hex(),
                _ => {
                    let mut bytes = [0u8; 32];
                    rng.fill_bytes(&mut bytes);
                    hex::encode(bytes)
                }
            };
            let body = attempt(i, &device(i, bound), probe, kind, rng.random_bool(0.5));
            let reply = gateway
                .send(Method::POST, "/login", None, &[("user-agent", agent)], Some(&body))
                .await;
            report.fixed_attempts += 1;
            if reply.status == StatusCode::FORBIDDEN && reply.code() == "DEVICE_METHOD_VIOLATION" {
                report.fixed_refused += 1;
            } else {
                report.note(format!("{kind} attempt answered {} {}", reply.status, reply.body));
            }
        }
        if engine.kb().log_count() != logs_before {
            report.side_effects += engine.kb().log_count() - logs_before;
            report.note("refused attempts wrote audit entries".into());
        }
        for i in 0..USERS {
            let status = engine.kb().get_user(&UserId::new(user(i))).map(|u| u.status);
            if !matches!(status, Ok(UserStatus::Active)) {
                report.side_effects += 1;
                report.note(format!("{} changed status", user(i)));
            }
        }

        for _ in 0..ATTEMPTS {
            let i = rng.random_range(0..USERS);
            let (agent, kind) = *HANDHELD_AGENTS.choose(&mut rng).expect("agents");
            let probe = capture_sample(&enrolled_fingerprint(500 + i), 0.0, rng.next_u64()).expect("capture");
            let body = attempt(i, &device(i, kind), probe.to_hex(), kind, rng.random_bool(0.5));
            let reply = gateway
                .send(Method::POST, "/login", None, &[("user-agent", agent)], Some(&body))
                .await;
            report.handheld_attempts += 1;
            let granted = reply.status == StatusCode::OK
                && reply.body["status"] == "S-2"
                && reply.body["a1_method"] == "fingerprint"
                && reply.body["device_type"] == json!(kind);
            if granted {
                report.handheld_granted += 1;
            } else {
                report.note(format!("{kind} attempt answered {} {}", reply.status, reply.body));
            }
        }
    });
    report
}
