//! Seeded random sequences of bank classifications and user upgrades, with
//! every resolved sensitivity compared before and after each operation, then
//! a probe of every HTTP shape a downgrade could take.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use iam_core::domain::{Sensitivity, ServiceDefinition, ServiceId, UserId};
use iam_core::enrollment::EnrollmentSpec;
use iam_core::kb::KbError;
use iam_core::{Engine, EngineConfig, EngineError, KnowledgeBase, ManualClock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use reqwest::{Method, StatusCode};
use serde_json::json;

use crate::http::{runtime, Gateway};

pub const SEED: u64 = 0x4d4f_4e4f;
const USERS: [&str; 3] = ["m-ana", "m-ben", "m-cyd"];
const SERVICES: [&str; 4] = ["svc-a", "svc-b", "svc-c", "svc-d"];

#[derive(Debug, Default)]
pub struct Report {
    pub sequences: u64,
    pub operations: u64,
    pub rejected_downgrades: u64,
    pub already_a2: u64,
    pub decreases: u64,
    pub model_mismatches: u64,
    pub route_probes: u64,
    pub routes_that_changed_state: u64,
    pub routes_not_refused: u64,
    pub first_failure: Option<String>,
}

impl Report {
    fn note(&mut self, message: String) {
        self.first_failure.get_or_insert(message);
    }

    pub fn clean(&self) -> bool {
        self.decreases == 0
            && self.model_mismatches == 0
            && self.routes_that_changed_state == 0
            && self.routes_not_refused == 0
    }
}

fn engine() -> Engine {
    let kb = Arc::new(KnowledgeBase::in_memory());
    for id in SERVICES {
        kb.upsert_service(ServiceDefinition::bank(ServiceId::from(id), id, Sensitivity::A1))
            .expect("seed service");
    }
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 7, 1, 0, 0, 0).unwrap());
    let engine = Engine::new(EngineConfig::default(), kb, Arc::new(clock), Some(1)).expect("engine");
    for (i, user) in USERS.iter().enumerate() {
        engine
            .enroll(&EnrollmentSpec {
                user_id: UserId::from(*user),
                full_name: user.to_string(),
                pin: "13579".into(),
                devices: Vec::new(),
                template_seed: i as u64,
            })
            .expect("enroll");
    }
    engine
}

type Levels = HashMap<(usize, usize), Sensitivity>;

fn resolved(engine: &Engine) -> Levels {
    let mut out = HashMap::new();
    for (u, user) in USERS.iter().enumerate() {
        for (s, service) in SERVICES.iter().enumerate() {
            let level = engine
                .kb()
                .resolve_sensitivity(&UserId::from(*user), &ServiceId::from(*service))
                .expect("resolve");
            out.insert((u, s), level);
        }
    }
    out
}

pub fn run_sequences(count: u64, length: usize) -> Report {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let mut report = Report::default();
    for seq in 0..count {
        report.sequences += 1;
        let engine = engine();
        // Reference: a bank flag per service and an upgrade flag per pair.
        let mut bank_a2 = [false; SERVICES.len()];
        let mut upgraded = [[false; SERVICES.len()]; USERS.len()];
        let mut before = resolved(&engine);
        for op in 0..length {
            report.operations += 1;
            let s = rng.random_range(0..SERVICES.len());
            let service = ServiceId::from(SERVICES[s]);
            if rng.random_bool(0.5) {
                let level = if rng.random_bool(0.5) { Sensitivity::A2 } else { Sensitivity::A1 };
                let result = engine
                    .kb()
                    .upsert_service(ServiceDefinition::bank(service, SERVICES[s], level));
                match result {
                    Ok(()) if level == Sensitivity::A2 => bank_a2[s] = true,
                    Ok(()) if !bank_a2[s] => {}
                    Err(KbError::SensitivityDowngrade(_)) if bank_a2[s] => report.rejected_downgrades += 1,
                    other => {
                        report.model_mismatches += 1;
                        report.note(format!("seq {seq} op {op}: classify {level} gave {other:?}"));
                    }
                }
            } else {
                let u = rng.random_range(0..USERS.len());
                let result = engine.upgrade_service_sensitivity(&UserId::from(USERS[u]), &service);
                let was_a2 = bank_a2[s] || upgraded[u][s];
                match result {
                    Ok(_) if !was_a2 => upgraded[u][s] = true,
                    Err(EngineError::AlreadyA2(_)) if was_a2 => report.already_a2 += 1,
                    other => {
                        report.model_mismatches += 1;
                        report.note(format!("seq {seq} op {op}: upgrade gave {other:?}"));
                    }
                }
            }
            let after = resolved(&engine);
            for (key, level) in &after {
                if *level < before[key] {
                    report.decreases += 1;
                    report.note(format!("seq {seq} op {op}: {key:?} fell to {level}"));
                }
                let expected = if bank_a2[key.1] || upgraded[key.0][key.1] {
                    Sensitivity::A2
                } else {
                    Sensitivity::A1
                };
                if *level != expected {
                    report.model_mismatches += 1;
                    report.note(format!("seq {seq} op {op}: {key:?} is {level}, reference {expected}"));
                }
            }
            before = after;
        }
    }
    report
}

/// Every request shape that could lower a service, sent by a customer and by
/// an operator. None may succeed or change a resolved sensitivity.
pub fn probe_routes(report: &mut Report) {
    let engine = Arc::new(engine());
    engine
        .upgrade_service_sensitivity(&UserId::from(USERS[0]), &ServiceId::from(SERVICES[0]))
        .expect("upgrade");
    engine
        .kb()
        .upsert_service(ServiceDefinition::bank(ServiceId::from(SERVICES[1]), SERVICES[1], Sensitivity::A2))
        .expect("classify");
    let before = resolved(&engine);
    let rt = runtime();
    rt.block_on(async {
        let gateway = Gateway::spawn(Arc::clone(&engine)).await;
        let login = gateway
            .post(
                "/login",
                None,
                &json!({"user_id": USERS[0], "method": "pin", "pin": "13579", "device_type": "desktop"}),
            )
            .await;
        let token = login.body["token"].as_str().unwrap_or_default().to_owned();
        let lower = json!({"sensitivity": "A1"});
        let admin = [("x-admin-token", crate::http::ADMIN_TOKEN)];
        let mut probes = Vec::new();
        for service in [SERVICES[0], SERVICES[1]] {
            for (method, path) in [
                (Method::POST, format!("/services/{service}/downgrade")),
                (Method::DELETE, format!("/services/{service}/upgrade")),
                (Method::PUT, format!("/services/{service}/upgrade")),
                (Method::PATCH, format!("/services/{service}")),
                (Method::PUT, format!("/services/{service}")),
                (Method::DELETE, format!("/services/{service}")),
                (Method::POST, format!("/services/{service}/upgrade")),
                (Method::POST, format!("/admin/services/{service}")),
                (Method::PUT, format!("/admin/services/{service}")),
            ] {
                for headers in [&[][..], &admin[..]] {
                    probes.push(
                        gateway
                            .send(method.clone(), &path, Some(&token), headers, Some(&lower))
                            .await,
                    );
                }
            }
        }
        for reply in probes {
            report.route_probes += 1;
            let refused = matches!(
                (reply.status, reply.code()),
                (StatusCode::NOT_FOUND, "UNKNOWN_ROUTE")
                    | (StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED")
                    | (StatusCode::CONFLICT, "ALREADY_A2")
                    | (StatusCode::UNPROCESSABLE_ENTITY, "MALFORMED_BODY")
            );
            if !refused {
                report.routes_not_refused += 1;
                report.note(format!("route probe answered {} {}", reply.status, reply.body));
            }
        }
    });
    if resolved(&engine) != before {
        report.routes_that_changed_state += 1;
        report.note("a route probe changed a resolved sensitivity".into());
    }
}
