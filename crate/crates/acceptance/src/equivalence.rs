//! One scripted scenario, driven once through the HTTP gateway and once
//! straight into the engine, each on its own file-backed store with the same
//! seed and clock. The two data directories must match byte for byte, and
//! every step must produce the same status and error code.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use iam_core::authenticators::capture_sample;
use iam_core::catalog::install_default_services;
use iam_core::domain::{Amount, BiometricTemplate, DeviceId, DeviceType, Geolocation, ServiceId, SessionId, UserId};
use iam_core::engine::{Credential, DeviceSource, LoginOutcome, LoginRequest, StepUpOutcome, TransactionOutcome};
use iam_core::enrollment::{enrolled_face, enrolled_fingerprint, DeviceSpec, EnrollmentSpec};
use iam_core::{Engine, EngineConfig, EngineError, KnowledgeBase, ManualClock};
use iam_gateway::ApiError;
use serde_json::{json, Value};

use crate::http::{runtime, Gateway, Reply};

pub const RUN_SEED: u64 = 0x4551_5549;
const ALICE_SEED: u64 = 71;
const BOB_SEED: u64 = 72;
const TTL: i64 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Who {
    Alice,
    Bob,
}

#[derive(Debug, Clone)]
enum Step {
    Enroll(Who),
    PinLogin { who: Who, pin: &'static str, device: DeviceType },
    FingerprintLogin { who: Who, device: DeviceType },
    Services(Who),
    Transaction { who: Who, service: &'static str, amount: &'static str },
    FaceCheck { who: Who, matching: bool },
    Upgrade { who: Who, service: &'static str },
    Logs(Who),
    Logout(Who),
    /// Runs the inner step after the session lifetime has run out.
    Late(Box<Step>),
}

fn script() -> Vec<Step> {
    use Step::*;
    use Who::*;
    vec![
        Enroll(Alice),
        Enroll(Bob),
        PinLogin { who: Alice, pin: "8642", device: DeviceType::Desktop },
        FingerprintLogin { who: Bob, device: DeviceType::Tablet },
        Services(Alice),
        Transaction { who: Alice, service: "balance", amount: "12.50" },
        Transaction { who: Alice, service: "funds-transfer", amount: "250" },
        FaceCheck { who: Alice, matching: false },
        FaceCheck { who: Alice, matching: true },
        FaceCheck { who: Alice, matching: true },
        Upgrade { who: Bob, service: "bill-payment" },
        Transaction { who: Bob, service: "bill-payment", amount: "80.05" },
        FaceCheck { who: Bob, matching: true },
        PinLogin { who: Alice, pin: "1111", device: DeviceType::Laptop },
        Logs(Alice),
        Logout(Bob),
        FingerprintLogin { who: Alice, device: DeviceType::Desktop },
        Transaction { who: Alice, service: "statement", amount: "0" },
        Late(Box::new(Transaction { who: Alice, service: "balance", amount: "1" })),
        PinLogin { who: Alice, pin: "8642", device: DeviceType::Desktop },
    ]
}

fn spec(who: Who) -> EnrollmentSpec {
    let (id, pin, seed, devices) = match who {
        Who::Alice => (
            "alice",
            "8642",
            ALICE_SEED,
            vec![("al-phone", DeviceType::Smartphone), ("al-pc", DeviceType::Desktop)],
        ),
        Who::Bob => ("bob", "97531", BOB_SEED, vec![("bo-tab", DeviceType::Tablet)]),
    };
    EnrollmentSpec {
        user_id: UserId::from(id),
        full_name: format!("{id} example"),
        pin: pin.into(),
        devices: devices
            .into_iter()
            .map(|(d, t)| DeviceSpec {
                device_id: DeviceId::from(d),
                device_type: t,
            })
            .collect(),
        template_seed: seed,
    }
}

fn fingerprint_device(who: Who) -> DeviceId {
    spec(who)
        .devices
        .iter()
        .find(|d| d.device_type.supports_fingerprint())
        .map(|d| d.device_id.clone())
        .expect("handheld")
}

fn face_probe(who: Who, matching: bool) -> BiometricTemplate {
    let enrolled = enrolled_face(spec(who).template_seed);
    if matching {
        capture_sample(&enrolled, 0.1, 5).expect("capture")
    } else {
        enrolled.complement()
    }
}

fn geo() -> Geolocation {
    Geolocation::declared(4.9, 114.9).expect("geo")
}

fn open_side(root: &Path) -> (Arc<Engine>, ManualClock) {
    let kb = Arc::new(KnowledgeBase::open(root).expect("open store"));
    install_default_services(&kb).expect("catalog");
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 10, 5, 8, 30, 0).unwrap());
    let engine = Engine::new(EngineConfig::default(), kb, Arc::new(clock.clone()), Some(RUN_SEED)).expect("engine");
    (Arc::new(engine), clock)
}

fn error_label(err: EngineError) -> String {
    let api = ApiError::from(err);
    format!("{} {}", api.http_status, api.code)
}

/// Direct calls, labelled the way the gateway would answer.
struct Direct {
    engine: Arc<Engine>,
    sessions: BTreeMap<Who, SessionId>,
    challenges: BTreeMap<Who, String>,
}

impl Direct {
    fn session(&self, who: Who) -> SessionId {
        self.sessions.get(&who).cloned().unwrap_or_else(|| SessionId::from("none"))
    }

    fn login(&mut self, who: Who, credential: Credential, device: DeviceType) -> String {
        let request = LoginRequest {
            user_id: spec(who).user_id,
            credential,
            device_type: device,
            device_source: DeviceSource::Declared,
            geolocation: geo(),
        };
        match self.engine.login(request) {
            Ok(LoginOutcome::Granted(session)) => {
                let label = format!("200 {}", session.status());
                self.sessions.insert(who, session.session_id().clone());
                label
            }
            Ok(LoginOutcome::Denied { .. }) => "401 AUTH_DENIED".into(),
            Err(err) => error_label(err),
        }
    }

    fn run(&mut self, step: &Step) -> String {
        match *step {
            Step::Enroll(who) => match self.engine.enroll(&spec(who)) {
                Ok(_) => "201".into(),
                Err(err) => error_label(err),
            },
            Step::PinLogin { who, pin, device } => self.login(who, Credential::Pin(pin.into()), device),
            Step::FingerprintLogin { who, device } => {
                let credential = Credential::Fingerprint {
                    device_id: fingerprint_device(who),
                    probe: enrolled_fingerprint(spec(who).template_seed),
                };
                self.login(who, credential, device)
            }
            Step::Services(who) => match self.engine.list_services(&self.session(who)) {
                Ok(_) => "200".into(),
                Err(err) => error_label(err),
            },
            Step::Transaction { who, service, amount } => {
                let amount: Amount = amount.parse().expect("amount");
                let session = self.session(who);
                match self.engine.initiate_transaction(&session, &ServiceId::from(service), Some(amount)) {
                    Ok(TransactionOutcome::Executed(_)) => {
                        format!("200 {}", self.engine.session(&session).expect("session").status())
                    }
                    Ok(TransactionOutcome::StepUpRequired(step_up)) => {
                        self.challenges.insert(who, step_up.challenge.token);
                        "200 challenge".into()
                    }
                    Err(err) => error_label(err),
                }
            }
            Step::FaceCheck { who, matching } => {
                let token = self.challenges.get(&who).cloned().unwrap_or_default();
                match self.engine.complete_step_up(&self.session(who), &token, &face_probe(who, matching)) {
                    Ok(StepUpOutcome::Executed { status, .. }) => format!("200 {status}"),
                    Ok(StepUpOutcome::Denied { refused: false, .. }) => "403 STEP_UP_DENIED".into(),
                    Ok(StepUpOutcome::Denied { refused: true, .. }) => "403 TRANSACTION_REFUSED".into(),
                    Err(err) => error_label(err),
                }
            }
            Step::Upgrade { who, service } => {
                match self.engine.upgrade_service(&self.session(who), &ServiceId::from(service)) {
                    Ok(_) => "200".into(),
                    Err(err) => error_label(err),
                }
            }
            Step::Logs(who) => match self.engine.user_logs(&self.session(who), None) {
                Ok(_) => "200".into(),
                Err(err) => error_label(err),
            },
            Step::Logout(who) => match self.engine.logout(&self.session(who)) {
                Ok(()) => "200 S-1".into(),
                Err(err) => error_label(err),
            },
            Step::Late(_) => unreachable!("unwrapped by the driver"),
        }
    }
}

/// The same steps as HTTP requests.
struct Http {
    gateway: Gateway,
    tokens: BTreeMap<Who, String>,
    challenges: BTreeMap<Who, String>,
}

fn label(reply: &Reply) -> String {
    let mut out = reply.status.as_u16().to_string();
    if let Some(code) = reply.body.get("code").and_then(Value::as_str) {
        out.push(' ');
        out.push_str(code);
    } else if reply.body.get("step_up_required").is_some() {
        out.push_str(" challenge");
    } else if let Some(status) = reply.body.get("status").and_then(Value::as_str) {
        out.push(' ');
        out.push_str(status);
    }
    out
}

impl Http {
    fn token(&self, who: Who) -> Option<&str> {
        self.tokens.get(&who).map(String::as_str)
    }

    async fn login(&mut self, who: Who, body: Value) -> String {
        let reply = self.gateway.post("/login", None, &body).await;
        if let Some(token) = reply.body.get("token").and_then(Value::as_str) {
            self.tokens.insert(who, token.to_owned());
        }
        label(&reply)
    }

    async fn run(&mut self, step: &Step) -> String {
        match *step {
            Step::Enroll(who) => {
                let s = spec(who);
                let body = json!({
                    "user_id": s.user_id,
                    "full_name": s.full_name,
                    "pin": s.pin,
                    "devices": s.devices.iter().map(|d| json!({"device_id": d.device_id, "device_type": d.device_type})).collect::<Vec<_>>(),
                    "template_seed": s.template_seed,
                });
                label(&self.gateway.admin_post("/admin/users", &body).await)
            }
            Step::PinLogin { who, pin, device } => {
                let body = json!({
                    "user_id": spec(who).user_id, "method": "pin", "pin": pin, "device_type": device,
                    "geolocation": {"latitude": 4.9, "longitude": 114.9},
                });
                self.login(who, body).await
            }
            Step::FingerprintLogin { who, device } => {
                let body = json!({
                    "user_id": spec(who).user_id, "method": "fingerprint",
                    "device_id": fingerprint_device(who),
                    "fingerprint_probe_hex": enrolled_fingerprint(spec(who).template_seed).to_hex(),
                    "device_type": device,
                    "geolocation": {"latitude": 4.9, "longitude": 114.9},
                });
                self.login(who, body).await
            }
            Step::Services(who) => label(&self.gateway.get("/services", self.token(who)).await),
            Step::Transaction { who, service, amount } => {
                let body = json!({"service_id": service, "amount": amount});
                let reply = self.gateway.post("/transactions", self.token(who), &body).await;
                if let Some(token) = reply.body.get("challenge").and_then(Value::as_str) {
                    self.challenges.insert(who, token.to_owned());
                }
                label(&reply)
            }
            Step::FaceCheck { who, matching } => {
                let body = json!({
                    "challenge": self.challenges.get(&who).cloned().unwrap_or_default(),
                    "face_probe_hex": face_probe(who, matching).to_hex(),
                });
                label(&self.gateway.post("/step-up", self.token(who), &body).await)
            }
            Step::Upgrade { who, service } => {
                let path = format!("/services/{service}/upgrade");
                label(&self.gateway.post(&path, self.token(who), &json!({})).await)
            }
            Step::Logs(who) => label(&self.gateway.get("/logs", self.token(who)).await),
            Step::Logout(who) => label(&self.gateway.post("/logout", self.token(who), &json!({})).await),
            Step::Late(_) => unreachable!("unwrapped by the driver"),
        }
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let Ok(entries) = fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let name = path.strip_prefix(root).expect("under root").display().to_string();
                out.insert(name, fs::read(&path).expect("read"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[derive(Debug, Default)]
pub struct Report {
    pub steps: usize,
    pub http_labels: Vec<String>,
    pub direct_labels: Vec<String>,
    pub files_compared: usize,
    pub bytes_compared: usize,
    pub differing_files: Vec<String>,
}

impl Report {
    pub fn clean(&self) -> bool {
        self.steps == 20
            && self.http_labels == self.direct_labels
            && self.differing_files.is_empty()
            && self.files_compared > 0
    }

    pub fn first_label_difference(&self) -> Option<String> {
        self.http_labels
            .iter()
            .zip(&self.direct_labels)
            .enumerate()
            .find(|(_, (a, b))| a != b)
            .map(|(i, (a, b))| format!("step {}: http {a}, direct {b}", i + 1))
    }
}

/// Advances the clock for `step` and returns the step to execute.
fn timed<'a>(step: &'a Step, clock: &ManualClock) -> &'a Step {
    match step {
        Step::Late(inner) => {
            clock.advance_secs(TTL + 1);
            inner
        }
        other => {
            clock.advance_secs(1);
            other
        }
    }
}

pub fn run_in(http_root: &Path, direct_root: &Path) -> Report {
    let steps = script();
    let mut report = Report {
        steps: steps.len(),
        ..Report::default()
    };

    let (engine, clock) = open_side(direct_root);
    let mut direct = Direct {
        engine,
        sessions: BTreeMap::new(),
        challenges: BTreeMap::new(),
    };
    for step in &steps {
        let step = timed(step, &clock);
        report.direct_labels.push(direct.run(step));
    }
    drop(direct);

    let (engine, clock) = open_side(http_root);
    let rt = runtime();
    rt.block_on(async {
        let mut http = Http {
            gateway: Gateway::spawn(Arc::clone(&engine)).await,
            tokens: BTreeMap::new(),
            challenges: BTreeMap::new(),
        };
        for step in &steps {
            let step = timed(step, &clock);
            report.http_labels.push(http.run(step).await);
        }
    });
    drop(rt);

    let (a, b) = (tree(http_root), tree(direct_root));
    for name in a.keys().chain(b.keys().filter(|k| !a.contains_key(*k))) {
        report.files_compared += 1;
        match (a.get(name), b.get(name)) {
            (Some(x), Some(y)) if x == y => report.bytes_compared += x.len(),
            _ => report.differing_files.push(name.clone()),
        }
    }
    report
}

pub fn run() -> Report {
    let http = tempfile::tempdir().expect("tempdir");
    let direct = tempfile::tempdir().expect("tempdir");
    run_in(http.path(), direct.path())
}
