//! Seeded end-to-end run on a file-backed store followed by a byte scan of
//! every file it left behind.
//!
//! `kb/` and the root marker files are the cloud side; `devices/` is the
//! device side. A record counts as misplaced if the file holds a template row
//! of the wrong kind, or the hex or raw bytes of any template of that kind
//! that was enrolled or presented during the run. The scan also counts the
//! templates it does find on the correct side, so a blind scanner cannot
//! pass.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use iam_core::authenticators::capture_sample;
use iam_core::catalog::{default_services, install_default_services};
use iam_core::domain::{Amount, BiometricTemplate, DeviceId, DeviceType, Geolocation, UserId};
use iam_core::engine::{Credential, DeviceSource, LoginOutcome, LoginRequest, StepUpOutcome, TransactionOutcome};
use iam_core::enrollment::{enrolled_face, enrolled_fingerprint, DeviceSpec, EnrollmentSpec};
use iam_core::{Engine, EngineConfig, KnowledgeBase, ManualClock};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const SEED: u64 = 0x5041_5254;
pub const USERS: usize = 10;
pub const TRANSACTIONS: usize = 50;
const DEVICE_TYPES: [DeviceType; 4] = [
    DeviceType::Smartphone,
    DeviceType::Tablet,
    DeviceType::Desktop,
    DeviceType::Laptop,
];

#[derive(Debug, Default)]
pub struct Report {
    pub users: usize,
    pub devices: usize,
    pub handheld_devices: usize,
    pub transactions: usize,
    pub step_ups: usize,
    pub cloud_files: usize,
    pub device_files: usize,
    pub fingerprint_records_in_cloud: usize,
    pub face_records_on_devices: usize,
    pub raw_pin_hits: usize,
    /// Enrolled faces found in cloud files, out of `users`.
    pub faces_found_in_cloud: usize,
    /// Enrolled fingerprints found in device files, out of `handheld_devices`.
    pub fingerprints_found_on_devices: usize,
    pub findings: Vec<String>,
}

impl Report {
    pub fn clean(&self) -> bool {
        self.fingerprint_records_in_cloud == 0
            && self.face_records_on_devices == 0
            && self.raw_pin_hits == 0
            && self.transactions == TRANSACTIONS
            && self.faces_found_in_cloud == self.users
            && self.fingerprints_found_on_devices == self.handheld_devices
    }
}

struct Customer {
    spec: EnrollmentSpec,
}

impl Customer {
    fn handheld(&self) -> Option<&DeviceSpec> {
        self.spec.devices.iter().find(|d| d.device_type.supports_fingerprint())
    }
}

fn customers(rng: &mut ChaCha20Rng) -> Vec<Customer> {
    (0..USERS)
        .map(|i| {
            let pin_len = rng.random_range(6..=8);
            let pin: String = (0..pin_len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect();
            let device_count = rng.random_range(1..=3);
            let devices = (0..device_count)
                .map(|j| DeviceSpec {
                    device_id: DeviceId::new(format!("dev-{i}-{j}")),
                    device_type: *DEVICE_TYPES.choose(rng).expect("non-empty"),
                })
                .collect();
            Customer {
                spec: EnrollmentSpec {
                    user_id: UserId::new(format!("cust-{i:02}")),
                    full_name: format!("Customer {i}"),
                    pin,
                    devices,
                    template_seed: 1000 + i as u64,
                },
            }
        })
        .collect()
}

fn files_under(root: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(root) else { return };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            files_under(&path, out);
        } else {
            out.push(path);
        }
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

fn holds_template(bytes: &[u8], template: &BiometricTemplate) -> bool {
    let hex = template.to_hex();
    contains(bytes, hex.as_bytes())
        || contains(bytes, hex.to_uppercase().as_bytes())
        || contains(bytes, template.bytes())
}

/// Lines shaped like a stored template row of the given kind.
fn template_rows(bytes: &[u8], kind: &str) -> usize {
    String::from_utf8_lossy(bytes)
        .lines()
        .filter(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            fields.len() == 4
                && fields[2] == kind
                && fields[3].len() == 64
                && fields[3].bytes().all(|b| b.is_ascii_hexdigit())
        })
        .count()
}

/// Drives the run in `root` and scans it.
pub fn run_in(root: &Path) -> Report {
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let mut report = Report::default();
    let kb = Arc::new(KnowledgeBase::open(root).expect("open store"));
    install_default_services(&kb).expect("catalog");
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 8, 3, 9, 0, 0).unwrap());
    let engine = Engine::new(EngineConfig::default(), kb, Arc::new(clock.clone()), Some(SEED)).expect("engine");

    let people = customers(&mut rng);
    let mut fingerprints = Vec::new();
    let mut faces = Vec::new();
    for person in &people {
        engine.enroll(&person.spec).expect("enroll");
        report.users += 1;
        report.devices += person.spec.devices.len();
        let handhelds = person.spec.devices.iter().filter(|d| d.device_type.supports_fingerprint()).count();
        report.handheld_devices += handhelds;
        if handhelds > 0 {
            fingerprints.push(enrolled_fingerprint(person.spec.template_seed));
        }
        faces.push(enrolled_face(person.spec.template_seed));
    }

    let services = default_services();
    let mut attempt = 0u64;
    while report.transactions < TRANSACTIONS && attempt < 10 * TRANSACTIONS as u64 {
        attempt += 1;
        let person = &people[attempt as usize % people.len()];
        clock.advance_secs(7);
        let geo = Geolocation::declared(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)).expect("geo");
        let (credential, device_type) = match person.handheld() {
            Some(device) if rng.random_bool(0.7) => {
                let probe = capture_sample(&enrolled_fingerprint(person.spec.template_seed), 0.1, rng.random())
                    .expect("capture");
                fingerprints.push(probe.clone());
                (
                    Credential::Fingerprint {
                        device_id: device.device_id.clone(),
                        probe,
                    },
                    device.device_type,
                )
            }
            _ => (
                Credential::Pin(person.spec.pin.clone()),
                person.spec.devices.choose(&mut rng).map_or(DeviceType::Desktop, |d| d.device_type),
            ),
        };
        let outcome = engine
            .login(LoginRequest {
                user_id: person.spec.user_id.clone(),
                credential,
                device_type,
                device_source: DeviceSource::Declared,
                geolocation: geo,
            })
            .expect("login");
        let LoginOutcome::Granted(session) = outcome else { continue };
        let session_id = session.session_id().clone();
        let service = services.choose(&mut rng).expect("catalog").service_id().clone();
        let amount = Some(Amount::from_minor(rng.random_range(100..500_000)));
        clock.advance_secs(3);
        match engine.initiate_transaction(&session_id, &service, amount).expect("initiate") {
            TransactionOutcome::Executed(_) => report.transactions += 1,
            TransactionOutcome::StepUpRequired(step_up) => {
                report.step_ups += 1;
                clock.advance_secs(5);
                let probe = capture_sample(&enrolled_face(person.spec.template_seed), 0.1, rng.random())
                    .expect("capture");
                faces.push(probe.clone());
                if let StepUpOutcome::Executed { .. } = engine
                    .complete_step_up(&session_id, &step_up.challenge.token, &probe)
                    .expect("step-up")
                {
                    report.transactions += 1;
                }
            }
        }
        clock.advance_secs(2);
        engine.logout(&session_id).expect("logout");
    }

    let mut files = Vec::new();
    files_under(root, &mut files);
    let devices_root = root.join("devices");
    for path in &files {
        let bytes = fs::read(path).expect("read store file");
        let on_device = path.starts_with(&devices_root);
        let shown = path.strip_prefix(root).unwrap_or(path).display().to_string();
        if on_device {
            report.device_files += 1;
            let rows = template_rows(&bytes, "face");
            let hits = faces.iter().filter(|t| holds_template(&bytes, t)).count();
            if rows + hits > 0 {
                report.findings.push(format!("{shown}: {rows} face rows, {hits} face templates"));
            }
            report.face_records_on_devices += rows + hits;
        } else {
            report.cloud_files += 1;
            let rows = template_rows(&bytes, "fingerprint");
            let hits = fingerprints.iter().filter(|t| holds_template(&bytes, t)).count();
            if rows + hits > 0 {
                report.findings.push(format!("{shown}: {rows} fingerprint rows, {hits} fingerprint templates"));
            }
            report.fingerprint_records_in_cloud += rows + hits;
        }
        for person in &people {
            if contains(&bytes, person.spec.pin.as_bytes()) {
                report.raw_pin_hits += 1;
                report.findings.push(format!("{shown}: raw PIN of {}", person.spec.user_id));
            }
        }
    }

    let cloud: Vec<Vec<u8>> = files
        .iter()
        .filter(|p| !p.starts_with(&devices_root))
        .map(|p| fs::read(p).expect("read"))
        .collect();
    report.faces_found_in_cloud = people
        .iter()
        .filter(|p| cloud.iter().any(|b| holds_template(b, &enrolled_face(p.spec.template_seed))))
        .count();
    // One enrolled fingerprint per customer, copied to each of their handhelds.
    report.fingerprints_found_on_devices = people
        .iter()
        .flat_map(|p| p.spec.devices.iter().filter(|d| d.device_type.supports_fingerprint()).map(move |d| (p, d)))
        .filter(|(p, d)| {
            let file = devices_root.join(d.device_id.as_str()).join("fingerprints.tsv");
            fs::read(file).is_ok_and(|b| holds_template(&b, &enrolled_fingerprint(p.spec.template_seed)))
        })
        .count();
    report
}

pub fn run() -> Report {
    let dir = tempfile::tempdir().expect("tempdir");
    run_in(dir.path())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_detector_matches_only_the_named_kind() {
        let row = format!("fp-000001\tann\tfingerprint\t{}", "ab".repeat(32));
        assert_eq!(template_rows(row.as_bytes(), "fingerprint"), 1);
        assert_eq!(template_rows(row.as_bytes(), "face"), 0);
        assert_eq!(template_rows(b"log-1\t-\tann\ta1_granted", "fingerprint"), 0);
    }

    #[test]
    fn scanner_sees_a_planted_fingerprint() {
        let template = enrolled_fingerprint(5);
        let mut file = b"prefix ".to_vec();
        file.extend_from_slice(template.to_hex().as_bytes());
        assert!(holds_template(&file, &template));
        assert!(holds_template(template.bytes(), &template));
        assert!(!holds_template(b"nothing here", &template));
    }
}
