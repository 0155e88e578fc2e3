use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iam_core::domain::UserId;
use iam_core::KnowledgeBase;

struct Workspace {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("iam.toml");
        fs::write(
            &config,
            format!(
                "data_dir = {:?}\nrun_seed = 42\nfixed_clock = \"2026-05-01T12:00:00Z\"\n",
                dir.path().join("data")
            ),
        )
        .unwrap();
        Self { dir, config }
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_iam-admin"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).map_or(0, |t| t.lines().count())
}

#[test]
fn init_installs_catalog_once() {
    let ws = Workspace::new();
    let out = ws.run(&["init"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("services_added=5"));
    let again = ws.run(&["init"]);
    assert!(stdout(&again).contains("services_added=0"));
}

#[test]
fn enroll_counts_records_per_store() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "enroll", "--user-id", "alice", "--full-name", "Alice Tan", "--pin", "9081",
        "--device", "ph-a:smartphone", "--template-seed", "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "enrolled user=alice face_ref=fr-000001 fingerprints=ph-a:fp-000002\n"
    );
    let data = ws.data();
    assert_eq!(line_count(&data.join("kb/users.tsv")), 1);
    assert_eq!(line_count(&data.join("kb/faces.tsv")), 1);
    assert_eq!(line_count(&data.join("devices/ph-a/fingerprints.tsv")), 1);

    let dup = ws.run(&[
        "enroll", "--user-id", "alice", "--full-name", "Alice Tan", "--pin", "9081",
        "--template-seed", "1",
    ]);
    assert_eq!(dup.status.code(), Some(1));
    assert!(stderr(&dup).contains("already enrolled"));

    let desk = ws.run(&[
        "enroll", "--user-id", "bob", "--full-name", "Bob", "--pin", "1234",
        "--device", "pc-b:desktop", "--template-seed", "2",
    ]);
    assert!(desk.status.success());
    assert!(stdout(&desk).ends_with("fingerprints=-\n"));
    assert_eq!(line_count(&data.join("kb/users.tsv")), 2);
    assert_eq!(line_count(&data.join("kb/faces.tsv")), 2);
    assert!(!data.join("devices/pc-b").exists());
}

#[test]
fn enroll_from_file() {
    let ws = Workspace::new();
    let file = ws.dir.path().join("people.json");
    fs::write(
        &file,
        r#"[{"user_id":"c1","full_name":"C One","pin":"1111","devices":[{"device_id":"t1","device_type":"tablet"}],"template_seed":5},
            {"user_id":"c2","full_name":"C Two","pin":"2222","devices":[],"template_seed":6}]"#,
    )
    .unwrap();
    let out = ws.run(&["enroll", "--from-file", file.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 2);
    let kb = KnowledgeBase::open(&ws.data()).unwrap();
    assert!(kb.get_user(&UserId::from("c2")).is_ok());
}

#[test]
fn classify_refuses_downgrade() {
    let ws = Workspace::new();
    let up = ws.run(&["classify", "--service-id", "funds-transfer", "--name", "Transfer", "--sensitivity", "A2"]);
    assert!(up.status.success(), "{}", stderr(&up));
    assert_eq!(stdout(&up), "classified service=funds-transfer sensitivity=A2 classified_by=bank\n");
    let down = ws.run(&["classify", "--service-id", "funds-transfer", "--name", "Transfer", "--sensitivity", "A1"]);
    assert_eq!(down.status.code(), Some(1));
    assert!(stderr(&down).contains("monotone"), "{}", stderr(&down));
}

#[test]
fn classify_for_user_raises_only_that_view() {
    let ws = Workspace::new();
    ws.run(&["init"]);
    ws.run(&["enroll", "--user-id", "u1", "--full-name", "U", "--pin", "1234", "--template-seed", "3"]);
    let out = ws.run(&["classify", "--service-id", "bill-payment", "--sensitivity", "A2", "--for-user", "u1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("classified_by=user"));
    let again = ws.run(&["classify", "--service-id", "bill-payment", "--sensitivity", "A2", "--for-user", "u1"]);
    assert_eq!(again.status.code(), Some(1));
    let down = ws.run(&["classify", "--service-id", "bill-payment", "--sensitivity", "A1", "--for-user", "u1"]);
    assert_eq!(down.status.code(), Some(1));
    let logs = ws.run(&["logs", "--event", "service_upgraded"]);
    assert_eq!(stdout(&logs).lines().count(), 1);
}

#[test]
fn eval_rates_line() {
    let ws = Workspace::new();
    let out = ws.run(&["eval-rates", "--n", "100", "--p", "0.1", "--tau", "0.25", "--trials", "10000", "--seed", "7"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "far=0.000000 frr=0.000000 trials=10000\n");
    let bad = ws.run(&["eval-rates", "--p", "0.9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn empty_logs_print_nothing() {
    let ws = Workspace::new();
    let out = ws.run(&["logs"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).is_empty());
}

#[test]
fn unlock_unknown_user_is_a_domain_error() {
    let ws = Workspace::new();
    let out = ws.run(&["unlock", "--user-id", "ghost"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ws.run(&["enroll", "--user-id", "x"]).status.code(), Some(2));
    assert_eq!(ws.run(&["enroll", "--device", "nocolon"]).status.code(), Some(2));
    fs::write(&ws.config, "nonsense = true\n").unwrap();
    assert_eq!(ws.run(&["logs"]).status.code(), Some(2));
}

#[test]
fn fixed_seed_and_clock_give_identical_stores() {
    let (a, b) = (Workspace::new(), Workspace::new());
    for ws in [&a, &b] {
        ws.run(&["init"]);
        let out = ws.run(&[
            "enroll", "--user-id", "d", "--full-name", "D", "--pin", "5555",
            "--device", "p:smartphone", "--template-seed", "9",
        ]);
        assert!(out.status.success());
    }
    for file in ["kb/users.tsv", "kb/services.tsv", "kb/faces.tsv", "devices/p/fingerprints.tsv"] {
        assert_eq!(
            fs::read(a.data().join(file)).unwrap(),
            fs::read(b.data().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn a_running_handle_sees_cli_writes() {
    let ws = Workspace::new();
    ws.run(&["init"]);
    let gateway_side = KnowledgeBase::open(&ws.data()).unwrap();
    ws.run(&["enroll", "--user-id", "late", "--full-name", "L", "--pin", "1234", "--template-seed", "4"]);
    assert!(gateway_side.get_user(&UserId::from("late")).is_ok());
}
