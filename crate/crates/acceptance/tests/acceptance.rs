//! Runs every acceptance criterion and prints one verdict line each.
//! Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Duration;

use iam_acceptance::{device_rule, equivalence, matcher, model_check, monotonic, partition};

const MODEL_CHECK_LENGTH: usize = 6;
const MODEL_CHECK_BUDGET: Duration = Duration::from_secs(60);
const MONOTONIC_SEQUENCES: u64 = 1000;
const MONOTONIC_LENGTH: usize = 25;

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn record(&mut self, name: &str, passed: bool, evidence: String, failure: Option<String>) {
        println!("{} {name}: {evidence}", if passed { "PASS" } else { "FAIL" });
        if !passed {
            self.failed += 1;
            if let Some(failure) = failure {
                println!("     first failure: {failure}");
            }
        }
    }
}

fn main() -> ExitCode {
    let mut verdicts = Verdicts { failed: 0 };

    let mc = model_check::run(MODEL_CHECK_LENGTH);
    let in_budget = mc.elapsed < MODEL_CHECK_BUDGET;
    verdicts.record(
        "table1_conformance",
        mc.table_clean() && in_budget && mc.rows_covered(),
        format!(
            "{} rows_covered={} budget={}s",
            model_check::summary(&mc),
            mc.rows_covered(),
            MODEL_CHECK_BUDGET.as_secs()
        ),
        mc.first_failure.clone(),
    );
    verdicts.record(
        "step_up_necessity",
        mc.step_up_clean(),
        format!(
            "a2_transactions={} violations={} replays={} replay_failures={}",
            mc.a2_transactions, mc.step_up_violations, mc.replays, mc.replay_failures
        ),
        mc.first_failure.clone(),
    );

    let mut mono = monotonic::run_sequences(MONOTONIC_SEQUENCES, MONOTONIC_LENGTH);
    monotonic::probe_routes(&mut mono);
    verdicts.record(
        "sensitivity_monotonicity",
        mono.clean() && mono.sequences >= 1000,
        format!(
            "sequences={} operations={} decreases={} reference_mismatches={} refused_downgrades={} already_a2={} route_probes={} routes_not_refused={} routes_changing_state={}",
            mono.sequences,
            mono.operations,
            mono.decreases,
            mono.model_mismatches,
            mono.rejected_downgrades,
            mono.already_a2,
            mono.route_probes,
            mono.routes_not_refused,
            mono.routes_that_changed_state
        ),
        mono.first_failure.clone(),
    );

    let part = partition::run();
    verdicts.record(
        "storage_partition",
        part.clean(),
        format!(
            "users={} devices={} handhelds={} transactions={} step_ups={} cloud_files={} device_files={} fingerprint_records_in_cloud={} face_records_on_devices={} raw_pin_hits={} controls: faces_in_cloud={}/{} fingerprints_on_devices={}/{}",
            part.users,
            part.devices,
            part.handheld_devices,
            part.transactions,
            part.step_ups,
            part.cloud_files,
            part.device_files,
            part.fingerprint_records_in_cloud,
            part.face_records_on_devices,
            part.raw_pin_hits,
            part.faces_found_in_cloud,
            part.users,
            part.fingerprints_found_on_devices,
            part.handheld_devices
        ),
        part.findings.first().cloned(),
    );

    let rates = matcher::run();
    verdicts.record(
        "matcher_oracles",
        rates.clean(),
        format!(
            "{} oracle_far={:.3e} oracle_frr={:.3e} zero_tau_frr={:.6} repeat_identical={} elapsed={:.2}s",
            rates.rates.summary_line(),
            rates.far_oracle,
            rates.frr_oracle,
            rates.zero_tau_frr,
            rates.repeat_identical,
            rates.elapsed.as_secs_f64()
        ),
        None,
    );

    let dev = device_rule::run();
    verdicts.record(
        "device_rule",
        dev.clean(),
        format!(
            "fixed_refused={}/{} handheld_granted={}/{} side_effects={}",
            dev.fixed_refused, dev.fixed_attempts, dev.handheld_granted, dev.handheld_attempts, dev.side_effects
        ),
        dev.first_failure.clone(),
    );

    let eq = equivalence::run();
    verdicts.record(
        "api_equivalence",
        eq.clean(),
        format!(
            "steps={} outcomes_equal={} files_compared={} bytes_equal={} differing_files={:?}",
            eq.steps,
            eq.http_labels == eq.direct_labels,
            eq.files_compared,
            eq.bytes_compared,
            eq.differing_files
        ),
        eq.first_label_difference(),
    );

    if verdicts.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", verdicts.failed);
        ExitCode::FAILURE
    }
}
