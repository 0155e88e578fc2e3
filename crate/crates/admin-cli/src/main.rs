//! `iam-admin`: operator commands against the same data directory the
//! gateway serves.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use iam_core::authenticators::evaluate_error_rates;
use iam_core::catalog::install_default_services;
use iam_core::domain::{
    DeviceId, DeviceType, LogEvent, Sensitivity, ServiceDefinition, ServiceId, SessionId, UserId,
    UserLogEntry,
};
use iam_core::enrollment::{DeviceSpec, EnrollmentSpec};
use iam_core::kb::LogFilter;
use iam_core::{open_engine, Config, Engine};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "iam-admin", version, about = "Operator tool for the two-level authentication store")]
struct Cli {
    /// Config file; defaults to $IAM_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the data directory and install the default bank services.
    Init,
    /// Enroll a customer: PIN digest, face template, device fingerprints.
    Enroll(EnrollArgs),
    /// Set a bank-level service classification, or raise one for a user.
    Classify(ClassifyArgs),
    /// Clear a lockout.
    Unlock {
        #[arg(long)]
        user_id: String,
    },
    /// Print user-log entries in timestamp order.
    Logs(LogsArgs),
    /// Run the FAR/FRR harness and print one key=value line.
    EvalRates(EvalArgs),
}

#[derive(Debug, Args)]
struct EnrollArgs {
    /// JSON file holding one enrollment object or an array of them.
    #[arg(long, conflicts_with_all = ["user_id", "full_name", "pin", "device", "template_seed"])]
    from_file: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_file")]
    user_id: Option<String>,
    #[arg(long, required_unless_present = "from_file")]
    full_name: Option<String>,
    #[arg(long, required_unless_present = "from_file")]
    pin: Option<String>,
    /// `DEVICE_ID:TYPE`, repeatable; TYPE is smartphone, tablet, desktop or laptop.
    #[arg(long, value_parser = parse_device)]
    device: Vec<DeviceSpec>,
    #[arg(long, required_unless_present = "from_file")]
    template_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    service_id: String,
    /// Display name; required for bank-level classification.
    #[arg(long, required_unless_present = "for_user")]
    name: Option<String>,
    #[arg(long, value_parser = parse_sensitivity)]
    sensitivity: Sensitivity,
    /// Raise the service to A2 in this user's view only.
    #[arg(long)]
    for_user: Option<String>,
}

#[derive(Debug, Args)]
struct LogsArgs {
    #[arg(long)]
    user_id: Option<String>,
    #[arg(long)]
    session_id: Option<String>,
    #[arg(long, value_parser = parse_event)]
    event: Option<LogEvent>,
    /// RFC 3339 instant, inclusive.
    #[arg(long)]
    since: Option<DateTime<Utc>>,
    /// RFC 3339 instant, inclusive.
    #[arg(long)]
    until: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn parse_device(text: &str) -> Result<DeviceSpec, String> {
    let (id, kind) = text
        .split_once(':')
        .ok_or_else(|| format!("expected DEVICE_ID:TYPE, got {text:?}"))?;
    let device_type: DeviceType = kind.parse().map_err(|e| format!("{e}"))?;
    Ok(DeviceSpec {
        device_id: DeviceId::from(id),
        device_type,
    })
}

fn parse_sensitivity(text: &str) -> Result<Sensitivity, String> {
    text.parse().map_err(|e| format!("{e}"))
}

fn parse_event(text: &str) -> Result<LogEvent, String> {
    text.parse().map_err(|e| format!("{e}"))
}

enum Failure {
    Usage(String),
    Domain(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(err: E) -> Self {
        Failure::Domain(err.to_string())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(EnrollmentSpec),
    Many(Vec<EnrollmentSpec>),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("iam-admin: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(message)) => {
            eprintln!("iam-admin: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::EvalRates(args) = &cli.command {
        let rates = evaluate_error_rates(args.n, args.p, args.tau, args.trials, args.seed)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        println!("{}", rates.summary_line());
        return Ok(());
    }
    let config = Config::resolve(cli.config.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    let engine = open_engine(&config)?;
    match cli.command {
        Command::Init => {
            let added = install_default_services(engine.kb())?;
            println!("initialized data_dir={} services_added={added}", config.data_dir.display());
        }
        Command::Enroll(args) => enroll(&engine, args)?,
        Command::Classify(args) => classify(&engine, args)?,
        Command::Unlock { user_id } => {
            engine.unlock_user(&UserId::new(user_id.clone()))?;
            println!("unlocked user={user_id}");
        }
        Command::Logs(args) => {
            let filter = LogFilter {
                user_id: args.user_id.map(UserId::new),
                session_id: args.session_id.map(SessionId::new),
                event: args.event,
                since: args.since,
                until: args.until,
            };
            for entry in engine.kb().query_logs(&filter) {
                println!("{}", log_line(&entry));
            }
        }
        Command::EvalRates(_) => unreachable!("handled before opening the store"),
    }
    Ok(())
}

fn read_specs(path: &Path) -> Result<Vec<EnrollmentSpec>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))? {
        SpecFile::One(spec) => Ok(vec![spec]),
        SpecFile::Many(specs) => Ok(specs),
    }
}

fn enroll(engine: &Engine, args: EnrollArgs) -> Result<(), Failure> {
    let specs = match args.from_file {
        Some(path) => read_specs(&path)?,
        None => vec![EnrollmentSpec {
            user_id: UserId::new(args.user_id.unwrap_or_default()),
            full_name: args.full_name.unwrap_or_default(),
            pin: args.pin.unwrap_or_default(),
            devices: args.device,
            template_seed: args.template_seed.unwrap_or_default(),
        }],
    };
    for spec in &specs {
        let summary = engine.enroll(spec)?;
        let fingerprints: Vec<String> = summary
            .fingerprint_refs
            .iter()
            .map(|(device, fp)| format!("{device}:{fp}"))
            .collect();
        println!(
            "enrolled user={} face_ref={} fingerprints={}",
            summary.user_id,
            summary.face_template_ref,
            if fingerprints.is_empty() { "-".to_owned() } else { fingerprints.join(",") }
        );
    }
    Ok(())
}

fn classify(engine: &Engine, args: ClassifyArgs) -> Result<(), Failure> {
    let service_id = ServiceId::new(args.service_id);
    if let Some(user) = args.for_user {
        if args.sensitivity != Sensitivity::A2 {
            return Err(Failure::Domain(
                "users can only raise a service to A2; there is no per-user downgrade".into(),
            ));
        }
        let view = engine.upgrade_service_sensitivity(&UserId::new(user.clone()), &service_id)?;
        println!(
            "classified service={} sensitivity={} classified_by=user user={user}",
            view.service_id(),
            view.sensitivity()
        );
        return Ok(());
    }
    let name = args.name.unwrap_or_default();
    engine
        .kb()
        .upsert_service(ServiceDefinition::bank(service_id.clone(), name, args.sensitivity))?;
    println!(
        "classified service={service_id} sensitivity={} classified_by=bank",
        args.sensitivity
    );
    Ok(())
}

fn log_line(entry: &UserLogEntry) -> String {
    let geo = entry.geolocation();
    let coord = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| v.to_string());
    format!(
        "{} {} user={} session={} event={} status={} method={} device={} geo={},{} detail={}",
        entry.timestamp().to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
        entry.entry_id(),
        entry.user_id(),
        entry.session_id().map_or("-", |s| s.as_str()),
        entry.event(),
        entry.status(),
        entry.auth_method_used(),
        entry.device_type().map_or("-", |d| d.as_str()),
        coord(geo.latitude()),
        coord(geo.longitude()),
        if entry.detail().is_empty() { "-" } else { entry.detail() },
    )
}
