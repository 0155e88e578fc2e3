use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use iam_core::{open_engine, Config};
use iam_gateway::{router, spawn_sweeper, AppState};

fn usage() -> ExitCode {
    eprintln!("usage: iam-gateway [--config PATH]   (or set IAM_CONFIG)");
    ExitCode::from(2)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_target(false).init();

    let args: Vec<String> = std::env::args().skip(1).collect();
    let explicit = match args.as_slice() {
        [] => None,
        [flag, path] if flag == "--config" => Some(PathBuf::from(path)),
        _ => return usage(),
    };
    let config = match Config::resolve(explicit.as_deref()) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("iam-gateway: {err}");
            return ExitCode::from(2);
        }
    };
    let engine = match open_engine(&config) {
        Ok(engine) => Arc::new(engine),
        Err(err) => {
            eprintln!("iam-gateway: {err}");
            return ExitCode::from(1);
        }
    };
    if !config.tls_expected {
        tracing::warn!("tls_expected = false: serving plain HTTP without a TLS terminator in front");
    }
    let state = AppState::new(engine, config.admin_token.clone());
    if config.fixed_clock.is_none() && config.sweep_interval_seconds > 0 {
        spawn_sweeper(state.clone(), Duration::from_secs(config.sweep_interval_seconds));
    }
    let listener = match tokio::net::TcpListener::bind(&config.bind).await {
        Ok(listener) => listener,
        Err(err) => {
            eprintln!("iam-gateway: cannot bind {}: {err}", config.bind);
            return ExitCode::from(1);
        }
    };
    tracing::info!("listening on {}", config.bind);
    let served = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    match served {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("iam-gateway: {err}");
            ExitCode::from(1)
        }
    }
}
