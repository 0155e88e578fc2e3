//! Deployment configuration, shared by the gateway and the admin tool.
//!
//! The file is TOML. Its path comes from `--config`, else from the
//! `IAM_CONFIG` environment variable, else built-in defaults apply.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authenticators::{DEFAULT_CAPTURE_NOISE, DEFAULT_FACE_THRESHOLD, DEFAULT_FINGERPRINT_THRESHOLD};

pub const CONFIG_ENV: &str = "IAM_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Whether sensitive mode (`S-3`) lasts for one transaction or for the rest
/// of the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveModeScope {
    #[default]
    SingleTransaction,
    Session,
}

/// Digest used for PIN storage. Only SHA-256 over `salt || pin` today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinDigestScheme {
    #[default]
    Sha256,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub session_ttl_seconds: u64,
    pub challenge_ttl_seconds: u64,
    pub max_a1_failures: u32,
    pub max_a2_failures: u32,
    pub sensitive_mode_scope: SensitiveModeScope,
    pub fingerprint_threshold: f64,
    pub face_threshold: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            session_ttl_seconds: 600,
            challenge_ttl_seconds: 120,
            max_a1_failures: 3,
            max_a2_failures: 3,
            sensitive_mode_scope: SensitiveModeScope::SingleTransaction,
            fingerprint_threshold: DEFAULT_FINGERPRINT_THRESHOLD,
            face_threshold: DEFAULT_FACE_THRESHOLD,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.session_ttl_seconds == 0 || self.challenge_ttl_seconds == 0 {
            return Err(ConfigError::Invalid("TTLs must be positive".into()));
        }
        if self.max_a1_failures == 0 || self.max_a2_failures == 0 {
            return Err(ConfigError::Invalid("failure caps must be positive".into()));
        }
        for (name, tau) in [
            ("fingerprint_threshold", self.fingerprint_threshold),
            ("face_threshold", self.face_threshold),
        ] {
            if !(0.0..=1.0).contains(&tau) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Bit-flip probability used by simulated capture clients.
    pub capture_noise: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            capture_noise: DEFAULT_CAPTURE_NOISE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    /// Root holding `kb/` (cloud side) and `devices/` (device-local side).
    pub data_dir: PathBuf,
    /// Seeds every pseudo-random stream. Absent means fresh OS entropy.
    pub run_seed: Option<u64>,
    /// Freezes the clock at this instant; for reproducible scripted runs.
    pub fixed_clock: Option<DateTime<Utc>>,
    pub pin_digest: PinDigestScheme,
    /// Documents that production deployments terminate TLS in front of the
    /// gateway. The gateway itself speaks plain HTTP.
    pub tls_expected: bool,
    /// Bearer secret for `/api/v1/admin/*`. Admin routes answer 403 when unset.
    pub admin_token: Option<String>,
    /// How often the gateway closes expired sessions; 0 disables the sweep.
    /// Never runs under `fixed_clock`.
    pub sweep_interval_seconds: u64,
    pub engine: EngineConfig,
    pub simulation: SimulationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            run_seed: None,
            fixed_clock: None,
            pin_digest: PinDigestScheme::Sha256,
            tls_expected: true,
            admin_token: None,
            sweep_interval_seconds: 30,
            engine: EngineConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_owned(),
            source,
        })?;
        config.engine.validate()?;
        if !(0.0..=0.5).contains(&config.simulation.capture_noise) {
            return Err(ConfigError::Invalid("capture_noise must lie in [0, 0.5]".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Explicit path, else `IAM_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(Path::new(&path)),
            None => Ok(Self::default()),
        }
    }
}
