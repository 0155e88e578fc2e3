//! Core of the two-level integrated authentication mechanism for an
//! internet-banking portal.
//!
//! Level one grants access (A1) after a PIN check or a fingerprint match
//! against the template stored on the login device. Level two (A2) is a face
//! match against the cloud-stored template, demanded whenever a session
//! initiates a transaction on a service classified as sensitive.
//!
//! - [`domain`]: shared value types and the session status table.
//! - [`authenticators`]: PIN digests, the simulated biometric template model
//!   and the FAR/FRR harness.
//! - [`kb`]: the knowledge base (four tables plus the template stores).
//! - [`engine`]: the session state machine.
//! - [`enrollment`]: operator-side enrollment of customers.
//! - [`catalog`]: the default bank-services catalog.

#![forbid(unsafe_code)]

pub mod authenticators;
pub mod catalog;
pub mod clock;
pub mod config;
pub mod domain;
pub mod engine;
pub mod enrollment;
pub mod kb;
pub mod seed;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{Config, EngineConfig, SensitiveModeScope};
pub use engine::{open_engine, Engine, EngineError};
pub use kb::{KbError, KnowledgeBase};
