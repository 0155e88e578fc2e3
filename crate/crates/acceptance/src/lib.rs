//! Acceptance criteria for the two-level authentication engine and its
//! gateway, one module per criterion. Each `run` drives the real engine (and,
//! where the criterion is about the API, the real HTTP router) and returns a
//! report whose `clean()` is the pass condition. The `acceptance` test target
//! runs them all and prints one verdict line per criterion.

pub mod device_rule;
pub mod equivalence;
pub mod http;
pub mod matcher;
pub mod model;
pub mod model_check;
pub mod monotonic;
pub mod partition;
