//! Default bank-services catalog installed by `iam-admin init`.

use crate::domain::{Sensitivity, ServiceDefinition, ServiceId};
use crate::kb::{KbError, KnowledgeBase};

pub fn default_services() -> Vec<ServiceDefinition> {
    [
        ("balance", "View account balance", Sensitivity::A1),
        ("statement", "Download statement", Sensitivity::A1),
        ("bill-payment", "Pay a registered bill", Sensitivity::A1),
        ("funds-transfer", "Transfer funds to another account", Sensitivity::A2),
        ("add-payee", "Register a new payee", Sensitivity::A2),
    ]
    .into_iter()
    .map(|(id, name, level)| ServiceDefinition::bank(ServiceId::from(id), name, level))
    .collect()
}

/// Adds the catalog entries that are not present yet; existing rows are left
/// alone. Returns how many were added.
pub fn install_default_services(kb: &KnowledgeBase) -> Result<usize, KbError> {
    let mut added = 0;
    for service in default_services() {
        if kb.get_service(service.service_id()).is_err() {
            kb.upsert_service(service)?;
            added += 1;
        }
    }
    Ok(added)
}
