use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use super::AuthError;
use crate::domain::{UserRecord, UserStatus};

pub const MIN_SALT_BYTES: usize = 16;

/// SHA-256 over `salt || pin`.
#[derive(Clone, PartialEq, Eq)]
pub struct PinDigest([u8; 32]);

impl PinDigest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for PinDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PinDigest(<redacted>)")
    }
}

fn well_formed(pin: &str) -> bool {
    (4..=8).contains(&pin.len()) && pin.bytes().all(|b| b.is_ascii_digit())
}

pub fn hash_pin(pin: &str, salt: &[u8]) -> Result<PinDigest, AuthError> {
    if !well_formed(pin) {
        return Err(AuthError::MalformedPin);
    }
    if salt.len() < MIN_SALT_BYTES {
        return Err(AuthError::ShortSalt {
            min: MIN_SALT_BYTES,
        });
    }
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update(pin.as_bytes());
    Ok(PinDigest(hasher.finalize().into()))
}

/// Checks `candidate` against the stored digest. Malformed candidates are
/// simply wrong, not errors.
pub fn verify_pin(candidate: &str, record: &UserRecord) -> Result<bool, AuthError> {
    if record.status == UserStatus::Locked {
        return Err(AuthError::UserLocked);
    }
    let (Ok(salt), Ok(stored)) = (hex::decode(&record.pin_salt), hex::decode(&record.pin_digest))
    else {
        return Ok(false);
    };
    let Ok(digest) = hash_pin(candidate, &salt) else {
        return Ok(false);
    };
    Ok(digest.0.ct_eq(stored.as_slice()).into())
}
