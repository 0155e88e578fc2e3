//! Operator-side enrollment.
//!
//! The biometric simulation derives every enrolled template from a single
//! per-user `template_seed`, so a test client holding the seed can produce
//! genuine probes with [`enrolled_face`] and [`enrolled_fingerprint`] plus
//! [`capture_sample`](crate::authenticators::capture_sample).

use std::collections::HashSet;
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::authenticators::{generate_template, hash_pin, AuthError};
use crate::domain::{
    BiometricTemplate, DeviceBinding, DeviceId, DeviceType, TemplateKind, TemplateRef, UserId,
    UserRecord, UserStatus,
};
use crate::kb::{validate_identifier, KbError, KnowledgeBase, StoreLocation};
use crate::seed;

#[derive(Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollmentSpec {
    pub user_id: UserId,
    pub full_name: String,
    pub pin: String,
    pub devices: Vec<DeviceSpec>,
    pub template_seed: u64,
}

impl fmt::Debug for EnrollmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnrollmentSpec")
            .field("user_id", &self.user_id)
            .field("full_name", &self.full_name)
            .field("devices", &self.devices)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: DeviceId,
    pub device_type: DeviceType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentSummary {
    pub user_id: UserId,
    pub face_template_ref: TemplateRef,
    /// One entry per handheld device, in request order.
    pub fingerprint_refs: Vec<(DeviceId, TemplateRef)>,
}

#[derive(Debug, Error)]
pub enum EnrollmentError {
    #[error("user {0} is already enrolled")]
    DuplicateUser(UserId),
    #[error("device {0} listed twice")]
    DuplicateDevice(DeviceId),
    #[error("full name must not be empty")]
    EmptyName,
    #[error(transparent)]
    Pin(#[from] AuthError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

pub fn enrolled_face(template_seed: u64) -> BiometricTemplate {
    generate_template(seed::derive(template_seed, seed::FACE_TEMPLATE), TemplateKind::Face)
}

pub fn enrolled_fingerprint(template_seed: u64) -> BiometricTemplate {
    generate_template(
        seed::derive(template_seed, seed::FINGERPRINT_TEMPLATE),
        TemplateKind::Fingerprint,
    )
}

/// Validates `spec`, stores the face template in the cloud store and the
/// fingerprint template on every handheld device, then writes the user row.
pub fn enroll(
    kb: &KnowledgeBase,
    spec: &EnrollmentSpec,
    salt: &[u8],
) -> Result<EnrollmentSummary, EnrollmentError> {
    validate_identifier(spec.user_id.as_str())?;
    if spec.full_name.trim().is_empty() {
        return Err(EnrollmentError::EmptyName);
    }
    let mut seen = HashSet::new();
    for device in &spec.devices {
        validate_identifier(device.device_id.as_str())?;
        if !seen.insert(&device.device_id) {
            return Err(EnrollmentError::DuplicateDevice(device.device_id.clone()));
        }
    }
    if kb.get_user(&spec.user_id).is_ok() {
        return Err(EnrollmentError::DuplicateUser(spec.user_id.clone()));
    }
    let digest = hash_pin(&spec.pin, salt)?;

    let face_ref = kb.store_template(
        &enrolled_face(spec.template_seed),
        &spec.user_id,
        &StoreLocation::CloudKb,
    )?;
    let finger = enrolled_fingerprint(spec.template_seed);
    let mut bindings = Vec::with_capacity(spec.devices.len());
    let mut fingerprint_refs = Vec::new();
    for device in &spec.devices {
        let fp_ref = if device.device_type.supports_fingerprint() {
            let location = StoreLocation::DeviceLocal(device.device_id.clone());
            let fp_ref = kb.store_template(&finger, &spec.user_id, &location)?;
            fingerprint_refs.push((device.device_id.clone(), fp_ref.clone()));
            Some(fp_ref)
        } else {
            None
        };
        bindings.push(
            DeviceBinding::new(device.device_id.clone(), device.device_type, fp_ref)
                .map_err(KbError::from)?,
        );
    }
    kb.insert_user(UserRecord {
        user_id: spec.user_id.clone(),
        full_name: spec.full_name.clone(),
        pin_digest: digest.to_hex(),
        pin_salt: hex::encode(salt),
        face_template_ref: face_ref.clone(),
        enrolled_devices: bindings,
        status: UserStatus::Active,
    })?;
    Ok(EnrollmentSummary {
        user_id: spec.user_id.clone(),
        face_template_ref: face_ref,
        fingerprint_refs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authenticators::{hamming_distance, verify_pin};

    fn spec() -> EnrollmentSpec {
        EnrollmentSpec {
            user_id: UserId::from("carol"),
            full_name: "Carol Lim".into(),
            pin: "4821".into(),
            devices: vec![
                DeviceSpec { device_id: DeviceId::from("ph-c"), device_type: DeviceType::Smartphone },
                DeviceSpec { device_id: DeviceId::from("tab-c"), device_type: DeviceType::Tablet },
                DeviceSpec { device_id: DeviceId::from("pc-c"), device_type: DeviceType::Desktop },
            ],
            template_seed: 99,
        }
    }

    #[test]
    fn stores_each_template_where_it_belongs() {
        let kb = KnowledgeBase::in_memory();
        let summary = enroll(&kb, &spec(), &[5u8; 16]).unwrap();
        assert_eq!(summary.fingerprint_refs.len(), 2);
        let face = kb
            .fetch_template(&summary.face_template_ref, &StoreLocation::CloudKb)
            .unwrap();
        assert_eq!(face, enrolled_face(99));
        for (device, fp_ref) in &summary.fingerprint_refs {
            let stored = kb
                .fetch_template(fp_ref, &StoreLocation::DeviceLocal(device.clone()))
                .unwrap();
            assert_eq!(stored, enrolled_fingerprint(99));
        }
        let user = kb.get_user(&UserId::from("carol")).unwrap();
        assert!(verify_pin("4821", &user).unwrap());
        assert!(!verify_pin("4822", &user).unwrap());
        let pc = user.device(&DeviceId::from("pc-c")).unwrap();
        assert!(pc.fingerprint_template_ref().is_none());
    }

    #[test]
    fn face_and_finger_are_unrelated() {
        let d = hamming_distance(&enrolled_face(5), &enrolled_fingerprint(5).with_kind_face());
        assert!((64..=192).contains(&d), "distance {d}");
    }

    trait AsFace {
        fn with_kind_face(&self) -> BiometricTemplate;
    }

    impl AsFace for BiometricTemplate {
        fn with_kind_face(&self) -> BiometricTemplate {
            BiometricTemplate::from_bytes(self.bytes(), TemplateKind::Face).unwrap()
        }
    }

    #[test]
    fn rejects_duplicates_before_writing() {
        let kb = KnowledgeBase::in_memory();
        enroll(&kb, &spec(), &[5u8; 16]).unwrap();
        let templates_before = kb.snapshot();
        assert!(matches!(
            enroll(&kb, &spec(), &[6u8; 16]),
            Err(EnrollmentError::DuplicateUser(_))
        ));
        assert_eq!(kb.snapshot(), templates_before);

        let mut twice = spec();
        twice.user_id = UserId::from("dan");
        twice.devices.push(twice.devices[0].clone());
        assert!(matches!(
            enroll(&kb, &twice, &[5u8; 16]),
            Err(EnrollmentError::DuplicateDevice(_))
        ));
    }

    #[test]
    fn rejects_malformed_pin() {
        let kb = KnowledgeBase::in_memory();
        let mut bad = spec();
        bad.pin = "12a4".into();
        assert!(matches!(
            enroll(&kb, &bad, &[5u8; 16]),
            Err(EnrollmentError::Pin(AuthError::MalformedPin))
        ));
        assert!(kb.users().is_empty());
    }

    #[test]
    fn spec_parses_from_json_and_hides_pin() {
        let json = r#"{"user_id":"erin","full_name":"Erin","pin":"0000",
            "devices":[{"device_id":"ph-e","device_type":"smartphone"}],"template_seed":3}"#;
        let parsed: EnrollmentSpec = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.devices[0].device_type, DeviceType::Smartphone);
        assert!(!format!("{parsed:?}").contains("0000"));
    }
}
