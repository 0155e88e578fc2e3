use iam_core::domain::DeviceType;

/// Keyword classification of a client agent string, case-insensitive and
/// checked in this order: `mobile`/`phone` → smartphone, `tablet`/`ipad` →
/// tablet, `laptop` → laptop, anything else → desktop.
pub fn detect_device(agent: &str) -> DeviceType {
    let agent = agent.to_ascii_lowercase();
    let has = |words: &[&str]| words.iter().any(|w| agent.contains(w));
    if has(&["mobile", "phone"]) {
        DeviceType::Smartphone
    } else if has(&["tablet", "ipad"]) {
        DeviceType::Tablet
    } else if has(&["laptop"]) {
        DeviceType::Laptop
    } else {
        DeviceType::Desktop
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_rules() {
        let cases = [
            ("Mozilla/5.0 (iPhone; Mobile)", DeviceType::Smartphone),
            ("Mozilla/5.0 (Windows NT 10.0)", DeviceType::Desktop),
            ("", DeviceType::Desktop),
            ("Mozilla/5.0 (iPad; CPU OS 17_0)", DeviceType::Tablet),
            ("SomeBank/2.1 (Android Tablet)", DeviceType::Tablet),
            ("bank-cli LAPTOP edition", DeviceType::Laptop),
            ("Windows Phone 10", DeviceType::Smartphone),
        ];
        for (agent, expected) in cases {
            assert_eq!(detect_device(agent), expected, "{agent:?}");
        }
    }
}
