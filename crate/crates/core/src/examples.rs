//! Bundled example scenarios. These are the canonical fixtures the
//! integration tests run against, embedded so the binary works without the
//! repository checkout.

use crate::scenario::{Scenario, ScenarioError};

pub const EXAMPLE_NAMES: [&str; 4] = [
    "example1",
    "example2_case1",
    "example2_case2",
    "example3",
];

/// Raw TOML text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(include_str!("../../../scenarios/example1.toml")),
        "example2_case1" => Some(include_str!("../../../scenarios/example2_case1.toml")),
        "example2_case2" => Some(include_str!("../../../scenarios/example2_case2.toml")),
        "example3" => Some(include_str!("../../../scenarios/example3.toml")),
        _ => None,
    }
}

pub fn bundled_scenario(name: &str) -> Result<Scenario, ScenarioError> {
    let text = bundled(name).ok_or_else(|| {
        ScenarioError::Invalid(format!(
            "no bundled scenario '{name}' (have: {})",
            EXAMPLE_NAMES.join(", ")
        ))
    })?;
    Scenario::from_toml(text)
}

/// FNV-1a, used to pin the bundled fixtures against accidental edits.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_scenarios_parse() {
        for name in EXAMPLE_NAMES {
            let sc = bundled_scenario(name).unwrap();
            assert_eq!(sc.name, name);
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(bundled("example99").is_none());
        assert!(bundled_scenario("example99").is_err());
    }

    #[test]
    fn fnv1a_reference_vector() {
        // Standard test vector for 64-bit FNV-1a.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
