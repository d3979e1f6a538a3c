//! Shared inputs for the engine benchmarks.

use apnft_core::Scenario;

/// Loads one of the core crate's scenario fixtures.
pub fn fixture(name: &str) -> Scenario {
    let path = format!("{}/../core/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    Scenario::parse(&bytes).unwrap_or_else(|e| panic!("{path}: {e}"))
}
