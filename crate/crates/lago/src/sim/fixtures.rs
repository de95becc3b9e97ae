//! Scenario specs shipped with the crate.

use super::ScenarioSpec;
use crate::error::{invalid, Result};

pub const BUNDLED_SCENARIOS: [&str; 4] = ["1a", "1b", "2a", "2b"];

/// Bundled scenario by name (`1a`, `1b`, `2a`, `2b`).
pub fn bundled_scenario(name: &str) -> Result<ScenarioSpec> {
    let text = match name {
        "1a" => include_str!("../../data/scenario_1a.json"),
        "1b" => include_str!("../../data/scenario_1b.json"),
        "2a" => include_str!("../../data/scenario_2a.json"),
        "2b" => include_str!("../../data/scenario_2b.json"),
        other => return invalid(format!("unknown scenario {other:?}; bundled: {}", BUNDLED_SCENARIOS.join(", "))),
    };
    Ok(serde_json::from_str(text).expect("bundled scenario parses"))
}
