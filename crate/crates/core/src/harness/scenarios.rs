//! Built-in scenarios used by `demo` and the acceptance suite.

use serde_json::{json, Value};

use super::manifest::ScenarioManifest;

pub const DEMO_SEEDS: usize = 200;

/// Motion scenario: the default at-rest condition, four baselines and the
/// MotionCFG corner grid.
pub fn motion_value(seeds: usize) -> Value {
    json!({
        "schema_version": 1,
        "name": "motion",
        "policies": [
            {"kind": "NegPromptCFG", "id": "Baseline", "omega_std": 6.0},
            {"kind": "StandardCFG", "omega_std": 6.0},
            {"kind": "CADS", "omega_std": 6.0},
            {"kind": "IntervalGuidance", "omega_std": 6.0},
            {"kind": "MotionCFG", "omega": 6.0, "omega_std": 6.0,
             "tau": [0.1, 0.2], "sigma_c": [0.1, 0.5]}
        ],
        "seeds": {"count": seeds, "base": 0},
        "outputs": {"charts": [
            {"x": "sigma_c", "y": "flow"},
            {"x": "tau", "y": "flow"},
            {"x": "sigma_c", "y": "align_err"}
        ]}
    })
}

/// Counting scenario: seeds cycle through requests for 1, 2 and 3 present
/// slots; the MotionCFG variant perturbs the count block.
pub fn counting_value(seeds: usize) -> Value {
    json!({
        "schema_version": 1,
        "name": "counting",
        "conditions": [
            {"presence": [1.0, 0.0, 0.0]},
            {"presence": [1.0, 1.0, 0.0]},
            {"presence": [1.0, 1.0, 1.0]}
        ],
        "policies": [
            {"kind": "NegPromptCFG", "id": "Baseline", "omega_std": 6.0},
            {"kind": "MotionCFG", "id": "MotionCFG-count", "omega": 6.0, "omega_std": 6.0,
             "tau": [0.1, 0.2], "sigma_c": [0.1, 0.5], "targets": ["count"]}
        ],
        "seeds": {"count": seeds, "base": 0},
        "outputs": {"charts": [{"x": "sigma_c", "y": "count_err"}]}
    })
}

pub fn motion(seeds: usize) -> ScenarioManifest {
    ScenarioManifest::from_value(motion_value(seeds)).expect("built-in motion scenario is valid")
}

pub fn counting(seeds: usize) -> ScenarioManifest {
    ScenarioManifest::from_value(counting_value(seeds)).expect("built-in counting scenario is valid")
}
