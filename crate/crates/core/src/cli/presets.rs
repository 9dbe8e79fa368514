//! Built-in scenarios on the `[0, 100]²` domain.

pub const PRESET_NAMES: [&str; 4] = [
    "lti_centralized_concentrated",
    "lti_decentralized_uniform",
    "unicycle_decentralized_nomem",
    "unicycle_decentralized_memory",
];

const LTI_TARGET: &str = r#"
[target]
kind = "mixture"

[[target.components]]
mean = [70.0, 72.0]
cov = [[60.0, 15.0], [15.0, 40.0]]
weight = 0.4

[[target.components]]
mean = [28.0, 75.0]
cov = [[35.0, 0.0], [0.0, 35.0]]
weight = 0.3

[[target.components]]
mean = [72.0, 28.0]
cov = [[45.0, -10.0], [-10.0, 50.0]]
weight = 0.3
"#;

const UNICYCLE_TARGET: &str = r#"
[target]
kind = "mixture"

[[target.components]]
mean = [65.0, 70.0]
cov = [[90.0, 30.0], [30.0, 60.0]]
weight = 0.35

[[target.components]]
mean = [30.0, 60.0]
cov = [[40.0, 0.0], [0.0, 80.0]]
weight = 0.25

[[target.components]]
mean = [75.0, 30.0]
cov = [[70.0, -20.0], [-20.0, 50.0]]
weight = 0.25

[[target.components]]
mean = [45.0, 25.0]
cov = [[30.0, 0.0], [0.0, 30.0]]
weight = 0.15
"#;

/// Scenario text of a built-in preset.
pub fn preset(name: &str) -> Option<String> {
    let head = match name {
        "lti_centralized_concentrated" => {
            r#"
mode = "centralized"
dynamics = "lti"
agents = 30
samples = 1000
horizon = 50
cycles = 20

[initial]
kind = "concentrated"
center = [15.0, 15.0]
half_width = 5.0
"#
        }
        "lti_decentralized_uniform" => {
            r#"
mode = "decentralized"
dynamics = "lti"
agents = 30
samples = 1000
horizon = 50
cycles = 20
comm_range = 20.0
gamma = 0.0

[initial]
kind = "uniform"
"#
        }
        "unicycle_decentralized_nomem" => {
            r#"
mode = "decentralized"
dynamics = "unicycle"
agents = 100
samples = 1538
horizon = 50
cycles = 20
comm_range = 20.0
gamma = 0.0

[initial]
kind = "concentrated"
center = [10.0, 10.0]
half_width = 8.0
"#
        }
        "unicycle_decentralized_memory" => {
            r#"
mode = "decentralized"
dynamics = "unicycle"
agents = 100
samples = 1538
horizon = 50
cycles = 20
comm_range = 20.0
gamma = 0.7

[initial]
kind = "concentrated"
center = [10.0, 10.0]
half_width = 8.0
"#
        }
        _ => return None,
    };
    let target = if name.starts_with("lti") {
        LTI_TARGET
    } else {
        UNICYCLE_TARGET
    };
    Some(format!("{}{}", head.trim_start(), target))
}
