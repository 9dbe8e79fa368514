//! Scenario files: TOML with every default materialized after parsing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsSpec {
    Lti,
    Unicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderSpec {
    Named(String),
    Permutation(Vec<usize>),
}

impl Default for OrderSpec {
    fn default() -> Self {
        OrderSpec::Named("ascending".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            min: [0.0, 0.0],
            max: [100.0, 100.0],
        }
    }
}

impl DomainSpec {
    pub fn diagonal(&self) -> f64 {
        ((self.max[0] - self.min[0]).powi(2) + (self.max[1] - self.min[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Concentrated,
    Uniform,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    /// Center of the square for `concentrated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Measure file for `file`; only the points are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Fixed initial heading for unicycles; drawn uniformly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            kind: InitialKind::Uniform,
            center: None,
            half_width: None,
            path: None,
            heading: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Mixture,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiSpec {
    /// Row-major rows of `A`; generated from `system_seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnicycleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<f64>,
    /// Scalar multiple of the identity used as `R`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staleness: Option<usize>,
    #[serde(default)]
    pub drop_probability: f64,
}

fn default_horizon() -> usize {
    50
}
fn default_cycles() -> usize {
    20
}
fn default_comm_range() -> f64 {
    20.0
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A complete scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: ModeSpec,
    pub dynamics: DynamicsSpec,
    pub agents: usize,
    /// Number of target samples; ignored for file targets.
    pub samples: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_comm_range")]
    pub comm_range: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub agent_order: OrderSpec,
    #[serde(default)]
    pub w2_every_step: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub domain: DomainSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub lti: LtiSpec,
    #[serde(default)]
    pub unicycle: UnicycleSpec,
    #[serde(default)]
    pub memory: MemorySpec,
}

impl ScenarioConfig {
    /// Range and consistency checks that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::config("agents", "must be at least 1"));
        }
        if self.samples == 0 && self.target.kind == TargetKind::Mixture {
            return Err(Error::config("samples", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "gamma out of range [0, 1]"));
        }
        if self.mode == ModeSpec::Decentralized && !(self.comm_range > 0.0 && self.comm_range.is_finite()) {
            return Err(Error::config("comm_range", "must be positive in decentralized mode"));
        }
        if !(0.0..=1.0).contains(&self.memory.drop_probability) {
            return Err(Error::config("memory.drop_probability", "out of range [0, 1]"));
        }
        match &self.agent_order {
            OrderSpec::Named(s) if s != "ascending" && s != "shuffled" => {
                return Err(Error::config(
                    "agent_order",
                    "expected \"ascending\", \"shuffled\" or a permutation",
                ));
            }
            OrderSpec::Permutation(p) => {
                let mut seen = vec![false; self.agents];
                if p.len() != self.agents
                    || p.iter()
                        .any(|&i| i >= self.agents || std::mem::replace(&mut seen[i], true))
                {
                    return Err(Error::config(
                        "agent_order",
                        format!("not a permutation of 0..{}", self.agents),
                    ));
                }
            }
            _ => {}
        }
        let d = &self.domain;
        if !(d.min[0] < d.max[0] && d.min[1] < d.max[1]) || d.min.iter().chain(&d.max).any(|v| !v.is_finite()) {
            return Err(Error::config("domain", "min must be strictly below max"));
        }
        match self.initial.kind {
            InitialKind::Concentrated => {
                if self.initial.center.is_none() {
                    return Err(Error::config("initial.center", "required for concentrated start"));
                }
                if !self.initial.half_width.is_some_and(|w| w > 0.0) {
                    return Err(Error::config(
                        "initial.half_width",
                        "must be positive for concentrated start",
                    ));
                }
            }
            InitialKind::File if self.initial.path.is_none() => {
                return Err(Error::config("initial.path", "required for file start"));
            }
            _ => {}
        }
        match self.target.kind {
            TargetKind::Mixture if self.target.components.is_empty() => {
                return Err(Error::config("target.components", "at least one component required"));
            }
            TargetKind::File if self.target.path.is_none() => {
                return Err(Error::config("target.path", "required for file targets"));
            }
            _ => {}
        }
        if let Some(w) = self.target.components.iter().map(|c| c.weight).find(|w| !(*w >= 0.0)) {
            return Err(Error::config("target.components.weight", format!("invalid weight {w}")));
        }
        let u = &self.unicycle;
        if u.dt.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::config("unicycle.dt", "must be positive"));
        }
        if u.lookahead.is_some_and(|v| !(v >= 0.0)) {
            return Err(Error::config("unicycle.lookahead", "must be nonnegative"));
        }
        if u.control_penalty.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::config("unicycle.control_penalty", "must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Makes relative file references absolute with respect to `base`.
    pub(crate) fn anchor_paths(&mut self, base: &Path) {
        for p in [&mut self.initial.path, &mut self.target.path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses and validates scenario text. Unknown keys are rejected by name.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.to_string()))?;
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // The path already ends in the offending key for unknown fields.
        let key = if path == "." || path.is_empty() {
            unknown_field(&inner).map_or_else(|| "<root>".to_string(), str::to_string)
        } else {
            path
        };
        Error::config(key, inner.trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn unknown_field(msg: &str) -> Option<&str> {
    let rest = &msg[msg.find("unknown field `")? + "unknown field `".len()..];
    Some(&rest[..rest.find('`')?])
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config_str(&text)?;
    if let Some(dir) = path.parent() {
        cfg.anchor_paths(dir);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "centralized"
dynamics = "lti"
agents = 4
samples = 40

[target]
kind = "mixture"
[[target.components]]
mean = [50.0, 50.0]
cov = [[10.0, 0.0], [0.0, 10.0]]
weight = 1.0
"#;

    #[test]
    fn defaults_are_filled() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.horizon, 50);
        assert_eq!(cfg.cycles, 20);
        assert_eq!(cfg.gamma, 0.0);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.agent_order, OrderSpec::Named("ascending".into()));
    }

    #[test]
    fn gamma_out_of_range() {
        let text = format!("gamma = 1.5\n{MINIMAL}");
        match parse_config_str(&text) {
            Err(Error::Config { key, reason }) => {
                assert_eq!(key, "gamma");
                assert!(reason.contains("gamma out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_named() {
        let text = format!("foo = 1\n{MINIMAL}");
        match parse_config_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "foo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_nested_key_named_with_path() {
        let text = format!("{MINIMAL}\n[unicycle]\nspeed = 3\n");
        match parse_config_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "unicycle.speed"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolved_toml_roundtrips() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(parse_config_str(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_permutation_rejected() {
        let text = format!("agent_order = [0, 0, 1, 2]\n{MINIMAL}");
        assert!(matches!(parse_config_str(&text), Err(Error::Config { key, .. }) if key == "agent_order"));
    }
}
