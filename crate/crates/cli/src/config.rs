//! Experiment configuration files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use magail::envs::{preset, GridSpec, TAGS};
use magail::mack::MackConfig;
use magail::magail::MagailConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertMethod {
    TeamVi,
    ZerosumShapley,
    Mack,
    /// Closed-form speaker/listener policy for coop_comm.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImitationMethod {
    Bc,
    Gail,
    MagailC,
    MagailD,
    MagailZs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub method: ExpertMethod,
    /// Solver tolerance for team_vi and zerosum_shapley.
    pub tol: f64,
    pub mack: MackConfig,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            method: ExpertMethod::TeamVi,
            tol: 1e-8,
            mack: MackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitationConfig {
    pub method: ImitationMethod,
    pub magail: MagailConfig,
}

impl Default for ImitationConfig {
    fn default() -> Self {
        Self {
            method: ImitationMethod::MagailC,
            magail: MagailConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            horizon: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub game: String,
    /// Resolved grid parameters: the game's preset overlaid with the keys
    /// given in the file.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub expert: ExpertConfig,
    #[serde(default)]
    pub demos: DemoConfig,
    #[serde(default)]
    pub imitation: ImitationConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn grid(&self) -> GridSpec {
        self.grid.clone().expect("grid resolved at load time")
    }
}

/// Parses a config, reporting the offending field path on type errors.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let mut value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
    let game = value
        .get("game")
        .and_then(Value::as_str)
        .context("config field `game` is required")?
        .to_string();
    if !TAGS.contains(&game.as_str()) {
        bail!("game: unknown tag {game:?} (expected one of {})", TAGS.join(", "));
    }
    let mut grid = serde_json::to_value(preset(&game)?)?;
    if let Some(overrides) = value.get("grid") {
        let Some(map) = overrides.as_object() else {
            bail!("grid: expected an object");
        };
        for (k, v) in map {
            grid[k] = v.clone();
        }
    }
    value["grid"] = grid;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("{path}: {}", e.into_inner())
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        bail!("schema_version: expected {SCHEMA_VERSION}, found {}", cfg.schema_version);
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_preset_and_defaults() {
        let cfg = parse(r#"{"schema_version": 1, "game": "coop_comm", "seed": 3}"#).unwrap();
        assert_eq!(cfg.grid(), preset("coop_comm").unwrap());
        assert_eq!(cfg.demos, DemoConfig::default());
        assert_eq!(cfg.imitation.method, ImitationMethod::MagailC);
    }

    #[test]
    fn grid_keys_overlay_the_preset() {
        let cfg = parse(r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "grid": {"width": 4}}"#).unwrap();
        let mut want = preset("coop_comm").unwrap();
        want.width = 4;
        assert_eq!(cfg.grid(), want);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = [
            (r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "demos": {"episodes": "many"}}"#, "demos.episodes"),
            (r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "grid": {"widht": 4}}"#, "grid"),
            (r#"{"schema_version": 1, "game": "maze", "seed": 0}"#, "game"),
            (r#"{"schema_version": 2, "game": "coop_comm", "seed": 0}"#, "schema_version"),
            (r#"{"schema_version": 1, "game": "coop_comm"}"#, "seed"),
            (r#"{"schema_version": 1, "game": "coop_comm", "seed": 0, "imitation": {"method": "dagger"}}"#, "imitation.method"),
        ];
        for (text, field) in bad {
            let msg = format!("{:#}", parse(text).unwrap_err());
            assert!(msg.contains(field), "{msg}");
        }
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = parse(r#"{"schema_version": 1, "game": "keep_away", "seed": 9, "expert": {"method": "zerosum_shapley"}}"#).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }
}
