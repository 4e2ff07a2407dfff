//! Run configuration: defaults, a TOML file, `--set` overrides and typed
//! flags, resolved in that order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use xgrasp_core::data::{HandSpec, SynthConfig};
use xgrasp_core::gevaluate::EvalConfig;
use xgrasp_core::nets::train::{PretrainConfig, TrainConfig};
use xgrasp_core::nets::ModelConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub hand: HandSpec,
    pub grasps: usize,
    pub objects: usize,
    /// Keep only grasps the evaluator labels stable.
    pub stable_only: bool,
    pub grasp: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            hand: HandSpec::default(),
            grasps: 200,
            objects: 12,
            stable_only: false,
            grasp: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for data generation and baselines.
    pub seed: u64,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthSection,
}

/// What a run wrote next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

fn to_table(cfg: &RunConfig) -> Result<Table, CliError> {
    Table::try_from(cfg).map_err(|e| CliError::Input(format!("config: {e}")))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Dotted paths in `user` that the resolved config does not have.
fn unknown_keys(user: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (known.get(k), v) {
            (None, _) if !optional_key(&path) => out.push(path),
            (Some(Value::Table(kt)), Value::Table(ut)) => unknown_keys(ut, kt, &path, out),
            _ => {}
        }
    }
}

/// Keys that serialize to nothing when unset.
fn optional_key(path: &str) -> bool {
    path == "synth.grasp.approach"
}

/// Parses `a.b.c=value`; the value is TOML, or a bare string.
fn parse_set(spec: &str) -> Result<Table, CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("--set {spec:?}: expected key=value")))?;
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Input(format!("--set {spec:?}: empty key segment")));
    }
    let last = parts.pop().expect("non-empty");
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(table));
        table = outer;
    }
    Ok(table)
}

/// Layers the config file and `--set` overrides over `base`.
pub fn resolve(base: &RunConfig, file: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut user = Table::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let t: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Input(format!("config {}: {}", path.display(), e.message())))?;
        merge(&mut user, t);
    }
    for s in sets {
        merge(&mut user, parse_set(s)?);
    }
    let mut table = to_table(base)?;
    merge(&mut table, user.clone());
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Input(format!("config: {}", e.message())))?;
    let mut unknown = Vec::new();
    unknown_keys(&user, &to_table(&cfg)?, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(CliError::Input(format!("unknown config keys: {}", unknown.join(", "))));
    }
    Ok(cfg)
}

pub fn write_snapshot(dir: &Path, snapshot: &Snapshot) -> Result<(), CliError> {
    let text = toml::to_string(snapshot).map_err(|e| CliError::Input(format!("config snapshot: {e}")))?;
    let path = dir.join(crate::SNAPSHOT_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_snapshot(dir: &Path) -> Result<Snapshot, CliError> {
    let path = dir.join(crate::SNAPSHOT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {}", path.display(), e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_an_empty_resolution() {
        assert_eq!(resolve(&RunConfig::default(), None, &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn set_overrides_nested_values() {
        let sets = ["train.epochs=7".to_string(), "model.object_preset=paper".to_string(), "seed=3".to_string()];
        let c = resolve(&RunConfig::default(), None, &sets).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.model.object_preset, xgrasp_core::nets::ObjectPreset::Paper);
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 5\n[train]\nepochs = 3\nlr = 0.01\n[synth.hand]\nfingers = 4\n").unwrap();
        let c = resolve(&RunConfig::default(), Some(&p), &["train.lr=0.5".into()]).unwrap();
        assert_eq!((c.seed, c.train.epochs, c.train.lr, c.synth.hand.fingers), (5, 3, 0.5, 4));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected() {
        assert!(resolve(&RunConfig::default(), None, &["train.epoch=3".into()]).is_err());
        assert!(resolve(&RunConfig::default(), None, &["train.epochs=\"many\"".into()]).is_err());
        assert!(resolve(&RunConfig::default(), None, &["noequals".into()]).is_err());
        assert!(resolve(&RunConfig::default(), None, &["synth.grasp.approach=[0.0, 0.0, 1.0]".into()]).is_ok());
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Snapshot {
            command: "train".into(),
            inputs: BTreeMap::from([("dataset".to_string(), "d.jsonl".to_string())]),
            config: RunConfig::default(),
        };
        write_snapshot(dir.path(), &s).unwrap();
        assert_eq!(read_snapshot(dir.path()).unwrap(), s);
    }
}
