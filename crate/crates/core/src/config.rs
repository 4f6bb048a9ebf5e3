//! Run configuration: one TOML file, dotted `key.path=value` overrides, and
//! a fully resolved copy written next to every run's outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{ProbeConfig, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Named default sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 32×32 inputs, 64-d backbone, 30 epochs of batch 64.
    Desk,
    /// 224×224 inputs, 512-d backbone, 240 epochs of batch 256.
    PaperScale,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper_scale" | "paper-scale" => Ok(Profile::PaperScale),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every sub-seed when the config is resolved.
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub augmentation: AugmentationConfig,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self {
                seed: 0,
                data: None,
                out: None,
                model: ModelConfig::desk(3, 0),
                augmentation: AugmentationConfig::desk(),
                synth: SynthSpec::default(),
                train: TrainConfig::default(),
                probe: ProbeConfig::default(),
            },
            Profile::PaperScale => Self {
                model: ModelConfig::paper_scale(3, 0),
                augmentation: AugmentationConfig::paper_scale(),
                synth: SynthSpec {
                    image_size: 256,
                    ..SynthSpec::default()
                },
                train: TrainConfig::paper_scale(),
                probe: ProbeConfig::paper_scale(),
                ..Self::for_profile(Profile::Desk)
            },
        }
    }

    /// Profile defaults overlaid with the keys present in `text`.
    pub fn from_toml(text: &str, profile: Profile) -> Result<Self> {
        let mut base = to_value(&Self::for_profile(profile))?;
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        merge(&mut base, toml::Value::Table(file));
        from_value(base)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }

    /// Applies `key.path=value`; the value is parsed as a TOML literal and
    /// falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut root = to_value(self)?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| unknown(key))?;
        let mut node = &mut root;
        for p in parts {
            node = node.get_mut(p).ok_or_else(|| unknown(key))?;
        }
        let table = node.as_table_mut().ok_or_else(|| unknown(key))?;
        table.insert(leaf.to_string(), value.clone());
        let updated = from_value(root)?;
        // nested sections ignore unknown keys, so confirm the key survived
        let check = to_value(&updated)?;
        let landed = key.split('.').try_fold(&check, |n, p| n.get(p));
        if landed.is_none() {
            return Err(unknown(key));
        }
        *self = updated;
        Ok(())
    }

    /// Propagates `seed` and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
        self.model.validate()?;
        self.augmentation.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        Ok(self)
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key '{key}'"))
}

fn parse_literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::Config(format!("config does not serialize: {e}")))
}

fn from_value<T: for<'de> Deserialize<'de>>(v: toml::Value) -> Result<T> {
    v.try_into().map_err(|e| Error::Config(format!("{e}")))
}

/// Recursive table merge; scalars and arrays in `over` replace those in `base`.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for profile in [Profile::Desk, Profile::PaperScale] {
            let cfg = RunConfig::for_profile(profile);
            let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), profile).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn file_keys_overlay_defaults() {
        let cfg = RunConfig::from_toml("seed = 4\n[train.loss]\ntau = 0.2\n", Profile::Desk).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.loss.tau, 0.2);
        assert_eq!(cfg.train.loss.lambda_inter, 1.0);
        assert_eq!(cfg.train.batch_size, 64);
        assert!(RunConfig::from_toml("bogus = 1\n", Profile::Desk).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("train.loss.lambda_inter=0.5").unwrap();
        cfg.set("train.epochs = 3").unwrap();
        cfg.set("data=/tmp/x").unwrap();
        cfg.set("augmentation.crop_scale=[0.5, 1.0]").unwrap();
        assert_eq!(cfg.train.loss.lambda_inter, 0.5);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.data.as_deref(), Some(Path::new("/tmp/x")));
        assert_eq!(cfg.augmentation.crop_scale, [0.5, 1.0]);
        assert!(cfg.set("train.loss.temperature=1").is_err());
        assert!(cfg.set("nothing").is_err());
        assert!(cfg.set("train.epochs=many").is_err());
    }

    #[test]
    fn resolve_validates_and_propagates_seed() {
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        let r = cfg.clone().resolve().unwrap();
        assert_eq!((r.model.seed, r.train.seed, r.probe.seed), (9, 9, 9));
        cfg.train.loss.tau = 0.0;
        assert!(matches!(cfg.resolve(), Err(Error::Range { what: "tau", .. })));
    }
}
