//! Declarative run configuration.
//!
//! A config file names a profile whose preset supplies every field the file
//! leaves out, so the resolved config (and its hash) fully determines a run.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fault::FaultModelSpec;
use crate::ftt::{EvalConfig, SearchConfig, TrainConfig};
use crate::harness::dataset::{DatasetKind, DatasetSpec};
use crate::nn::{ArchSpec, PrimitiveKind, SearchSpace, SuperNetConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Small synthetic inputs, few cells, minutes on one core.
    Desk,
    /// CIFAR-10 at the published search and training scale.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown profile {s:?} (expected desk or full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Fault family; its own rate is replaced by each entry of `rates`.
    pub fault: FaultModelSpec,
    pub rates: Vec<f64>,
    /// One device instance (weight-fault draw) per seed.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub samples: usize,
    pub eval_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectConfig {
    pub primitives: Vec<PrimitiveKind>,
    pub depth: usize,
    pub channels: usize,
    pub fault: FaultModelSpec,
    pub mixed_depth: usize,
    pub mixed_channels: usize,
    pub eval_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSelectionConfig {
    pub enabled: bool,
    pub candidates: Vec<f64>,
    /// Minimum clean test accuracy for a candidate rate to be kept.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub profile: Profile,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ArchSpec,
    pub supernet: SuperNetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub search: SearchConfig,
    pub sweep: SweepConfig,
    pub baseline: BaselineConfig,
    pub inspect: InspectConfig,
    pub rate_selection: RateSelectionConfig,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        let desk = profile == Profile::Desk;
        let dataset = if desk {
            DatasetSpec { classes: 4, train_size: 1200, test_size: 400, image: [3, 16, 16], noise: 0.6, ..DatasetSpec::default() }
        } else {
            DatasetSpec {
                kind: DatasetKind::Cifar10Binary,
                root: Some("data/cifar-10-batches-bin".into()),
                classes: 10,
                image: [3, 32, 32],
                ..DatasetSpec::default()
            }
        };
        let supernet = if desk {
            SuperNetConfig {
                cells: 3,
                space: SearchSpace { nodes: 4, ..SearchSpace::default() },
                base_channels: 8,
                ..SuperNetConfig::default()
            }
        } else {
            SuperNetConfig::default()
        };
        let mibb = FaultModelSpec::Mibb { p_m: 1e-4 };
        let epochs = if desk { 10 } else { 100 };
        let batch_size = if desk { 32 } else { 128 };
        Self {
            schema_version: SCHEMA_VERSION,
            profile,
            seed: 0,
            dataset,
            model: ArchSpec::SimpleCnn { layers: if desk { vec![(16, 1), (32, 2), (32, 2)] } else { vec![(64, 1), (128, 2), (256, 2)] } },
            supernet,
            train: TrainConfig { epochs, batch_size, alpha_l: 0.5, fault: mibb, ..TrainConfig::default() },
            eval: EvalConfig::default(),
            search: SearchConfig { epochs, batch_size, alpha_r: 0.5, alpha_l: 0.5, fault: mibb, ..SearchConfig::default() },
            sweep: SweepConfig { fault: mibb, rates: vec![0.0, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4], seeds: (0..5).collect() },
            baseline: BaselineConfig { samples: 5, eval_seeds: (0..5).collect() },
            inspect: InspectConfig {
                primitives: vec![
                    PrimitiveKind::SepConv3x3,
                    PrimitiveKind::SepConv5x5,
                    PrimitiveKind::DilConv3x3,
                    PrimitiveKind::DilConv5x5,
                ],
                depth: 5,
                channels: if desk { 16 } else { 64 },
                fault: mibb,
                mixed_depth: 3,
                mixed_channels: if desk { 16 } else { 64 },
                eval_seeds: (0..5).collect(),
            },
            rate_selection: RateSelectionConfig { enabled: false, candidates: vec![3e-4, 1e-4, 3e-5], threshold: 0.5 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} is not {SCHEMA_VERSION}", self.schema_version)));
        }
        self.dataset.validate()?;
        self.supernet.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        self.sweep.fault.validate()?;
        self.inspect.fault.validate()?;
        if self.sweep.seeds.is_empty() || self.baseline.eval_seeds.is_empty() || self.inspect.eval_seeds.is_empty() {
            return Err(Error::Config("seed lists must be non-empty".into()));
        }
        if self.sweep.rates.iter().chain(&self.rate_selection.candidates).any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("fault rates must be finite and non-negative".into()));
        }
        if self.inspect.primitives.is_empty() || self.inspect.depth == 0 {
            return Err(Error::Config("inspection needs primitives and a positive depth".into()));
        }
        Ok(())
    }

    /// Parse a config, filling omitted fields from the profile preset.
    /// `profile` overrides the file's own `profile` key.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let named = match user.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse()?),
            Some(_) => return Err(Error::Config("profile must be a string".into())),
            None => None,
        };
        let profile = profile.or(named).unwrap_or(Profile::Desk);
        let mut merged = toml::Table::try_from(Self::preset(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        merged.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| Error::Config(e.to_string()))?);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, profile)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Recursive table merge; `over` wins on leaves and arrays. Tagged enum
/// tables (`kind` present in `over`) replace rather than merge, so switching
/// variants does not inherit fields of the preset variant.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
