//! TOML run configuration. Every key is optional; omitted keys keep the
//! library defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gaitkit::data::{Protocol, SynthSpec};
use gaitkit::gda::GdaConfig;
use gaitkit::model::ModelConfig;
use gaitkit::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const SEED_ENV: &str = "GAITKIT_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Protocol preset name or path to a protocol JSON file.
    pub protocol: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gda: GdaConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        // One seed drives every stage; per-section seeds would make the
        // manifest ambiguous.
        for section in ["train", "synth"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(format!(
                    "`{section}.seed` is not accepted; set `seed` at the top level"
                ));
            }
        }
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Seed precedence: flag, then config, then the environment, then 0.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| UsageError(format!("{SEED_ENV}={v} is not a u64")))?,
            ),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.synth.seed = seed;
        Ok(seed)
    }
}

/// Resolves a protocol from a preset name or a JSON file; falls back to
/// `<data>/protocol.json`.
pub fn resolve_protocol(
    name: Option<&str>,
    data: Option<&Path>,
) -> anyhow::Result<(Protocol, Option<PathBuf>)> {
    let from_file = |p: &Path| -> anyhow::Result<Protocol> {
        let text = std::fs::read_to_string(p)
            .with_context(|| format!("reading protocol {}", p.display()))?;
        let proto: Protocol = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("protocol {}: {e}", p.display())))?;
        proto.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(proto)
    };
    match (name, data) {
        (Some(n), _) => match Protocol::preset(n) {
            Some(p) => Ok((p, None)),
            None if Path::new(n).is_file() => {
                Ok((from_file(Path::new(n))?, Some(PathBuf::from(n))))
            }
            None => Err(UsageError(format!(
                "`{n}` is neither a protocol preset nor a protocol file"
            ))
            .into()),
        },
        (None, Some(dir)) => {
            let p = dir.join("protocol.json");
            if !p.is_file() {
                return Err(UsageError(format!(
                    "no --protocol given and {} does not exist",
                    p.display()
                ))
                .into());
            }
            Ok((from_file(&p)?, Some(p)))
        }
        (None, None) => {
            Err(UsageError("a protocol is required (--protocol or --data)".into()).into())
        }
    }
}
