//! Run configuration: a TOML document, optionally patched by
//! `dotted.key=value` overrides before it is deserialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ChunkPolicy;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::DurationCondition;
use crate::model::LossConfig;
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            batch_size: 16,
            epochs: 100,
        }
    }
}

impl OptimConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Protocol files and the directories holding `<utterance_id>.wav`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train_protocol: Option<PathBuf>,
    pub train_audio: Option<PathBuf>,
    pub dev_protocol: Option<PathBuf>,
    pub dev_audio: Option<PathBuf>,
    pub eval_protocol: Option<PathBuf>,
    pub eval_audio: Option<PathBuf>,
    /// Created on demand, so it need not exist at load time.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub dataset: String,
    /// `"<n>s"` or `"variable"`.
    pub conditions: Vec<String>,
    pub batch_size: usize,
    /// Chunk length used for the per-epoch dev loss and dev EER.
    pub dev_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dataset: "eval".into(),
            conditions: DurationCondition::standard().iter().map(ToString::to_string).collect(),
            batch_size: 16,
            dev_len: 64_600,
        }
    }
}

impl EvalConfig {
    pub fn parsed_conditions(&self) -> Result<Vec<DurationCondition>> {
        self.conditions.iter().map(|c| c.parse()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds parameter init, shuffling and chunk draws. Required.
    pub seed: u64,
    #[serde(default = "EncoderConfig::desk")]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub chunk: ChunkPolicy,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Full-width six-block encoder; Adam at lr 1e-6, batch 16, 100 epochs.
    pub fn full(seed: u64) -> Self {
        Self {
            seed,
            encoder: EncoderConfig::full(),
            loss: LossConfig::default(),
            chunk: ChunkPolicy::default(),
            optim: OptimConfig::default(),
            data: DataPaths::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Narrow encoder, larger step size and 20 epochs: minutes on one core.
    pub fn desk(seed: u64) -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            optim: OptimConfig {
                lr: 2e-3,
                epochs: 20,
                ..OptimConfig::default()
            },
            ..Self::full(seed)
        }
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        // Defaults underneath, so a partial section or an override into an
        // absent section still deserializes. The seed has no default.
        let mut doc: toml::Table = toml::Table::try_from(Self::desk(0)).expect("defaults serialize");
        doc.remove("seed");
        merge(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        self.chunk.validate()?;
        if self.optim.batch_size == 0 || self.optim.epochs == 0 {
            return Err(Error::Config("optim.batch_size and optim.epochs must be positive".into()));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(Error::Config("optim.lr must be positive".into()));
        }
        if self.eval.batch_size == 0 || self.eval.dev_len == 0 {
            return Err(Error::Config("eval.batch_size and eval.dev_len must be positive".into()));
        }
        self.eval.parsed_conditions()?;
        for (name, p) in self.paths() {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!("data.{name} = {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    fn paths(&self) -> [(&'static str, &Option<PathBuf>); 6] {
        let d = &self.data;
        [
            ("train_protocol", &d.train_protocol),
            ("train_audio", &d.train_audio),
            ("dev_protocol", &d.dev_protocol),
            ("dev_audio", &d.dev_audio),
            ("eval_protocol", &d.eval_protocol),
            ("eval_audio", &d.eval_audio),
        ]
    }

    /// Named path, or a configuration error when it is unset.
    pub fn require(&self, name: &str) -> Result<&Path> {
        self.paths()
            .into_iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, p)| p.as_deref())
            .ok_or_else(|| Error::Config(format!("data.{name} is required for this command")))
    }
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `key.path=value` in a TOML table. The value is read as a TOML
/// literal when it parses as one (`3`, `1e-3`, `true`, `[1, 2]`,
/// `"text"`) and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}
