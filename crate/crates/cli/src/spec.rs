//! Run spec: one JSON document describing model, training, data
//! and output directory, with dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use wglab_core::data::{ListOpsParams, RegimeParams};
use wglab_core::data::CharVocab;
use wglab_core::model::ModelConfig;
use wglab_core::train::TrainConfig;

use crate::CliError;

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "WGLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Reference,
    Listops,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Desk => ModelConfig::desk(),
            Preset::Reference => ModelConfig::reference(),
            Preset::Listops => ModelConfig::listops(ListOpsParams::default().max_len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Base model configuration; fields under `model` override it.
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSpec,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Regime(RegimeData),
    Listops(ListOpsData),
    File(FileData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeData {
    pub n_regimes: usize,
    pub n_symbols: usize,
    pub switch_prob: f64,
    pub seed: u64,
    pub train_len: usize,
    pub valid_len: usize,
}

impl Default for RegimeData {
    fn default() -> Self {
        let p = RegimeParams::default();
        Self {
            n_regimes: p.n_regimes,
            n_symbols: p.n_symbols,
            switch_prob: p.switch_prob,
            seed: p.seed,
            train_len: 200_000,
            valid_len: 20_000,
        }
    }
}

impl RegimeData {
    pub fn params(&self) -> RegimeParams {
        RegimeParams { n_regimes: self.n_regimes, n_symbols: self.n_symbols, switch_prob: self.switch_prob, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListOpsData {
    pub max_depth: usize,
    pub max_len: usize,
    pub min_args: usize,
    pub max_args: usize,
    pub branch_prob: f64,
    pub n_train: usize,
    pub n_valid: usize,
    pub seed: u64,
}

impl Default for ListOpsData {
    fn default() -> Self {
        let p = ListOpsParams::default();
        Self {
            max_depth: p.max_depth,
            max_len: p.max_len,
            min_args: p.min_args,
            max_args: p.max_args,
            branch_prob: p.branch_prob,
            n_train: 20_000,
            n_valid: 1_000,
            seed: 0,
        }
    }
}

impl ListOpsData {
    pub fn params(&self) -> ListOpsParams {
        ListOpsParams {
            max_depth: self.max_depth,
            max_len: self.max_len,
            min_args: self.min_args,
            max_args: self.max_args,
            branch_prob: self.branch_prob,
        }
    }
}

/// Existing data on disk. With `text_vocab` set, `train` is a raw text or
/// byte file split 90/5/5 by position and `valid` must be absent; otherwise
/// both are record files as written by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub train: PathBuf,
    #[serde(default)]
    pub valid: Option<PathBuf>,
    #[serde(default)]
    pub text_vocab: Option<CharVocab>,
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
/// The value is parsed as JSON and falls back to a plain string.
pub fn set_dotted(root: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    for key in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("`{path}` descends into a non-object")))?;
        node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("`{path}` descends into a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a spec document after applying `key=value` overrides and the seed
/// environment variable. Model fields are laid over the chosen preset.
pub fn resolve(mut doc: Value, overrides: &[String], env_seed: Option<&str>) -> Result<RunSpec, CliError> {
    if !doc.is_object() {
        return Err(CliError::Config("run spec must be a JSON object".into()));
    }
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
        set_dotted(&mut doc, k.trim(), v.trim())?;
    }
    if let Some(seed) = env_seed {
        let seed: u64 = seed.trim().parse().map_err(|_| CliError::Config(format!("{SEED_ENV}=`{seed}` is not an integer")))?;
        set_dotted(&mut doc, "train.seed", &seed.to_string())?;
    }
    let preset: Preset = match doc.get("preset") {
        Some(p) => serde_json::from_value(p.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
        None => Preset::default(),
    };
    let mut model = serde_json::to_value(preset.model()).expect("config serialises");
    if let Some(Value::Object(fields)) = doc.get("model") {
        let base = model.as_object_mut().expect("object");
        for (k, v) in fields {
            base.insert(k.clone(), v.clone());
        }
    } else if doc.get("model").is_some() {
        return Err(CliError::Config("`model` must be an object".into()));
    }
    doc.as_object_mut().expect("object").insert("model".into(), model);
    let spec: RunSpec = serde_json::from_value(doc).map_err(|e| CliError::Config(format!("run spec: {e}")))?;
    spec.model.validate()?;
    spec.train.validate()?;
    Ok(spec)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunSpec, CliError> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let env = std::env::var(SEED_ENV).ok();
    resolve(doc, overrides, env.as_deref())
}
