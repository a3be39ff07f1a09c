//! Command implementations behind the `wglab` binary. Each command takes a
//! resolved [`spec::RunSpec`] (or its own arguments) and writes plain files:
//! JSON for configs and summaries, CSV for curves, binary for checkpoints
//! and datasets.

pub mod dwt;
pub mod run;
pub mod spec;
pub mod synth;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use wglab_core::data::{read_records, ListOpsGenerator, RegimeSource};
use wglab_core::train::{listops_task, regime_floor, regime_task, Example, TaskData};
use wglab_core::Error as CoreError;

use spec::{DataSpec, RunSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// A run finished but failed: NaN abort or failed verification.
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 verification or numeric failure, 2 bad configuration or
    /// input, 3 file system trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Data(_) | CoreError::Parse { .. } | CoreError::Json(_) => 2,
                CoreError::Io(_) | CoreError::Checkpoint(_) => 3,
                CoreError::NonFinite { .. } | CoreError::Dimension(_) => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CoreError::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Training data for a spec plus, for the regime source, the generator
/// itself so the oracle floor can be computed.
pub struct LoadedData {
    pub task: TaskData,
    pub source: Option<RegimeSource>,
}

pub fn load_data(spec: &RunSpec) -> CliResult<LoadedData> {
    match &spec.data {
        DataSpec::Regime(r) => {
            let src = RegimeSource::generate(&r.params())?;
            Ok(LoadedData { task: regime_task(&src, r.train_len, r.valid_len), source: Some(src) })
        }
        DataSpec::Listops(l) => {
            // Fail on bad parameters before generating anything.
            ListOpsGenerator::new(l.params(), l.seed)?;
            Ok(LoadedData { task: listops_task(l.params(), l.n_train, l.n_valid, l.seed)?, source: None })
        }
        DataSpec::File(f) => {
            if let Some(vocab) = f.text_vocab {
                if f.valid.is_some() {
                    return Err(CliError::Config("text corpora are split automatically; drop `valid`".into()));
                }
                let splits = wglab_core::data::load_text_corpus(&f.train, vocab)?;
                return Ok(LoadedData { task: TaskData::Lm { train: splits.train, valid: splits.valid }, source: None });
            }
            let valid = f.valid.as_ref().ok_or_else(|| CliError::Config("record data needs a `valid` file".into()))?;
            let train = read_records(&f.train)?;
            let valid = read_records(valid)?;
            let labelled = |rs: &[wglab_core::data::Record]| rs.iter().all(|r| r.label.is_some());
            let unlabelled = |rs: &[wglab_core::data::Record]| rs.iter().all(|r| r.label.is_none());
            let task = if labelled(&train) && labelled(&valid) {
                let ex = |rs: Vec<wglab_core::data::Record>| {
                    rs.into_iter().map(|r| Example { label: r.label.expect("labelled"), tokens: r.tokens }).collect()
                };
                TaskData::Classify { train: ex(train), valid: ex(valid) }
            } else if unlabelled(&train) && unlabelled(&valid) {
                let cat = |rs: Vec<wglab_core::data::Record>| rs.into_iter().flat_map(|r| r.tokens).collect();
                TaskData::Lm { train: cat(train), valid: cat(valid) }
            } else {
                return Err(CliError::Config("record files mix labelled and unlabelled records".into()));
            };
            Ok(LoadedData { task, source: None })
        }
    }
}

/// Oracle NLL floor over the windows the trainer evaluates, for regime data.
pub fn oracle_floor(data: &LoadedData, spec: &RunSpec) -> CliResult<Option<f64>> {
    match (&data.source, &data.task) {
        (Some(src), TaskData::Lm { valid, .. }) => {
            Ok(Some(regime_floor(src, valid, spec.model.context_len, spec.train.eval_windows)?))
        }
        _ => Ok(None),
    }
}
