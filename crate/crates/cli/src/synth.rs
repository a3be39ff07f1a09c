//! `synth`: write a generated dataset as record files plus a manifest.

use serde::Serialize;

use wglab_core::data::{unigram_entropy, write_records, Record, RegimeSource};
use wglab_core::train::{listops_task, TaskData};

use crate::spec::{DataSpec, RunSpec};
use crate::{write_json, CliError, CliResult};

pub const TRAIN_FILE: &str = "train.wgds";
pub const VALID_FILE: &str = "valid.wgds";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub kind: &'static str,
    /// Everything needed to regenerate the files.
    pub data: DataSpec,
    pub train_file: String,
    pub valid_file: String,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub train_tokens: usize,
    pub valid_tokens: usize,
    /// Per-class counts over the training set (classification data only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_histogram: Option<Vec<usize>>,
    /// Exact forward-algorithm NLL of the held-out stream (regime data only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_oracle_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_unigram_entropy: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn cmd_synth(spec: &RunSpec) -> CliResult<Manifest> {
    std::fs::create_dir_all(&spec.out_dir)?;
    let (train, valid, manifest) = match &spec.data {
        DataSpec::Regime(r) => {
            let src = RegimeSource::generate(&r.params())?;
            let train = src.generate_stream(r.train_len, 0).0;
            let valid = src.generate_stream(r.valid_len, 1).0;
            let mut warnings = Vec::new();
            if r.n_regimes == 1 {
                warnings.push("degenerate: no hierarchy (a single regime is a memoryless source)".to_string());
            }
            if r.switch_prob == 0.0 {
                warnings.push("switch_prob 0: every stream stays in its first regime".to_string());
            }
            let manifest = Manifest {
                kind: "regime",
                data: spec.data.clone(),
                train_file: TRAIN_FILE.into(),
                valid_file: VALID_FILE.into(),
                train_samples: 1,
                valid_samples: 1,
                train_tokens: train.len(),
                valid_tokens: valid.len(),
                label_histogram: None,
                valid_oracle_nll: Some(src.oracle_nll(&valid)?),
                valid_unigram_entropy: Some(unigram_entropy(&valid)),
                warnings,
            };
            (vec![Record { tokens: train, label: None }], vec![Record { tokens: valid, label: None }], manifest)
        }
        DataSpec::Listops(l) => {
            let TaskData::Classify { train, valid } = listops_task(l.params(), l.n_train, l.n_valid, l.seed)? else {
                unreachable!("listops data is always a classification task")
            };
            let mut hist = vec![0; 10];
            for e in &train {
                hist[e.label] += 1;
            }
            let mut warnings = Vec::new();
            if let Some(missing) = hist.iter().position(|&c| c == 0) {
                warnings.push(format!("class {missing} never occurs in the training set"));
            }
            let to_records = |ex: Vec<wglab_core::train::Example>| -> Vec<Record> {
                ex.into_iter().map(|e| Record { tokens: e.tokens, label: Some(e.label) }).collect()
            };
            let manifest = Manifest {
                kind: "listops",
                data: spec.data.clone(),
                train_file: TRAIN_FILE.into(),
                valid_file: VALID_FILE.into(),
                train_samples: train.len(),
                valid_samples: valid.len(),
                train_tokens: train.iter().map(|e| e.tokens.len()).sum(),
                valid_tokens: valid.iter().map(|e| e.tokens.len()).sum(),
                label_histogram: Some(hist),
                valid_oracle_nll: None,
                valid_unigram_entropy: None,
                warnings,
            };
            (to_records(train), to_records(valid), manifest)
        }
        DataSpec::File(_) => return Err(CliError::Config("`file` data already exists; nothing to synthesise".into())),
    };
    write_records(&spec.out_dir.join(TRAIN_FILE), &train)?;
    write_records(&spec.out_dir.join(VALID_FILE), &valid)?;
    write_json(&spec.out_dir.join(MANIFEST_FILE), &manifest)?;
    write_json(&spec.out_dir.join(crate::run::RESOLVED_FILE), spec)?;
    Ok(manifest)
}
