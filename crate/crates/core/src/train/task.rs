use rand::Rng;

use crate::data::{crop_batch, tiled_batches, ListOpsGenerator, ListOpsParams, RegimeSource};
use crate::error::{config_err, Result};
use crate::model::{HeadKind, ModelConfig, TokenBatch};

/// A labelled sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Training and held-out data for one of the two heads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskData {
    /// Next-token prediction on contiguous streams.
    Lm { train: Vec<usize>, valid: Vec<usize> },
    /// Sequence classification; all examples share one length.
    Classify { train: Vec<Example>, valid: Vec<Example> },
}

/// One batch with its targets: next tokens (flattened) or class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: TokenBatch,
    pub targets: Vec<usize>,
}

impl TaskData {
    /// Rejects data the model cannot consume, before any compute.
    pub fn check_against(&self, model: &ModelConfig) -> Result<()> {
        let max_token = |it: &mut dyn Iterator<Item = usize>| it.max().unwrap_or(0);
        match (self, model.head) {
            (TaskData::Lm { train, valid }, HeadKind::Lm) => {
                let m = max_token(&mut train.iter().chain(valid).copied());
                if m >= model.vocab_size {
                    return config_err(format!("token {m} does not fit vocabulary {}", model.vocab_size));
                }
                if train.len() <= model.context_len || valid.len() <= model.context_len {
                    return config_err(format!("streams must be longer than the context ({})", model.context_len));
                }
            }
            (TaskData::Classify { train, valid }, HeadKind::Classify { n_classes }) => {
                if train.is_empty() || valid.is_empty() {
                    return config_err("classification task needs training and held-out examples");
                }
                let len = train[0].tokens.len();
                for e in train.iter().chain(valid) {
                    if e.tokens.len() != len || len > model.context_len || len == 0 {
                        return config_err(format!(
                            "examples must share one length no longer than the context ({})",
                            model.context_len
                        ));
                    }
                    if e.label >= n_classes {
                        return config_err(format!("label {} outside {n_classes} classes", e.label));
                    }
                }
                let m = max_token(&mut train.iter().chain(valid).flat_map(|e| e.tokens.iter().copied()));
                if m >= model.vocab_size {
                    return config_err(format!("token {m} does not fit vocabulary {}", model.vocab_size));
                }
            }
            _ => return config_err("task kind does not match the model head"),
        }
        Ok(())
    }

    pub fn train_batch(&self, seq_len: usize, batch: usize, rng: &mut impl Rng) -> Result<Batch> {
        match self {
            TaskData::Lm { train, .. } => {
                let b = crop_batch(train, seq_len, batch, rng)?;
                Ok(Batch { inputs: b.inputs, targets: b.targets })
            }
            TaskData::Classify { train, .. } => {
                let picks: Vec<&Example> = (0..batch).map(|_| &train[rng.random_range(0..train.len())]).collect();
                examples_batch(&picks)
            }
        }
    }

    /// Fixed held-out batches, at most `max_items` windows or examples.
    pub fn valid_batches(&self, seq_len: usize, batch: usize, max_items: usize) -> Result<Vec<Batch>> {
        match self {
            TaskData::Lm { valid, .. } => Ok(tiled_batches(valid, seq_len, batch, max_items)?
                .into_iter()
                .map(|b| Batch { inputs: b.inputs, targets: b.targets })
                .collect()),
            TaskData::Classify { valid, .. } => {
                let picked: Vec<&Example> = valid.iter().take(max_items).collect();
                picked.chunks(batch).map(examples_batch).collect()
            }
        }
    }
}

fn examples_batch(picks: &[&Example]) -> Result<Batch> {
    let rows: Vec<Vec<usize>> = picks.iter().map(|e| e.tokens.clone()).collect();
    Ok(Batch { inputs: TokenBatch::from_rows(&rows)?, targets: picks.iter().map(|e| e.label).collect() })
}

/// Independent training and held-out streams from one regime source.
pub fn regime_task(src: &RegimeSource, train_len: usize, valid_len: usize) -> TaskData {
    TaskData::Lm { train: src.generate_stream(train_len, 0).0, valid: src.generate_stream(valid_len, 1).0 }
}

/// Mean window-conditional oracle NLL over exactly the held-out windows a
/// trainer with these settings evaluates on.
pub fn regime_floor(src: &RegimeSource, valid: &[usize], seq_len: usize, max_windows: usize) -> Result<f64> {
    let windows = tiled_batches(valid, seq_len, 1, max_windows)?;
    let mut total = 0.0;
    for w in &windows {
        let o = w.offsets[0];
        total += src.conditional_nll(&valid[o..o + seq_len + 1])?;
    }
    Ok(total / windows.len() as f64)
}

/// ListOps training and held-out sets drawn from disjoint generator streams.
pub fn listops_task(params: ListOpsParams, n_train: usize, n_valid: usize, seed: u64) -> Result<TaskData> {
    let to_examples = |g: &mut ListOpsGenerator, n| {
        g.samples(n).into_iter().map(|s| Example { tokens: s.tokens, label: s.label }).collect::<Vec<_>>()
    };
    let mut train_gen = ListOpsGenerator::new(params, seed)?;
    let mut valid_gen = ListOpsGenerator::new(params, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    Ok(TaskData::Classify { train: to_examples(&mut train_gen, n_train), valid: to_examples(&mut valid_gen, n_valid) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RegimeParams;
    use crate::tensor::split_rng;

    #[test]
    fn mismatched_vocab_is_a_config_error() {
        let task = TaskData::Lm { train: vec![9; 300], valid: vec![0; 300] };
        assert!(matches!(task.check_against(&ModelConfig::desk()), Err(crate::Error::Config(_))));
        let cls = listops_task(ListOpsParams::default(), 4, 4, 0).unwrap();
        assert!(cls.check_against(&ModelConfig::desk()).is_err());
        cls.check_against(&ModelConfig::listops(128)).unwrap();
    }

    #[test]
    fn floor_matches_manual_windows() {
        let src = RegimeSource::generate(&RegimeParams::default()).unwrap();
        let TaskData::Lm { valid, .. } = regime_task(&src, 500, 100) else { unreachable!() };
        let f = regime_floor(&src, &valid, 16, 3).unwrap();
        let manual: f64 = (0..3).map(|w| src.conditional_nll(&valid[w * 16..w * 16 + 17]).unwrap()).sum::<f64>() / 3.0;
        assert_eq!(f, manual);
    }

    #[test]
    fn classify_batches_carry_labels() {
        let task = listops_task(ListOpsParams { max_len: 32, ..ListOpsParams::default() }, 10, 5, 1).unwrap();
        let b = task.train_batch(32, 4, &mut split_rng(0, "x")).unwrap();
        assert_eq!(b.inputs.batch, 4);
        assert_eq!(b.targets.len(), 4);
        let v = task.valid_batches(32, 2, 100).unwrap();
        assert_eq!(v.iter().map(|b| b.inputs.batch).collect::<Vec<_>>(), vec![2, 2, 1]);
    }
}
