use std::time::Instant;

use crate::autodiff::Var;
use crate::error::{config_err, Error, Result};
use crate::model::checkpoint::Blob;
use crate::model::{Checkpoint, ForwardPass, GptModel, HeadKind};
use crate::tensor::split_rng;

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::config::TrainConfig;
use super::metrics::{EvalRecord, RunMetrics};
use super::schedule::plateau_schedule;
use super::task::{Batch, TaskData};

const STATE_BLOB: &str = "trainer.state";
const METRICS_BLOB: &str = "trainer.metrics";
const RECORD_WIDTH: usize = 7;

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
    /// Snapshot with the lowest held-out loss.
    pub best: Option<Checkpoint>,
    /// Snapshot of the final state. After an abort, the snapshot taken at
    /// the most recent evaluation whose losses were all finite.
    pub last: Checkpoint,
    pub steps: usize,
    pub wall_s: f64,
}

/// Step-indexed training loop. Every step draws its batch from an RNG
/// keyed by `(seed, step)`, so a run resumed from [`Trainer::snapshot`]
/// continues exactly as the uninterrupted run would.
pub struct Trainer {
    model: GptModel,
    cfg: TrainConfig,
    task: TaskData,
    adam: AdamState,
    metrics: RunMetrics,
    step: usize,
    loss_sum: f64,
    loss_count: usize,
    wall_before: f64,
    started: Instant,
    valid: Vec<Batch>,
    best: Option<(f64, Checkpoint)>,
    last_good: Option<Checkpoint>,
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

impl Trainer {
    pub fn new(model: GptModel, task: TaskData, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        task.check_against(model.config())?;
        let seq_len = match &task {
            TaskData::Lm { .. } => model.config().context_len,
            TaskData::Classify { train, .. } => train[0].tokens.len(),
        };
        let valid = task.valid_batches(seq_len, cfg.batch_size, cfg.eval_windows)?;
        let adam = AdamState::new(model.params());
        Ok(Self {
            model,
            cfg,
            task,
            adam,
            metrics: RunMetrics::default(),
            step: 0,
            loss_sum: 0.0,
            loss_count: 0,
            wall_before: 0.0,
            started: Instant::now(),
            valid,
            best: None,
            last_good: None,
        })
    }

    /// Rebuilds a trainer from a snapshot taken by [`Trainer::snapshot`].
    pub fn resume(ck: &Checkpoint, task: TaskData, cfg: TrainConfig) -> Result<Self> {
        let model = ck.restore_model(&ck.config)?;
        let mut t = Self::new(model, task, cfg)?;
        let state = ck.blob(STATE_BLOB).ok_or_else(|| Error::Checkpoint("snapshot lacks trainer state".into()))?;
        let [step, adam_t, loss_sum, loss_count, wall] = state.data[..] else {
            return Err(Error::Checkpoint("malformed trainer state".into()));
        };
        t.step = step as usize;
        t.adam.t = adam_t as u64;
        t.loss_sum = loss_sum;
        t.loss_count = loss_count as usize;
        t.wall_before = wall;
        for (i, p) in t.model.params().iter().enumerate() {
            for (slot, kind) in [(&mut t.adam.m[i], "m"), (&mut t.adam.v[i], "v")] {
                let b = ck
                    .blob(&format!("adam.{kind}.{}", p.name))
                    .filter(|b| b.data.len() == slot.len())
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimiser state for `{}`", p.name)))?;
                slot.copy_from_slice(&b.data);
            }
        }
        let flat = ck.blob(METRICS_BLOB).map(|b| b.data.as_slice()).unwrap_or(&[]);
        for r in flat.chunks_exact(RECORD_WIDTH) {
            t.metrics.push(EvalRecord {
                step: r[0] as usize,
                epoch: r[1],
                train_nll: r[2],
                valid_nll: r[3],
                valid_acc: (!r[4].is_nan()).then_some(r[4]),
                lr: r[5],
                wall_s: r[6],
            })?;
        }
        t.last_good = Some(ck.clone());
        Ok(t)
    }

    pub fn model(&self) -> &GptModel {
        &self.model
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let history: Vec<f64> = self.metrics.records.iter().map(|r| r.valid_nll).collect();
        plateau_schedule(&history, &self.cfg)
    }

    fn wall(&self) -> f64 {
        self.wall_before + self.started.elapsed().as_secs_f64()
    }

    /// Full trainer state: parameters, optimiser moments, counters and the
    /// metrics so far.
    pub fn snapshot(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        for (i, p) in self.model.params().iter().enumerate() {
            let shape = p.tensor.shape().to_vec();
            ck.blobs.push(Blob { name: format!("adam.m.{}", p.name), shape: shape.clone(), data: self.adam.m[i].clone() });
            ck.blobs.push(Blob { name: format!("adam.v.{}", p.name), shape, data: self.adam.v[i].clone() });
        }
        let state = vec![self.step as f64, self.adam.t as f64, self.loss_sum, self.loss_count as f64, self.wall()];
        ck.blobs.push(Blob { name: STATE_BLOB.into(), shape: vec![state.len()], data: state });
        let flat: Vec<f64> = self
            .metrics
            .records
            .iter()
            .flat_map(|r| [r.step as f64, r.epoch, r.train_nll, r.valid_nll, r.valid_acc.unwrap_or(f64::NAN), r.lr, r.wall_s])
            .collect();
        ck.blobs.push(Blob { name: METRICS_BLOB.into(), shape: vec![flat.len()], data: flat });
        ck.meta = serde_json::json!({ "step": self.step, "train": self.cfg });
        ck
    }

    fn seq_len(&self) -> usize {
        self.valid[0].inputs.seq_len
    }

    fn batch_for_step(&self, step: usize) -> Result<Batch> {
        let mut rng = split_rng(self.cfg.seed, &format!("train.step.{step}"));
        self.task.train_batch(self.seq_len(), self.cfg.batch_size, &mut rng)
    }

    fn loss(&self, batch: &Batch) -> Result<(ForwardPass, Var)> {
        match self.model.config().head {
            HeadKind::Lm => self.model.lm_loss(&batch.inputs, &batch.targets),
            HeadKind::Classify { .. } => self.model.classify_loss(&batch.inputs, &batch.targets),
        }
    }

    /// Loss of the batch the next step will train on, without updating.
    pub fn peek_next_loss(&self) -> Result<f64> {
        let batch = self.batch_for_step(self.step)?;
        let (pass, loss) = self.loss(&batch)?;
        Ok(pass.graph.value(loss)[0])
    }

    /// One optimisation step; returns the batch loss before the update.
    /// The model is left untouched when the step fails.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.batch_for_step(self.step)?;
        let (pass, loss) = self.loss(&batch)?;
        let value = pass.graph.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::NonFinite { op: format!("training loss at step {}", self.step) });
        }
        let grads = pass.graph.backward(loss)?;
        let lr = self.current_lr();
        self.model.zero_grad();
        self.model.accumulate_grads(&pass, &grads)?;
        if let Some(c) = self.cfg.grad_clip {
            clip_grad_norm(self.model.params_mut(), c)?;
        }
        adam_step(self.model.params_mut(), &mut self.adam, lr)?;
        self.step += 1;
        self.loss_sum += value;
        self.loss_count += 1;
        Ok(value)
    }

    /// Held-out `(nll, accuracy)`; accuracy only for classification.
    pub fn evaluate(&self) -> Result<(f64, Option<f64>)> {
        let mut nll = 0.0;
        let mut weight = 0usize;
        let mut correct = 0usize;
        let classify = matches!(self.model.config().head, HeadKind::Classify { .. });
        for b in &self.valid {
            let (pass, loss) = self.loss(b)?;
            nll += pass.graph.value(loss)[0] * b.inputs.batch as f64;
            weight += b.inputs.batch;
            if classify {
                let logits = pass.graph.value(pass.output);
                let c = logits.len() / b.inputs.batch;
                for (row, &label) in logits.chunks_exact(c).zip(&b.targets) {
                    let arg = row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
                    correct += usize::from(arg == label);
                }
            }
        }
        let acc = classify.then(|| correct as f64 / weight as f64);
        Ok((nll / weight as f64, acc))
    }

    fn record_eval(&mut self) -> Result<EvalRecord> {
        let train_nll = if self.loss_count == 0 { self.peek_next_loss()? } else { self.loss_sum / self.loss_count as f64 };
        let (valid_nll, valid_acc) = self.evaluate()?;
        if !valid_nll.is_finite() || !train_nll.is_finite() {
            return Err(Error::NonFinite { op: format!("evaluation at step {}", self.step) });
        }
        let rec = EvalRecord {
            step: self.step,
            epoch: self.step as f64 / self.cfg.steps_per_epoch as f64,
            train_nll,
            valid_nll,
            valid_acc,
            lr: self.current_lr(),
            wall_s: self.wall(),
        };
        self.metrics.push(rec.clone())?;
        self.loss_sum = 0.0;
        self.loss_count = 0;
        let snap = self.snapshot();
        if self.best.as_ref().is_none_or(|(b, _)| valid_nll < *b) {
            self.best = Some((valid_nll, snap.clone()));
        }
        self.last_good = Some(snap);
        Ok(rec)
    }

    pub fn run(self) -> Result<TrainOutcome> {
        self.run_with(|_| {})
    }

    /// Trains to `epochs × steps_per_epoch` steps, evaluating at step 0,
    /// every `eval_interval` steps and at the end. Non-finite values stop
    /// the run and return the last good snapshot; other errors propagate.
    pub fn run_with(mut self, mut on_eval: impl FnMut(&EvalRecord)) -> Result<TrainOutcome> {
        let total = self.cfg.total_steps();
        if self.step > total {
            return config_err(format!("snapshot at step {} is past the budget of {total}", self.step));
        }
        let interval = self.cfg.eval_interval();
        let mut aborted = None;
        let mut attempt = |t: &mut Self| -> Result<bool> {
            if t.metrics.records.is_empty() {
                on_eval(&t.record_eval()?);
            }
            while t.step < total {
                t.train_step()?;
                if t.step % interval == 0 || t.step == total {
                    let rec = t.record_eval()?;
                    on_eval(&rec);
                    if let (Some(goal), Some(acc)) = (t.cfg.early_stop_acc, rec.valid_acc) {
                        if acc > goal {
                            return Ok(true);
                        }
                    }
                }
            }
            Ok(false)
        };
        match attempt(&mut self) {
            Ok(_) => {}
            Err(e) if is_numeric_failure(&e) => aborted = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        let last = match (&aborted, self.last_good.take()) {
            (Some(_), Some(good)) => good,
            _ => self.snapshot(),
        };
        Ok(TrainOutcome {
            last,
            steps: self.step,
            wall_s: self.wall(),
            metrics: self.metrics,
            aborted,
            best: self.best.map(|(_, ck)| ck),
        })
    }
}
