use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, Result};

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Fractional epoch, `step / steps_per_epoch`.
    pub epoch: f64,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_nll: f64,
    pub valid_nll: f64,
    /// Held-out accuracy, classification only.
    pub valid_acc: Option<f64>,
    pub lr: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<EvalRecord>,
}

pub const CSV_HEADER: &str = "step,epoch,split,metric,value,lr,wall_s";
const FIELDS: usize = 7;

impl RunMetrics {
    pub fn push(&mut self, r: EvalRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.step <= last.step {
                return data_err(format!("evaluation step {} does not follow {}", r.step, last.step));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.last().map(|r| r.valid_nll)
    }

    pub fn best_nll(&self) -> Option<f64> {
        self.records.iter().map(|r| r.valid_nll).reduce(f64::min)
    }

    pub fn valid_curve(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.epoch, r.valid_nll)).collect()
    }

    pub fn accuracy_curve(&self) -> Vec<(f64, f64)> {
        self.records.iter().filter_map(|r| r.valid_acc.map(|a| (r.epoch, a))).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| {
            r.train_nll.is_finite() && r.valid_nll.is_finite() && r.lr.is_finite() && r.valid_acc.is_none_or(f64::is_finite)
        })
    }

    /// Long-format CSV, one row per (evaluation, split, metric).
    pub fn to_csv(&self, with_wall_clock: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let wall = if with_wall_clock { format!("{:.3}", r.wall_s) } else { String::new() };
            let mut row = |split: &str, metric: &str, value: f64| {
                let _ = writeln!(out, "{},{},{split},{metric},{},{},{wall}", r.step, r.epoch, value, r.lr);
            };
            row("train", "nll", r.train_nll);
            row("valid", "nll", r.valid_nll);
            if let Some(a) = r.valid_acc {
                row("valid", "acc", a);
            }
        }
        out
    }

    /// Parses the CSV written by [`RunMetrics::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return data_err("metrics CSV header mismatch");
        }
        let mut metrics = RunMetrics::default();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != FIELDS {
                return data_err(format!("metrics CSV line {}: expected {FIELDS} fields", n + 2));
            }
            let num = |s: &str| s.parse::<f64>().or_else(|_| data_err(format!("metrics CSV line {}: bad number {s:?}", n + 2)));
            let step: usize = f[0].parse().or_else(|_| data_err(format!("metrics CSV line {}: bad step", n + 2)))?;
            let value = num(f[4])?;
            if metrics.records.last().is_none_or(|r| r.step != step) {
                metrics.push(EvalRecord {
                    step,
                    epoch: num(f[1])?,
                    train_nll: f64::NAN,
                    valid_nll: f64::NAN,
                    valid_acc: None,
                    lr: num(f[5])?,
                    wall_s: if f[6].is_empty() { 0.0 } else { num(f[6])? },
                })?;
            }
            let r = metrics.records.last_mut().expect("pushed above");
            match (f[2], f[3]) {
                ("train", "nll") => r.train_nll = value,
                ("valid", "nll") => r.valid_nll = value,
                ("valid", "acc") => r.valid_acc = Some(value),
                (s, m) => return data_err(format!("metrics CSV line {}: unknown series {s}/{m}", n + 2)),
            }
        }
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, acc: Option<f64>) -> EvalRecord {
        EvalRecord { step, epoch: step as f64 / 10.0, train_nll: 2.5, valid_nll: 2.0 / 3.0, valid_acc: acc, lr: 3e-4, wall_s: 1.5 }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut m = RunMetrics::default();
        m.push(rec(0, None)).unwrap();
        m.push(rec(10, Some(0.25))).unwrap();
        let back = RunMetrics::from_csv(&m.to_csv(true)).unwrap();
        assert_eq!(back, m);
        let blank = m.to_csv(false);
        assert!(blank.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn steps_must_increase() {
        let mut m = RunMetrics::default();
        m.push(rec(5, None)).unwrap();
        assert!(m.push(rec(5, None)).is_err());
    }
}
