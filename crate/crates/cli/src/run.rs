//! `train` and `compare`.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use wglab_core::model::{GptModel, ParamCount};
use wglab_core::train::{same_performance_epoch, RunMetrics, Trainer};
use wglab_core::wavelet::WaveletMode;

use crate::spec::RunSpec;
use crate::{load_data, oracle_floor, write_json, CliError, CliResult};

pub const RESOLVED_FILE: &str = "resolved_config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

/// Choices the source material leaves open, recorded with every run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StandIns {
    pub optimizer: &'static str,
    pub batch_size: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub wavelet_mode: WaveletMode,
    pub seed: u64,
    pub final_nll: Option<f64>,
    pub best_nll: Option<f64>,
    pub final_acc: Option<f64>,
    /// Filled in by `compare`, against the first member.
    pub spe: Option<f64>,
    pub speedup_pct: Option<f64>,
    pub param_count: usize,
    pub extra_params: usize,
    /// `extra_params` over the parameter count without the kernels.
    pub extra_ratio: f64,
    pub params: ParamCount,
    pub oracle_floor_nll: Option<f64>,
    pub steps: usize,
    pub epochs_completed: f64,
    pub wall_s: f64,
    pub wall_s_per_epoch: Option<f64>,
    pub aborted: Option<String>,
    pub stand_ins: StandIns,
}

fn timing_csv(m: &RunMetrics) -> String {
    let mut out = String::from("step,epoch,wall_s\n");
    for r in &m.records {
        let _ = writeln!(out, "{},{},{:.3}", r.step, r.epoch, r.wall_s);
    }
    out
}

fn data_label(spec: &RunSpec) -> String {
    match &spec.data {
        crate::spec::DataSpec::Regime(_) => "regime-switching source in place of natural corpora".into(),
        crate::spec::DataSpec::Listops(_) => "generated ListOps-style expressions, depth and length reduced".into(),
        crate::spec::DataSpec::File(_) => "user-supplied files".into(),
    }
}

/// Trains one model and writes its artefacts into `spec.out_dir`. A NaN
/// abort still writes everything; the summary's `aborted` field says why.
pub fn train_run(spec: &RunSpec, progress: bool) -> CliResult<Summary> {
    std::fs::create_dir_all(&spec.out_dir)?;
    write_json(&spec.out_dir.join(RESOLVED_FILE), spec)?;
    let data = load_data(spec)?;
    data.task.check_against(&spec.model)?;
    let floor = oracle_floor(&data, spec)?;
    let model = GptModel::new(spec.model.clone(), spec.train.seed)?;
    let params = model.param_count();
    let trainer = Trainer::new(model, data.task, spec.train.clone())?;
    let tag = format!("{}/s{}", spec.model.wavelet_mode.as_str(), spec.train.seed);
    let outcome = trainer.run_with(|r| {
        if progress {
            let acc = r.valid_acc.map(|a| format!(" acc {a:.3}")).unwrap_or_default();
            eprintln!("[{tag}] step {:>6} epoch {:>6.2} train {:.4} valid {:.4}{acc} lr {:.2e}", r.step, r.epoch, r.train_nll, r.valid_nll, r.lr);
        }
    })?;
    let out = &spec.out_dir;
    std::fs::write(out.join(METRICS_FILE), outcome.metrics.to_csv(spec.train.log_wall_clock))?;
    std::fs::write(out.join(TIMING_FILE), timing_csv(&outcome.metrics))?;
    outcome.last.save(&out.join(LAST_CKPT))?;
    if let Some(best) = &outcome.best {
        best.save(&out.join(BEST_CKPT))?;
    }
    let epochs_completed = outcome.steps as f64 / spec.train.steps_per_epoch as f64;
    let summary = Summary {
        wavelet_mode: spec.model.wavelet_mode,
        seed: spec.train.seed,
        final_nll: outcome.metrics.final_nll(),
        best_nll: outcome.metrics.best_nll(),
        final_acc: outcome.metrics.last().and_then(|r| r.valid_acc),
        spe: None,
        speedup_pct: None,
        param_count: params.total,
        extra_params: params.extra(),
        extra_ratio: params.extra_ratio(),
        params,
        oracle_floor_nll: floor,
        steps: outcome.steps,
        epochs_completed,
        wall_s: outcome.wall_s,
        wall_s_per_epoch: (epochs_completed > 0.0).then(|| outcome.wall_s / epochs_completed),
        aborted: outcome.aborted.clone(),
        stand_ins: StandIns {
            optimizer: "Adam (beta 0.9/0.999, eps 1e-8); a stand-in, no optimiser is prescribed",
            batch_size: format!("{} sequences per step; a stand-in, no batch size is prescribed", spec.train.batch_size),
            data: data_label(spec),
        },
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub fn cmd_train(spec: &RunSpec) -> CliResult<Summary> {
    let s = train_run(spec, true)?;
    match &s.aborted {
        Some(why) => Err(CliError::Failed(format!("training aborted: {why}; last good state in {}", spec.out_dir.join(LAST_CKPT).display()))),
        None => Ok(s),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub mode: WaveletMode,
    pub seed: u64,
    pub dir: PathBuf,
    /// Baseline's final held-out NLL.
    pub baseline: Option<f64>,
    /// This member's final held-out NLL.
    pub proposed: Option<f64>,
    pub spe: Option<f64>,
    pub speedup_pct: Option<f64>,
    /// Wall-clock relative to the baseline.
    pub rel_hrs: Option<f64>,
    pub final_acc: Option<f64>,
    pub note: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub total_epochs: usize,
    pub oracle_floor_nll: Option<f64>,
    pub rows: Vec<CompareRow>,
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}"))
}

impl CompareReport {
    pub fn failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    /// Markdown table; column order Baseline, Proposed, SPE, SpeedUp, Rel hrs.
    pub fn table(&self) -> String {
        let classify = self.rows.iter().any(|r| r.final_acc.is_some());
        let mut out = String::from("| Mode | Seed | Baseline | Proposed | SPE | SpeedUp | Rel hrs |");
        out.push_str(if classify { " Acc | Note |\n" } else { " Note |\n" });
        out.push_str("|---|---|---|---|---|---|---|");
        out.push_str(if classify { "---|---|\n" } else { "---|\n" });
        for r in &self.rows {
            let spe = match (r.spe, r.proposed) {
                (Some(s), _) => format!("{s:.2}"),
                (None, Some(_)) => "never".into(),
                (None, None) => "-".into(),
            };
            let speedup = r.speedup_pct.map_or_else(|| "-".into(), |s| format!("{s:.0}%"));
            let _ = write!(
                out,
                "| {} | {} | {} | {} | {spe} | {speedup} | {} |",
                r.mode.as_str(),
                r.seed,
                fmt_opt(r.baseline, 4),
                fmt_opt(r.proposed, 4),
                fmt_opt(r.rel_hrs, 2)
            );
            if classify {
                let _ = write!(out, " {} |", fmt_opt(r.final_acc, 3));
            }
            let note = match &r.error {
                Some(e) => format!("failed: {e}"),
                None => r.note.clone(),
            };
            let _ = writeln!(out, " {note} |");
        }
        if let Some(f) = self.oracle_floor_nll {
            let _ = writeln!(out, "\nOracle NLL floor on the held-out windows: {f:.4} nats/token");
        }
        out
    }
}

/// Trains every `(mode, seed)` member on the same data, at most `jobs` at a
/// time, and compares each against the first member.
pub fn cmd_compare(spec: &RunSpec, modes: &[WaveletMode], seeds: &[u64], jobs: usize) -> CliResult<CompareReport> {
    if modes.len() < 2 {
        return Err(CliError::Config("compare needs at least two modes".into()));
    }
    let seeds: Vec<u64> = match seeds.len() {
        0 => vec![spec.train.seed; modes.len()],
        1 => vec![seeds[0]; modes.len()],
        n if n == modes.len() => seeds.to_vec(),
        n => return Err(CliError::Config(format!("{n} seeds for {} modes", modes.len()))),
    };
    std::fs::create_dir_all(&spec.out_dir)?;
    write_json(&spec.out_dir.join(RESOLVED_FILE), spec)?;
    let members: Vec<RunSpec> = modes
        .iter()
        .zip(&seeds)
        .enumerate()
        .map(|(i, (&mode, &seed))| {
            let mut m = spec.clone();
            m.model.wavelet_mode = mode;
            m.train.seed = seed;
            m.out_dir = spec.out_dir.join(format!("{i:02}_{}_s{seed}", mode.as_str()));
            m
        })
        .collect();
    // Validate everything up front so a bad member fails before any compute.
    for m in &members {
        m.model.validate()?;
    }
    let mut results: Vec<Option<CliResult<Summary>>> = (0..members.len()).map(|_| None).collect();
    let jobs = jobs.max(1);
    for (chunk_idx, chunk) in members.chunks(jobs).enumerate() {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|m| s.spawn(move || train_run(m, true))).collect();
            for (j, h) in handles.into_iter().enumerate() {
                let r = h.join().unwrap_or_else(|_| Err(CliError::Failed("member thread panicked".into())));
                results[chunk_idx * jobs + j] = Some(r);
            }
        });
    }
    let results: Vec<CliResult<Summary>> = results.into_iter().map(|r| r.expect("every member ran")).collect();
    let curves: Vec<Option<RunMetrics>> = members
        .iter()
        .zip(&results)
        .map(|(m, r)| {
            let ok = matches!(r, Ok(s) if s.aborted.is_none());
            ok.then(|| std::fs::read_to_string(m.out_dir.join(METRICS_FILE)).ok())
                .flatten()
                .and_then(|t| RunMetrics::from_csv(&t).ok())
        })
        .collect();
    let total_epochs = spec.train.epochs;
    let base_wall = results[0].as_ref().ok().map(|s| s.wall_s);
    let mut rows = Vec::new();
    let mut floor = None;
    for (i, (m, r)) in members.iter().zip(&results).enumerate() {
        let mut row = CompareRow {
            mode: m.model.wavelet_mode,
            seed: m.train.seed,
            dir: m.out_dir.clone(),
            baseline: None,
            proposed: None,
            spe: None,
            speedup_pct: None,
            rel_hrs: None,
            final_acc: None,
            note: match (i, m.model.wavelet_mode) {
                (0, _) => "baseline".into(),
                (_, WaveletMode::Ema) => "ablation (IIR smoothing)".into(),
                _ => String::new(),
            },
            error: None,
        };
        match r {
            Err(e) => row.error = Some(e.to_string()),
            Ok(s) => {
                floor = floor.or(s.oracle_floor_nll);
                row.proposed = s.final_nll;
                row.final_acc = s.final_acc;
                row.rel_hrs = base_wall.filter(|&b| b > 0.0).map(|b| s.wall_s / b);
                if let Some(why) = &s.aborted {
                    row.error = Some(format!("aborted: {why}"));
                }
            }
        }
        if let (Some(base), Some(cur)) = (&curves[0], &curves[i]) {
            let rep = same_performance_epoch(&base.valid_curve(), &cur.valid_curve(), total_epochs as f64, true)?;
            row.baseline = Some(rep.threshold);
            row.spe = rep.spe;
            row.speedup_pct = rep.speedup_pct;
            let path = m.out_dir.join(SUMMARY_FILE);
            if let Ok(Ok(mut s)) = std::fs::read_to_string(&path).map(|t| serde_json::from_str::<serde_json::Value>(&t)) {
                s["spe"] = serde_json::json!(rep.spe);
                s["speedup_pct"] = serde_json::json!(rep.speedup_pct);
                write_json(&path, &s)?;
            }
        }
        rows.push(row);
    }
    let report = CompareReport { total_epochs, oracle_floor_nll: floor, rows };
    write_json(&spec.out_dir.join("compare.json"), &report)?;
    std::fs::write(spec.out_dir.join("compare.md"), report.table())?;
    Ok(report)
}
