//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Criteria 7 and 8 train real models and dominate the runtime.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wglab_cli::run::{cmd_compare, train_run, CompareReport, METRICS_FILE};
use wglab_cli::spec::{DataSpec, ListOpsData, Preset, RegimeData, RunSpec};
use wglab_core::data::{evaluate_listops, evaluate_listops_stack, ListOpsGenerator, ListOpsParams};
use wglab_core::model::{GptModel, ModelConfig, TokenBatch};
use wglab_core::train::{same_performance_epoch, TrainConfig};
use wglab_core::verify::{gradient_cases, model_causality, run_gradient_cases, GRAD_TOLERANCE};
use wglab_core::wavelet::{causal_avg, ema_smooth, haar_analysis, reconstruct_block_signal, KernelMap, WaveletMode};

const MODES: [WaveletMode; 4] = [WaveletMode::Off, WaveletMode::Fixed, WaveletMode::Learnable, WaveletMode::Ema];

// Criterion tolerances and budgets.
const CAUSALITY_MAX_S: f64 = 60.0;
const GRADIENT_INSTANCES: usize = 20;
const GRADIENT_MAX_S: f64 = 300.0;
const BRIDGE_SIGNALS: usize = 100;
const BRIDGE_TOL: f64 = 1e-12;
const EQUIVALENCE_BATCHES: usize = 10;
// Seed 0 was used to pick the budget; the check runs on unseen seeds.
const TREND_SEEDS: [u64; 3] = [1, 2, 3];
const TREND_EPOCHS: usize = 5;
const TREND_STEPS_PER_EPOCH: usize = 300;
const TREND_MAX_S: f64 = 2.0 * 3600.0;
const LISTOPS_MAX_STEPS: usize = 10_000;
const LISTOPS_TARGET_ACC: f64 = 0.30;
const LISTOPS_ORACLE_SAMPLES: usize = 10_000;
const QUOTED_EXTRA_PARAMS: usize = 20_000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn c1_causality() -> Outcome {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for mode in MODES {
        match model_causality(mode, 0) {
            Ok((pass, _)) => {
                ok &= pass;
                parts.push(format!("{}={}", mode.as_str(), if pass { "exact" } else { "VIOLATED" }));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{}: {e}", mode.as_str()));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < CAUSALITY_MAX_S, format!("L=16 E=8 2 layers, {} ({secs:.1}s, limit {CAUSALITY_MAX_S}s)", parts.join(" ")))
}

fn c2_gradients() -> Outcome {
    let t = Instant::now();
    let results = run_gradient_cases(&gradient_cases(), GRADIENT_INSTANCES, 0);
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let worst = results
        .iter()
        .filter_map(|r| r.detail.split_whitespace().nth(3).and_then(|v| v.parse::<f64>().ok()))
        .fold(0.0, f64::max);
    outcome(
        failed.is_empty() && secs < GRADIENT_MAX_S,
        format!(
            "{} ops x {GRADIENT_INSTANCES} instances, worst rel err {worst:.1e} (tol {GRADIENT_TOLERANCE:.0e}), {secs:.1}s{}",
            results.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(" ")) }
        ),
    )
}
const GRADIENT_TOLERANCE: f64 = GRAD_TOLERANCE;

fn c3_bridge() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..BRIDGE_SIGNALS {
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..10.0)).collect();
        let pyr = haar_analysis(&x, 6).expect("L=64 has six levels");
        for j in 1..=6u32 {
            let k = 1usize << j;
            let avg = causal_avg(&x, k).expect("k <= L");
            let block = reconstruct_block_signal(&pyr, j as usize).expect("power of two");
            for t in (k - 1..64).step_by(k) {
                // Direct block mean as a second, independent reference.
                let mean = x[t + 1 - k..=t].iter().sum::<f64>() / k as f64;
                worst = worst.max((avg[t] - block[t]).abs()).max((avg[t] - mean).abs());
                checked += 1;
            }
        }
    }
    outcome(worst <= BRIDGE_TOL, format!("{BRIDGE_SIGNALS} signals, {checked} block ends, max |d| {worst:.1e} (tol {BRIDGE_TOL:.0e})"))
}

fn c4_param_counts() -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, cfg) in [("reference", ModelConfig::reference()), ("desk", ModelConfig::desk())] {
        let off = GptModel::new(cfg.clone(), 0).expect("valid").param_count();
        let fixed = GptModel::new(cfg.clone().with_mode(WaveletMode::Fixed), 0).expect("valid").param_count();
        ok &= off.total == fixed.total && fixed.extra() == 0;
        let map = KernelMap::new(cfg.embed_dim, cfg.context_len, cfg.kernel_map_mode).expect("valid map");
        let sigma: usize = (cfg.embed_dim / 2..cfg.embed_dim).map(|i| map.kernel_size(i).expect("in range")).sum();
        let mut flags = Vec::new();
        for share in [false, true] {
            let c = ModelConfig { share_across_layers: share, ..cfg.clone().with_mode(WaveletMode::Learnable) };
            let banks = if share { 1 } else { cfg.n_layers - 1 };
            let count = GptModel::new(c, 0).expect("valid").param_count();
            ok &= count.extra() == sigma * banks && count.total == off.total + sigma * banks;
            flags.push(format!(
                "{}: +{} = {banks}x{sigma}, ratio {:.3}%",
                if share { "shared" } else { "per-gap" },
                count.extra(),
                100.0 * count.extra_ratio()
            ));
        }
        lines.push(format!("{name}: off {} == fixed {}; {}", off.total, fixed.total, flags.join("; ")));
    }
    let shared_ref = {
        let c = ModelConfig { share_across_layers: true, ..ModelConfig::reference().with_mode(WaveletMode::Learnable) };
        GptModel::new(c, 0).expect("valid").param_count().extra()
    };
    lines.push(format!(
        "quoted ~{QUOTED_EXTRA_PARAMS} extra / 0.2%: shared bank gives {shared_ref} ({:+.1}% vs quote)",
        100.0 * (shared_ref as f64 - QUOTED_EXTRA_PARAMS as f64) / QUOTED_EXTRA_PARAMS as f64
    ));
    outcome(ok, lines.join(" | "))
}

fn c5_learnable_equals_fixed() -> Outcome {
    let cfg = ModelConfig::desk();
    let fixed = GptModel::new(cfg.clone().with_mode(WaveletMode::Fixed), 5).expect("valid");
    let learn = GptModel::new(cfg.clone().with_mode(WaveletMode::Learnable), 5).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut differing = 0usize;
    let mut total = 0usize;
    for _ in 0..EQUIVALENCE_BATCHES {
        let ids: Vec<usize> = (0..4 * cfg.context_len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let batch = TokenBatch::new(4, cfg.context_len, ids).expect("shape");
        let a = fixed.forward_lm(&batch).expect("forward");
        let b = learn.forward_lm(&batch).expect("forward");
        differing += a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        total += a.len();
    }
    outcome(differing == 0, format!("desk config, {EQUIVALENCE_BATCHES} batches, {differing} of {total} logits differ"))
}

fn c6_fir_iir() -> Outcome {
    let l = 64;
    let mut impulse = vec![0.0; l];
    impulse[0] = 1.0;
    let mut fir_ok = true;
    for k in [1, 2, 3, 8, 17, 32, 64] {
        let y = causal_avg(&impulse, k).expect("k <= L");
        let support = y.iter().filter(|&&v| v != 0.0).count();
        let last = y.iter().rposition(|&v| v != 0.0).expect("nonzero");
        fir_ok &= support == k && last == k - 1;
    }
    let ema = ema_smooth(&impulse, 0.5).expect("alpha in range");
    let iir_ok = ema.iter().all(|&v| v != 0.0);
    outcome(
        fir_ok && iir_ok,
        format!("moving average support == K for K in 1..64: {fir_ok}; EMA(0.5) nonzero through lag {} (value {:.2e}): {iir_ok}", l - 1, ema[l - 1]),
    )
}

fn regime_spec(out: &Path, seed: u64) -> RunSpec {
    RunSpec {
        preset: Preset::Desk,
        model: ModelConfig::desk(),
        train: TrainConfig { epochs: TREND_EPOCHS, steps_per_epoch: TREND_STEPS_PER_EPOCH, seed, ..TrainConfig::default() },
        data: DataSpec::Regime(RegimeData { seed, ..RegimeData::default() }),
        out_dir: out.join(format!("regime_s{seed}")),
    }
}

fn c7_trend(out: &Path) -> Outcome {
    let t = Instant::now();
    let mut reports: Vec<CompareReport> = Vec::new();
    for seed in TREND_SEEDS {
        match cmd_compare(&regime_spec(out, seed), &MODES, &[seed], 1) {
            Ok(r) => {
                println!("  seed {seed}\n{}", r.table());
                reports.push(r);
            }
            Err(e) => return outcome(false, format!("seed {seed} failed: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let mut above_floor = true;
    let mut worst_margin = f64::INFINITY;
    let (mut fixed_wins, mut learn_wins, mut ema_not_better) = (0, 0, 0);
    for r in &reports {
        let floor = r.oracle_floor_nll.expect("regime data has a floor");
        for row in &r.rows {
            if row.error.is_some() {
                return outcome(false, format!("{} seed {} failed", row.mode.as_str(), row.seed));
            }
            let text = std::fs::read_to_string(row.dir.join(METRICS_FILE)).expect("metrics written");
            let m = wglab_core::train::RunMetrics::from_csv(&text).expect("metrics parse");
            for rec in &m.records {
                worst_margin = worst_margin.min(rec.valid_nll - floor);
                above_floor &= rec.valid_nll >= floor;
            }
        }
        let fin = |mode: WaveletMode| r.rows.iter().find(|x| x.mode == mode).and_then(|x| x.proposed).expect("final nll");
        let off = fin(WaveletMode::Off);
        fixed_wins += usize::from(fin(WaveletMode::Fixed) <= off);
        learn_wins += usize::from(fin(WaveletMode::Learnable) <= off);
        ema_not_better += usize::from(fin(WaveletMode::Ema) >= fin(WaveletMode::Fixed));
    }
    let n = TREND_SEEDS.len();
    let need = 2;
    let (a, b, c) = (above_floor, fixed_wins >= need && learn_wins >= need, ema_not_better >= need);
    outcome(
        a && b && c && secs < TREND_MAX_S,
        format!(
            "{} steps/run; (a) all evals >= oracle floor: {a} (closest {worst_margin:+.4}); (b) fixed<=off {fixed_wins}/{n}, learnable<=off {learn_wins}/{n}: {b}; (c) ema>=fixed {ema_not_better}/{n}: {c}; {:.0} min (limit {:.0})",
            TREND_EPOCHS * TREND_STEPS_PER_EPOCH,
            secs / 60.0,
            TREND_MAX_S / 60.0
        ),
    )
}

fn c8_listops(out: &Path) -> Outcome {
    // Oracle agreement first: it is cheap and independent of training.
    let mut gen = ListOpsGenerator::new(ListOpsParams::default(), 8).expect("valid params");
    let mut agree = 0;
    for s in gen.samples(LISTOPS_ORACLE_SAMPLES) {
        let a = evaluate_listops(&s.tokens).map(usize::from);
        let b = evaluate_listops_stack(&s.tokens).map(usize::from);
        agree += usize::from(matches!((a, b), (Ok(x), Ok(y)) if x == s.label && y == s.label));
    }
    let oracle_ok = agree == LISTOPS_ORACLE_SAMPLES;
    let steps_per_epoch = 500;
    let spec = RunSpec {
        preset: Preset::Listops,
        model: ModelConfig::listops(ListOpsParams::default().max_len),
        train: TrainConfig {
            epochs: LISTOPS_MAX_STEPS / steps_per_epoch,
            steps_per_epoch,
            eval_windows: 500,
            early_stop_acc: Some(LISTOPS_TARGET_ACC),
            ..TrainConfig::default()
        },
        data: DataSpec::Listops(ListOpsData { n_valid: 500, ..ListOpsData::default() }),
        out_dir: out.join("listops"),
    };
    let report = match cmd_compare(&spec, &[WaveletMode::Off, WaveletMode::Fixed], &[0], 1) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("oracle {agree}/{LISTOPS_ORACLE_SAMPLES}; training failed: {e}")),
    };
    println!("{}", report.table());
    let best = report.rows.iter().filter_map(|r| r.final_acc).fold(0.0, f64::max);
    let steps: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            let s = std::fs::read_to_string(r.dir.join("summary.json")).ok();
            let steps = s.and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok()).and_then(|v| v["steps"].as_u64());
            format!("{}: acc {} after {} steps", r.mode.as_str(), r.final_acc.map_or("-".into(), |a| format!("{a:.3}")), steps.map_or("-".into(), |s| s.to_string()))
        })
        .collect();
    outcome(
        oracle_ok && best > LISTOPS_TARGET_ACC,
        format!(
            "evaluators agree on {agree}/{LISTOPS_ORACLE_SAMPLES}; best of off/fixed {best:.3} (need > {LISTOPS_TARGET_ACC}, chance 0.1) within {LISTOPS_MAX_STEPS} steps; {}",
            steps.join(", ")
        ),
    )
}

fn c9_spe() -> Outcome {
    // Baseline ends at 0.93 after 25 epochs; the proposed curve passes 0.93
    // halfway between its evaluations at epochs 14 and 15.
    let baseline: Vec<(f64, f64)> = (0..=25).map(|e| (f64::from(e), 1.6 - 0.67 * f64::from(e) / 25.0)).collect();
    let proposed: Vec<(f64, f64)> = (0..=25).map(|e| (f64::from(e), if e <= 14 { 1.5 - 0.56 * f64::from(e) / 14.0 } else { 0.92 - 0.002 * f64::from(e - 15) })).collect();
    let r = same_performance_epoch(&baseline, &proposed, 25.0, true).expect("valid curves");
    let spe = r.spe.unwrap_or(f64::NAN);
    let pct = r.speedup_pct.unwrap_or(f64::NAN);
    // Second fixture: exact hit at an evaluation.
    let half = same_performance_epoch(&[(0.0, 2.0), (10.0, 1.0)], &[(0.0, 2.0), (5.0, 1.0), (10.0, 0.8)], 10.0, true).expect("valid");
    let ok = (r.threshold - 0.93).abs() < 1e-12 && (spe - 14.5).abs() < 1e-9 && pct.round() == 42.0 && half.spe == Some(5.0) && half.speedup_pct == Some(50.0);
    outcome(ok, format!("threshold {:.2}, SPE {spe:.3} of 25 -> {pct:.1}% (rounds to 42%); exact-hit fixture SPE {:?} -> {:?}%", r.threshold, half.spe, half.speedup_pct))
}

fn c10_determinism(out: &Path) -> Outcome {
    let spec = |dir: &str| RunSpec {
        preset: Preset::Desk,
        model: ModelConfig::desk().with_mode(WaveletMode::Learnable),
        train: TrainConfig { epochs: 2, steps_per_epoch: 20, eval_every: 10, eval_windows: 16, seed: 3, ..TrainConfig::default() },
        data: DataSpec::Regime(RegimeData { train_len: 20_000, valid_len: 4_000, ..RegimeData::default() }),
        out_dir: out.join(dir),
    };
    let a = spec("det_a");
    let b = spec("det_b");
    for s in [&a, &b] {
        if let Err(e) = train_run(s, false) {
            return outcome(false, format!("training failed: {e}"));
        }
    }
    let read = |s: &RunSpec| std::fs::read(s.out_dir.join(METRICS_FILE)).expect("metrics written");
    let (x, y) = (read(&a), read(&b));
    outcome(!x.is_empty() && x == y, format!("two runs, metrics.csv {} bytes each, identical: {}", x.len(), x == y))
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let out = dir.path();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome + '_>)> = vec![
        ("1 causality", Box::new(c1_causality)),
        ("2 gradients", Box::new(c2_gradients)),
        ("3 haar bridge", Box::new(c3_bridge)),
        ("4 zero extra parameters", Box::new(c4_param_counts)),
        ("5 learnable at init == fixed", Box::new(c5_learnable_equals_fixed)),
        ("6 fir vs iir", Box::new(c6_fir_iir)),
        ("7 regime trend", Box::new(|| c7_trend(out))),
        ("8 listops-mini", Box::new(|| c8_listops(out))),
        ("9 spe arithmetic", Box::new(c9_spe)),
        ("10 determinism", Box::new(|| c10_determinism(out))),
    ];
    // ACCEPTANCE_ONLY=1,3,9 runs a subset while iterating; unset runs all.
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let mut lines = Vec::new();
    for (name, run) in criteria {
        let id = name.split(' ').next().unwrap_or_default();
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            println!("[SKIP] {name}");
            continue;
        }
        let t = Instant::now();
        let o = run();
        let line = format!("[{}] {name}: {} [{:.1}s]", if o.passed { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        println!("{line}");
        lines.push((o.passed, line));
    }
    println!("\nacceptance summary");
    for (_, l) in &lines {
        println!("{l}");
    }
    let failed = lines.iter().filter(|(p, _)| !p).count();
    println!("{} criteria, {} passed, {failed} failed", lines.len(), lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
