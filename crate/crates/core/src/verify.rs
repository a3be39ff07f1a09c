//! Self-check suite: gradient checks against finite differences, exact
//! causality probes and oracle equivalences. Every check is independent
//! and reports a named pass/fail line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{check_gradients, random_param, DEFAULT_STEP};
use crate::autodiff::{Graph, Var};
use crate::data::listops::{evaluate_listops, evaluate_listops_stack, ListOpsGenerator, ListOpsParams};
use crate::data::RegimeSource;
use crate::error::Result;
use crate::model::{GptModel, ModelConfig, TokenBatch};
use crate::tensor::Tensor;
use crate::train::same_performance_epoch;
use crate::wavelet::{
    apply_multiscale, causal_avg, ema_smooth, haar_analysis, reconstruct_block_signal, EmaConfig, KernelMap,
    KernelMapMode, LearnableKernelBank, WaveletMode,
};

/// Gradient checks must agree with central differences to this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("[{}] {} ({})\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        let failed = self.failures().count();
        out.push_str(&format!("{} checks, {} passed, {} failed\n", self.checks.len(), self.checks.len() - failed, failed));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Random instances per gradient check.
    pub instances: usize,
    pub seed: u64,
    /// Gradient cases whose backward rule is deliberately broken.
    pub corrupt: Vec<String>,
    /// Samples compared between the two ListOps evaluators.
    pub listops_samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { instances: 20, seed: 0, corrupt: Vec::new(), listops_samples: 2000 }
    }
}

type Forward = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
type Inputs = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;

/// One differentiable operation under test.
pub struct GradCase {
    pub op: String,
    inputs: Inputs,
    forward: Forward,
}

impl GradCase {
    pub fn new(
        op: &str,
        inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
        forward: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self { op: op.to_string(), inputs: Box::new(inputs), forward: Box::new(forward) }
    }

    /// Same forward values, but the gradient flowing back through the op's
    /// output is doubled: a stand-in for a wrong backward rule.
    pub fn corrupted(self) -> Self {
        let GradCase { op, inputs, forward } = self;
        let name = op.clone();
        let forward = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let out = forward(g, v)?;
            let value = g.value(out).to_vec();
            let shape = g.shape(out).to_vec();
            g.custom(&name, &[out], shape, value, Box::new(|grad, _| vec![Some(grad.iter().map(|x| 2.0 * x).collect())]))
        };
        GradCase { op, inputs, forward: Box::new(forward) }
    }

    /// Worst relative error over `instances` random draws.
    pub fn run(&self, instances: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            let inputs = (self.inputs)(&mut rng);
            let report = check_gradients(&inputs, &self.forward, DEFAULT_STEP, seed.wrapping_add(i as u64))?;
            if report.max_rel_err.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(report.max_rel_err);
        }
        Ok(worst)
    }
}

fn p(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    random_param(shape.to_vec(), -1.0, 1.0, rng)
}

/// Values bounded away from zero, for piecewise-linear ops.
fn p_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = p(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.05 + v.abs()));
    t
}

fn test_map(e: usize, l: usize) -> KernelMap {
    KernelMap::new(e, l, KernelMapMode::LinearSize).expect("valid test map")
}

/// Every differentiable operation with a random-instance generator.
pub fn gradient_cases() -> Vec<GradCase> {
    let mut cases = vec![
        GradCase::new("add", |r| vec![p(&[3, 4], r), p(&[3, 4], r)], |g, v| g.add(v[0], v[1])),
        GradCase::new("mul", |r| vec![p(&[3, 4], r), p(&[3, 4], r)], |g, v| g.mul(v[0], v[1])),
        GradCase::new("scale", |r| vec![p(&[5], r)], |g, v| g.scale(v[0], -1.7)),
        GradCase::new("sum", |r| vec![p(&[2, 3], r)], |g, v| g.sum(v[0])),
        GradCase::new("matmul", |r| vec![p(&[4, 5], r), p(&[5, 3], r)], |g, v| g.matmul(v[0], v[1])),
        GradCase::new("linear", |r| vec![p(&[4, 5], r), p(&[5, 3], r), p(&[3], r)], |g, v| g.linear(v[0], v[1], v[2])),
        GradCase::new("embedding", |r| vec![p(&[6, 3], r)], |g, v| g.embedding(v[0], &[2, 0, 2, 5])),
        GradCase::new("select_rows", |r| vec![p(&[5, 3], r)], |g, v| g.select_rows(v[0], &[4, 1, 4])),
        GradCase::new("relu", |r| vec![p_away_from_zero(&[3, 5], r)], |g, v| g.relu(v[0])),
        GradCase::new("gelu", |r| vec![random_param(vec![3, 5], -3.0, 3.0, r)], |g, v| g.gelu(v[0])),
        GradCase::new("layer_norm", |r| vec![p(&[3, 6], r), p(&[6], r), p(&[6], r)], |g, v| g.layer_norm(v[0], v[1], v[2])),
        GradCase::new("causal_attention", |r| vec![p(&[6, 4], r), p(&[6, 4], r), p(&[6, 4], r)], |g, v| {
            g.softmax_causal_attention(v[0], v[1], v[2], 2)
        }),
        GradCase::new("causal_attention_batched", |r| vec![p(&[8, 4], r), p(&[8, 4], r), p(&[8, 4], r)], |g, v| {
            g.causal_attention(v[0], v[1], v[2], 2, 4)
        }),
        GradCase::new(
            "causal_conv1d_varlen",
            |r| {
                let k = r.random_range(1..=6);
                vec![p(&[9], r), p(&[k], r)]
            },
            |g, v| g.causal_conv1d_varlen(v[0], v[1]),
        ),
        GradCase::new(
            "cross_entropy",
            |r| vec![random_param(vec![5, 8], -3.0, 3.0, r)],
            |g, v| g.cross_entropy_logits(v[0], &[0, 7, 3, 3, 5]),
        ),
    ];
    cases.push(GradCase::new("multiscale_fixed", |r| vec![p(&[12, 8], r)], |g, v| {
        apply_multiscale(g, v[0], 6, &test_map(8, 6), WaveletMode::Fixed, None, None)
    }));
    cases.push(GradCase::new(
        "multiscale_learnable",
        |r| {
            let map = test_map(8, 6);
            let mut inputs = vec![p(&[12, 8], r)];
            inputs.extend(map.sizes().into_iter().map(|k| p(&[k], r)));
            inputs
        },
        |g, v| apply_multiscale(g, v[0], 6, &test_map(8, 6), WaveletMode::Learnable, Some(&v[1..]), None),
    ));
    cases.push(GradCase::new("multiscale_ema", |r| vec![p(&[12, 8], r)], |g, v| {
        let map = test_map(8, 6);
        apply_multiscale(g, v[0], 6, &map, WaveletMode::Ema, None, Some(&EmaConfig::linear(&map)))
    }));
    cases
}

fn check(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name: name.to_string(), passed, detail },
        Err(e) => CheckResult { name: name.to_string(), passed: false, detail: format!("error: {e}") },
    }
}

/// Runs gradient checks for the given cases.
pub fn run_gradient_cases(cases: &[GradCase], instances: usize, seed: u64) -> Vec<CheckResult> {
    cases
        .iter()
        .map(|c| {
            check(&format!("gradient/{}", c.op), || {
                let worst = c.run(instances, seed)?;
                Ok((worst <= GRAD_TOLERANCE, format!("max rel err {worst:.2e} over {instances} instances")))
            })
        })
        .collect()
}

fn graph_eval(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).to_vec())
}

/// Perturbs row `t` of input `which` (rows of width `width`) and returns
/// whether every output row `< t` stayed bit-identical.
fn rows_before_unchanged(
    inputs: &[Tensor],
    which: usize,
    width: usize,
    out_width: usize,
    t: usize,
    f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<bool> {
    let base = graph_eval(inputs, f)?;
    let mut probe = inputs.to_vec();
    probe[which].data_mut()[t * width..(t + 1) * width].iter_mut().for_each(|v| *v += 0.75);
    let moved = graph_eval(&probe, f)?;
    Ok(base[..t * out_width].iter().zip(&moved[..t * out_width]).all(|(a, b)| a.to_bits() == b.to_bits()))
}

fn attention_causality(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = (0..3).map(|_| p(&[8, 4], &mut rng)).collect();
    let f = |g: &mut Graph, v: &[Var]| g.softmax_causal_attention(v[0], v[1], v[2], 2);
    let mut ok = true;
    for which in 0..3 {
        for t in 0..8 {
            ok &= rows_before_unchanged(&inputs, which, 4, 4, t, &f)?;
        }
    }
    Ok((ok, "q/k/v perturbed at every position, L=8, d=4".into()))
}

fn conv_causality(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![p(&[16], &mut rng), p(&[5], &mut rng)];
    let f = |g: &mut Graph, v: &[Var]| g.causal_conv1d_varlen(v[0], v[1]);
    let mut ok = true;
    for t in 0..16 {
        ok &= rows_before_unchanged(&inputs, 0, 1, 1, t, &f)?;
    }
    Ok((ok, "L=16, K=5".into()))
}

fn multiscale_causality(mode: WaveletMode, seed: u64) -> Result<(bool, String)> {
    let (e, l) = (8, 16);
    let map = test_map(e, l);
    let ema = EmaConfig::linear(&map);
    let bank = LearnableKernelBank::new(&map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![p(&[l, e], &mut rng)];
    // Random kernels so the learnable check does not reduce to the fixed one.
    inputs.extend(bank.kernels().iter().map(|k| p(k.shape(), &mut rng)));
    let f = move |g: &mut Graph, v: &[Var]| {
        let (b, m) = match mode {
            WaveletMode::Learnable => (Some(&v[1..]), None),
            WaveletMode::Ema => (None, Some(&ema)),
            _ => (None, None),
        };
        apply_multiscale(g, v[0], l, &map, mode, b, m)
    };
    let mut ok = true;
    for t in 0..l {
        ok &= rows_before_unchanged(&inputs, 0, e, e, t, &f)?;
    }
    let base = graph_eval(&inputs, &f)?;
    let passthrough = (0..l).all(|t| (0..e / 2).all(|c| base[t * e + c].to_bits() == inputs[0].data()[t * e + c].to_bits()));
    Ok((ok && passthrough, format!("L={l}, E={e}; causal={ok}, lower half untouched={passthrough}")))
}

fn fan_in_accumulates() -> Result<(bool, String)> {
    let x = Tensor::from_vec(vec![1.5, -2.0]).into_param();
    let mut g = Graph::new();
    let v = g.leaf(&x);
    let sq = g.mul(v, v)?;
    let both = g.add(sq, v)?;
    let s = g.sum(both)?;
    let grads = g.backward(s)?;
    let got = grads.get(v).unwrap_or(&[]).to_vec();
    let want = vec![2.0 * 1.5 + 1.0, 2.0 * -2.0 + 1.0];
    Ok((got == want, format!("d/dx Σ(x²+x) = {got:?}")))
}

fn op_examples() -> Result<(bool, String)> {
    let mut g = Graph::new();
    let eye = g.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])?;
    let m = g.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])?;
    let im = g.matmul(eye, m)?;
    let a = g.constant(vec![1, 2], vec![1.0, 2.0])?;
    let b = g.constant(vec![2, 1], vec![3.0, 4.0])?;
    let ab = g.matmul(a, b)?;
    let x = g.constant(vec![1, 2], vec![1.0, -1.0])?;
    let one = g.constant(vec![2], vec![1.0, 1.0])?;
    let zero = g.constant(vec![2], vec![0.0, 0.0])?;
    let ln = g.layer_norm(x, one, zero)?;
    let cx = g.constant(vec![4], vec![1.0, 2.0, 3.0, 4.0])?;
    let ck = g.constant(vec![2], vec![0.5, 0.5])?;
    let conv = g.causal_conv1d_varlen(cx, ck)?;
    let uniform = g.constant(vec![1, 27], vec![0.0; 27])?;
    let ce = g.cross_entropy_logits(uniform, &[4])?;
    let ln_close = g.value(ln).iter().zip([1.0, -1.0]).all(|(a, b)| (a - b).abs() < 1e-4);
    let ok = g.value(im) == [1.0, 2.0, 3.0, 4.0]
        && g.value(ab) == [11.0]
        && ln_close
        && g.value(conv) == [0.5, 1.5, 2.5, 3.5]
        && (g.value(ce)[0] - 27f64.ln()).abs() < 1e-12;
    Ok((ok, "identity/1×1 matmul, normalised row, hand convolution, uniform CE = ln 27".into()))
}

fn attention_examples(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q1 = p(&[1, 4], &mut rng);
    let v1 = p(&[1, 4], &mut rng);
    let single = graph_eval(&[q1.clone(), q1, v1.clone()], |g, v| g.softmax_causal_attention(v[0], v[1], v[2], 2))?;
    let zeros = Tensor::zeros(vec![5, 4]);
    let vals = p(&[5, 4], &mut rng);
    let uni = graph_eval(&[zeros.clone(), zeros, vals.clone()], |g, v| g.softmax_causal_attention(v[0], v[1], v[2], 2))?;
    let mut prefix_ok = true;
    for t in 0..5 {
        for c in 0..4 {
            let mean = (0..=t).map(|s| vals.data()[s * 4 + c]).sum::<f64>() / (t + 1) as f64;
            prefix_ok &= (uni[t * 4 + c] - mean).abs() < 1e-12;
        }
    }
    Ok((single == v1.data() && prefix_ok, "L=1 returns v; q=k=0 averages the prefix".into()))
}

fn cross_entropy_oracle(seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random_param(vec![5, 8], -4.0, 4.0, &mut rng);
    let targets = [1, 0, 7, 4, 4];
    let got = graph_eval(&[logits.clone()], |g, v| g.cross_entropy_logits(v[0], &targets))?[0];
    let mut brute = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = &logits.data()[r * 8..(r + 1) * 8];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        brute -= (row[t].exp() / z).ln();
    }
    brute /= 5.0;
    let mut margins = Vec::new();
    for m in [1.0, 10.0, 100.0] {
        let mut row = vec![0.0; 4];
        row[2] = m;
        margins.push(graph_eval(&[Tensor::new(vec![1, 4], row)?], |g, v| g.cross_entropy_logits(v[0], &[2]))?[0]);
    }
    let monotone = margins.windows(2).all(|w| w[1] < w[0]) && margins[2] < 1e-40;
    Ok(((got - brute).abs() <= 1e-10 && monotone, format!("|Δ| = {:.1e}, margin losses {margins:?}", (got - brute).abs())))
}

fn bridge(seed: u64, signals: usize) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..signals {
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pyr = haar_analysis(&x, 6)?;
        for j in 1..=6 {
            let k = 1 << j;
            let block = reconstruct_block_signal(&pyr, j)?;
            let avg = causal_avg(&x, k)?;
            for t in (k - 1..64).step_by(k) {
                worst = worst.max((avg[t] - block[t]).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("{signals} signals, L=64, j=1..6, max |Δ| {worst:.1e}")))
}

fn learnable_equals_fixed(seed: u64) -> Result<(bool, String)> {
    let (e, l) = (16, 12);
    let map = test_map(e, l);
    let bank = LearnableKernelBank::new(&map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = p(&[2 * l, e], &mut rng);
    let fixed = graph_eval(&[x.clone()], |g, v| apply_multiscale(g, v[0], l, &map, WaveletMode::Fixed, None, None))?;
    let mut g = Graph::new();
    let xv = g.leaf(&x);
    let kv = bank.register(&mut g);
    let out = apply_multiscale(&mut g, xv, l, &map, WaveletMode::Learnable, Some(&kv), None)?;
    let same = g.value(out).iter().zip(&fixed).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((same, "kernels at 1/f(i) reproduce the moving average bit for bit".into()))
}

fn fir_iir() -> Result<(bool, String)> {
    let l = 64;
    let mut impulse = vec![0.0; l];
    impulse[0] = 1.0;
    let mut fir = true;
    for k in [1, 2, 5, 17, 64] {
        let y = causal_avg(&impulse, k)?;
        fir &= y.iter().enumerate().all(|(t, &v)| (t < k) == (v != 0.0));
    }
    let iir = ema_smooth(&impulse, 0.5)?;
    let tail = iir[l - 1];
    Ok((fir && iir.iter().all(|&v| v != 0.0), format!("FIR support exact; EMA response at lag {} = {tail:.3e}", l - 1)))
}

fn kernel_map_values() -> Result<(bool, String)> {
    let m = KernelMap::new(128, 512, KernelMapMode::LinearSize)?;
    let d = KernelMap::new(128, 512, KernelMapMode::DyadicLevels)?;
    let got = [m.kernel_size(64)?, m.kernel_size(127)?, m.kernel_size(96)?];
    let dy = [d.kernel_size(64)?, d.kernel_size(127)?];
    let monotone = m.sizes().windows(2).all(|w| w[0] <= w[1]) && d.sizes().windows(2).all(|w| w[0] <= w[1]);
    let out_of_range = m.kernel_size(10).is_err();
    Ok((got == [2, 512, 261] && dy == [2, 512] && monotone && out_of_range, format!("f(64,127,96) = {got:?}, dyadic ends {dy:?}")))
}

fn haar_examples() -> Result<(bool, String)> {
    let p1 = haar_analysis(&[1.0, 3.0, 2.0, 4.0], 2)?;
    let l1 = p1.level(1).expect("level 1");
    let mut imp = vec![0.0; 8];
    imp[0] = 1.0;
    let p2 = haar_analysis(&imp, 3)?;
    let approx: Vec<Vec<f64>> = (1..=3).map(|j| p2.level(j).expect("level").approx.clone()).collect();
    let ok = l1.approx == [2.0, 3.0]
        && l1.detail == [-1.0, -1.0]
        && approx == [vec![0.5, 0.0, 0.0, 0.0], vec![0.25, 0.0], vec![0.125]]
        && reconstruct_block_signal(&p1, 1)? == [2.0, 2.0, 3.0, 3.0];
    Ok((ok, "pairwise averages/differences and impulse pyramid".into()))
}

fn listops_agreement(seed: u64, n: usize) -> Result<(bool, String)> {
    let mut generator = ListOpsGenerator::new(ListOpsParams::default(), seed)?;
    let mut mismatches = 0;
    for s in generator.samples(n) {
        let a = usize::from(evaluate_listops(&s.tokens)?);
        let b = usize::from(evaluate_listops_stack(&s.tokens)?);
        mismatches += usize::from(a != s.label || b != s.label);
    }
    Ok((mismatches == 0, format!("{n} samples, {mismatches} disagreements")))
}

fn hmm_enumeration() -> Result<(bool, String)> {
    let em = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.2, 0.6], vec![0.1, 0.5, 0.4]];
    let src = RegimeSource::with_emissions(em.clone(), 0.25, 0)?;
    let tokens = [1, 2, 2, 0];
    let mut total = 0.0;
    for path in 0..81usize {
        let s: Vec<usize> = (0..4).map(|t| (path / 3usize.pow(t as u32)) % 3).collect();
        let mut pr = em[s[0]][tokens[0]] / 3.0;
        for t in 1..4 {
            pr *= src.transition(s[t - 1], s[t]) * em[s[t]][tokens[t]];
        }
        total += pr;
    }
    let diff = (src.oracle_nll(&tokens)? - (-total.ln() / 4.0)).abs();
    Ok((diff <= 1e-10, format!("forward vs 81-path enumeration |Δ| = {diff:.1e}")))
}

fn spe_fixture() -> Result<(bool, String)> {
    let baseline: Vec<(f64, f64)> = (0..=25).map(|e| (f64::from(e), 1.5 - 0.57 * f64::from(e) / 25.0)).collect();
    let proposed = [(0.0, 1.5), (14.0, 0.94), (15.0, 0.92), (25.0, 0.88)];
    let r = same_performance_epoch(&baseline, &proposed, 25.0, true)?;
    let spe = r.spe.unwrap_or(f64::INFINITY);
    let pct = r.speedup_pct.unwrap_or(f64::NEG_INFINITY);
    Ok(((spe - 14.5).abs() < 1e-9 && pct.round() == 42.0, format!("SPE {spe}, speedup {pct:.1}%")))
}

fn tiny_config(mode: WaveletMode) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        context_len: 16,
        embed_dim: 8,
        ff_dim: 16,
        n_heads: 2,
        vocab_size: 5,
        penultimate_dim: 12,
        ..ModelConfig::desk()
    }
    .with_mode(mode)
}

/// Perturbs each input position of a tiny model and confirms logits at
/// earlier positions are bit-identical.
pub fn model_causality(mode: WaveletMode, seed: u64) -> Result<(bool, String)> {
    let cfg = tiny_config(mode);
    let mut model = GptModel::new(cfg.clone(), seed)?;
    // Perturb learnable kernels away from the moving average.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for prm in model.params_mut() {
        if prm.name.starts_with("wavelet.") {
            prm.tensor.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let l = cfg.context_len;
    let v = cfg.vocab_size;
    let tokens: Vec<usize> = (0..l).map(|_| rng.random_range(0..v)).collect();
    let base = model.forward_lm(&TokenBatch::new(1, l, tokens.clone())?)?;
    let mut violations = 0;
    for t in 0..l {
        let mut moved = tokens.clone();
        moved[t] = (moved[t] + 1) % v;
        let out = model.forward_lm(&TokenBatch::new(1, l, moved)?)?;
        violations += base.data()[..t * v].iter().zip(&out.data()[..t * v]).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    }
    Ok((violations == 0, format!("L={l}, E=8, 2 layers, {violations} changed logits before the perturbed position")))
}

fn fixed_adds_no_parameters() -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    for (label, cfg) in [("reference", ModelConfig::reference()), ("desk", ModelConfig::desk())] {
        let off = GptModel::new(cfg.clone(), 0)?.param_count().total;
        let fixed = GptModel::new(cfg.clone().with_mode(WaveletMode::Fixed), 0)?.param_count().total;
        ok &= off == fixed;
        detail.push(format!("{label}: off {off} fixed {fixed}"));
        for share in [false, true] {
            let c = ModelConfig { share_across_layers: share, ..cfg.clone().with_mode(WaveletMode::Learnable) };
            let count = GptModel::new(c.clone(), 0)?.param_count();
            let expect = c.kernel_map()?.total_kernel_len() * c.n_banks();
            ok &= count.extra() == expect && count.total == off + expect;
            detail.push(format!("learnable shared={share} +{} ({:.3}%)", count.extra(), 100.0 * count.extra_ratio()));
        }
    }
    Ok((ok, detail.join("; ")))
}

/// Runs the whole suite.
pub fn run_suite(opts: &VerifyOptions) -> VerifyReport {
    let seed = opts.seed;
    let cases: Vec<GradCase> = gradient_cases()
        .into_iter()
        .map(|c| if opts.corrupt.iter().any(|n| *n == c.op) { c.corrupted() } else { c })
        .collect();
    let mut checks = run_gradient_cases(&cases, opts.instances, seed);
    checks.push(check("autodiff/fan_in_accumulation", fan_in_accumulates));
    checks.push(check("autodiff/op_examples", op_examples));
    checks.push(check("autodiff/attention_examples", || attention_examples(seed)));
    checks.push(check("autodiff/cross_entropy_oracle", || cross_entropy_oracle(seed)));
    checks.push(check("causality/attention", || attention_causality(seed)));
    checks.push(check("causality/conv1d", || conv_causality(seed)));
    for mode in [WaveletMode::Off, WaveletMode::Fixed, WaveletMode::Learnable, WaveletMode::Ema] {
        checks.push(check(&format!("causality/multiscale_{}", mode.as_str()), || multiscale_causality(mode, seed)));
    }
    for mode in [WaveletMode::Off, WaveletMode::Fixed, WaveletMode::Learnable, WaveletMode::Ema] {
        checks.push(check(&format!("causality/model_{}", mode.as_str()), || model_causality(mode, seed)));
    }
    checks.push(check("wavelet/haar_examples", haar_examples));
    checks.push(check("wavelet/block_bridge", || bridge(seed, 100)));
    checks.push(check("wavelet/learnable_init_equals_fixed", || learnable_equals_fixed(seed)));
    checks.push(check("wavelet/fir_vs_iir", fir_iir));
    checks.push(check("wavelet/kernel_map", kernel_map_values));
    checks.push(check("model/fixed_adds_no_parameters", fixed_adds_no_parameters));
    checks.push(check("data/listops_evaluators_agree", || listops_agreement(seed, opts.listops_samples)));
    checks.push(check("data/hmm_forward_vs_enumeration", hmm_enumeration));
    checks.push(check("train/spe_fixture", spe_fixture));
    VerifyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_backward_is_caught_and_named() {
        let cases: Vec<GradCase> = gradient_cases().into_iter().filter(|c| c.op == "layer_norm").map(GradCase::corrupted).collect();
        let res = run_gradient_cases(&cases, 2, 0);
        assert_eq!(res.len(), 1);
        assert!(!res[0].passed);
        assert_eq!(res[0].name, "gradient/layer_norm");
    }
}
