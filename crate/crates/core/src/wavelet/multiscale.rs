//! The inter-block operator: the upper half of the embedding coordinates is
//! replaced by a causal approximate signal, the lower half passes through.

use serde::{Deserialize, Serialize};

use super::causal::{conv_backward, conv_forward, ema_backward, ema_forward, EMA_ALPHA_MAX, EMA_ALPHA_MIN};
use super::kernel_map::KernelMap;
use crate::autodiff::{Graph, Var};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletMode {
    #[default]
    Off,
    /// Haar-style moving average, kernel length `f(i)`.
    Fixed,
    /// Free kernels of length `f(i)`.
    Learnable,
    /// Exponential moving average with per-coordinate decay.
    Ema,
}

impl WaveletMode {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveletMode::Off => "off",
            WaveletMode::Fixed => "fixed",
            WaveletMode::Learnable => "learnable",
            WaveletMode::Ema => "ema",
        }
    }
}

impl std::str::FromStr for WaveletMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "fixed" => Ok(Self::Fixed),
            "learnable" => Ok(Self::Learnable),
            "ema" => Ok(Self::Ema),
            other => config_err(format!("unknown wavelet mode `{other}`")),
        }
    }
}

/// Per-coordinate EMA decay, linear in the coordinate: close to 1 (almost no
/// smoothing) at `E/2`, close to 0 (long memory) at `E − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaConfig {
    alphas: Vec<f64>,
}

impl EmaConfig {
    pub fn linear(map: &KernelMap) -> Self {
        let half = map.embed_dim() / 2;
        let alphas = (0..half)
            .map(|c| {
                let frac = c as f64 / (half - 1) as f64;
                (1.0 - frac).clamp(EMA_ALPHA_MIN, EMA_ALPHA_MAX)
            })
            .collect();
        Self { alphas }
    }

    pub fn from_alphas(map: &KernelMap, alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() != map.embed_dim() / 2 {
            return config_err(format!(
                "{} EMA decays for {} processed coordinates",
                alphas.len(),
                map.embed_dim() / 2
            ));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return config_err(format!("EMA decay {a} outside (0, 1)"));
        }
        Ok(Self { alphas })
    }

    /// Decay for processed coordinate `i ∈ [E/2, E)`.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - self.alphas.len()]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// One learnable kernel per processed coordinate, lengths taken from the
/// kernel map. Initialised to the constant `1/f(i)`, i.e. the fixed average.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableKernelBank {
    kernels: Vec<Tensor>,
}

impl LearnableKernelBank {
    pub fn new(map: &KernelMap) -> Self {
        let kernels = map
            .sizes()
            .into_iter()
            .map(|k| Tensor::filled(vec![k], 1.0 / k as f64).into_param())
            .collect();
        Self { kernels }
    }

    pub fn kernels(&self) -> &[Tensor] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Tensor] {
        &mut self.kernels
    }

    pub fn param_count(&self) -> usize {
        self.kernels.iter().map(Tensor::len).sum()
    }

    /// Registers every kernel as a graph parameter, in coordinate order.
    pub fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.kernels.iter().map(|k| g.param(k)).collect()
    }
}

/// Applies the operator selected by `mode` to `x: [B·seq_len × E]`.
///
/// `bank` (graph handles of a [`LearnableKernelBank`]) must be given exactly
/// when `mode` is `Learnable`; `ema` exactly when it is `Ema`. `Off` returns
/// `x` itself.
pub fn apply_multiscale(
    g: &mut Graph,
    x: Var,
    seq_len: usize,
    map: &KernelMap,
    mode: WaveletMode,
    bank: Option<&[Var]>,
    ema: Option<&EmaConfig>,
) -> Result<Var> {
    match (mode, bank.is_some(), ema.is_some()) {
        (WaveletMode::Learnable, true, false)
        | (WaveletMode::Ema, false, true)
        | (WaveletMode::Off | WaveletMode::Fixed, false, false) => {}
        _ => {
            return config_err(format!(
                "mode `{}` given bank={} ema={}",
                mode.as_str(),
                bank.is_some(),
                ema.is_some()
            ))
        }
    }
    let (rows, e) = match *g.shape(x) {
        [r, c] => (r, c),
        ref s => return dim_err(format!("multiscale input must be 2-D, got {s:?}")),
    };
    if e != map.embed_dim() {
        return dim_err(format!("input width {e} vs kernel map dimension {}", map.embed_dim()));
    }
    if seq_len == 0 || seq_len > map.context_len() || rows % seq_len != 0 {
        return dim_err(format!(
            "{rows} rows cannot be split into sequences of {seq_len} (context {})",
            map.context_len()
        ));
    }
    if mode == WaveletMode::Off {
        return Ok(x);
    }
    let half = e / 2;
    let batch = rows / seq_len;
    let sizes = map.sizes();

    let kernels: Vec<Vec<f64>> = match mode {
        WaveletMode::Fixed => sizes.iter().map(|&k| vec![1.0 / k as f64; k]).collect(),
        WaveletMode::Learnable => {
            let bank = bank.expect("checked above");
            if bank.len() != half {
                return config_err(format!("{} kernels for {half} processed coordinates", bank.len()));
            }
            for (c, (&v, &k)) in bank.iter().zip(&sizes).enumerate() {
                if g.shape(v) != [k] {
                    return config_err(format!(
                        "kernel for coordinate {} has shape {:?}, expected [{k}]",
                        half + c,
                        g.shape(v)
                    ));
                }
            }
            bank.iter().map(|&v| g.value(v).to_vec()).collect()
        }
        _ => Vec::new(),
    };
    let alphas: Vec<f64> = match (mode, ema) {
        (WaveletMode::Ema, Some(cfg)) => {
            if cfg.alphas().len() != half {
                return config_err("EMA config does not match the kernel map");
            }
            cfg.alphas().to_vec()
        }
        _ => Vec::new(),
    };

    let xv = g.shared_value(x);
    let mut out = xv.as_ref().clone();
    let mut col = vec![0.0; seq_len];
    for b in 0..batch {
        for c in 0..half {
            let i = half + c;
            for (t, v) in col.iter_mut().enumerate() {
                *v = xv[(b * seq_len + t) * e + i];
            }
            let y = if mode == WaveletMode::Ema {
                ema_forward(&col, alphas[c])
            } else {
                conv_forward(&col, &kernels[c])
            };
            for (t, v) in y.into_iter().enumerate() {
                out[(b * seq_len + t) * e + i] = v;
            }
        }
    }

    let mut parents = vec![x];
    if let Some(bank) = bank {
        parents.extend_from_slice(bank);
    }
    let op = format!("multiscale_{}", mode.as_str());
    g.custom(
        &op,
        &parents,
        vec![rows, e],
        out,
        Box::new(move |grad, needs| {
            let mut dx = grad.to_vec();
            let mut dks: Vec<Vec<f64>> = if mode == WaveletMode::Learnable {
                kernels.iter().map(|k| vec![0.0; k.len()]).collect()
            } else {
                Vec::new()
            };
            let mut gcol = vec![0.0; seq_len];
            let mut xcol = vec![0.0; seq_len];
            let mut dcol = vec![0.0; seq_len];
            for b in 0..batch {
                for c in 0..half {
                    let i = half + c;
                    for t in 0..seq_len {
                        gcol[t] = grad[(b * seq_len + t) * e + i];
                        xcol[t] = xv[(b * seq_len + t) * e + i];
                    }
                    dcol.iter_mut().for_each(|v| *v = 0.0);
                    match mode {
                        WaveletMode::Ema => ema_backward(alphas[c], &gcol, &mut dcol),
                        _ => {
                            let dk = dks.get_mut(c).map(|v| v.as_mut_slice());
                            conv_backward(&xcol, &kernels[c], &gcol, Some(&mut dcol), dk);
                        }
                    }
                    for t in 0..seq_len {
                        dx[(b * seq_len + t) * e + i] = dcol[t];
                    }
                }
            }
            let mut result = vec![needs[0].then_some(dx)];
            result.extend(dks.into_iter().map(Some));
            result
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::causal::{causal_avg, ema_smooth};
    use crate::wavelet::KernelMapMode;
    use rand::{Rng, SeedableRng};

    fn random_input(rows: usize, e: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, e], (0..rows * e).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn column(data: &[f64], e: usize, i: usize) -> Vec<f64> {
        data.chunks_exact(e).map(|r| r[i]).collect()
    }

    #[test]
    fn off_returns_input_unchanged() {
        let map = KernelMap::new(8, 16, KernelMapMode::LinearSize).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(&random_input(16, 8, 1));
        let y = apply_multiscale(&mut g, x, 16, &map, WaveletMode::Off, None, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn fixed_matches_columnwise_average() {
        let (l, e) = (32, 8);
        let map = KernelMap::new(e, l, KernelMapMode::LinearSize).unwrap();
        let input = random_input(2 * l, e, 2);
        let mut g = Graph::new();
        let x = g.leaf(&input);
        let y = apply_multiscale(&mut g, x, l, &map, WaveletMode::Fixed, None, None).unwrap();
        let out = g.value(y);
        for b in 0..2 {
            let rows = b * l * e..(b + 1) * l * e;
            for i in 0..e {
                let xin = column(&input.data()[rows.clone()], e, i);
                let got = column(&out[rows.clone()], e, i);
                let expected = if i < e / 2 { xin } else { causal_avg(&xin, map.kernel_size(i).unwrap()).unwrap() };
                assert_eq!(got, expected, "batch {b} column {i}");
            }
        }
    }

    #[test]
    fn ema_matches_columnwise_recursion() {
        let (l, e) = (20, 6);
        let map = KernelMap::new(e, l, KernelMapMode::LinearSize).unwrap();
        let cfg = EmaConfig::linear(&map);
        assert_eq!(cfg.alphas(), &[EMA_ALPHA_MAX, 0.5, EMA_ALPHA_MIN]);
        let input = random_input(l, e, 3);
        let mut g = Graph::new();
        let x = g.leaf(&input);
        let y = apply_multiscale(&mut g, x, l, &map, WaveletMode::Ema, None, Some(&cfg)).unwrap();
        for i in 3..6 {
            let expected = ema_smooth(&column(input.data(), e, i), cfg.alpha(i)).unwrap();
            assert_eq!(column(g.value(y), e, i), expected);
        }
    }

    #[test]
    fn learnable_at_init_equals_fixed() {
        let (l, e) = (24, 10);
        let map = KernelMap::new(e, l, KernelMapMode::LinearSize).unwrap();
        let bank = LearnableKernelBank::new(&map);
        assert_eq!(bank.param_count(), map.total_kernel_len());
        let input = random_input(3 * l, e, 4);
        let mut g = Graph::new();
        let x = g.leaf(&input);
        let vars = bank.register(&mut g);
        let fixed = apply_multiscale(&mut g, x, l, &map, WaveletMode::Fixed, None, None).unwrap();
        let learn = apply_multiscale(&mut g, x, l, &map, WaveletMode::Learnable, Some(&vars), None).unwrap();
        assert_eq!(g.value(fixed), g.value(learn));
    }

    #[test]
    fn mode_argument_mismatch_is_config_error() {
        let map = KernelMap::new(8, 8, KernelMapMode::LinearSize).unwrap();
        let cfg = EmaConfig::linear(&map);
        let mut g = Graph::new();
        let x = g.leaf(&random_input(8, 8, 5));
        let err = |r: Result<Var>| matches!(r, Err(crate::Error::Config(_)));
        assert!(err(apply_multiscale(&mut g, x, 8, &map, WaveletMode::Learnable, None, None)));
        assert!(err(apply_multiscale(&mut g, x, 8, &map, WaveletMode::Ema, None, None)));
        assert!(err(apply_multiscale(&mut g, x, 8, &map, WaveletMode::Fixed, None, Some(&cfg))));
        assert!(err(apply_multiscale(&mut g, x, 8, &map, WaveletMode::Off, Some(&[]), None)));
    }

    #[test]
    fn causal_in_every_mode() {
        let (l, e) = (16, 8);
        let map = KernelMap::new(e, l, KernelMapMode::LinearSize).unwrap();
        let bank = LearnableKernelBank::new(&map);
        let cfg = EmaConfig::linear(&map);
        let base = random_input(l, e, 6);
        for mode in [WaveletMode::Off, WaveletMode::Fixed, WaveletMode::Learnable, WaveletMode::Ema] {
            let run = |input: &Tensor| {
                let mut g = Graph::new();
                let x = g.leaf(input);
                let vars = bank.register(&mut g);
                let bank_arg = (mode == WaveletMode::Learnable).then_some(vars.as_slice());
                let ema_arg = (mode == WaveletMode::Ema).then_some(&cfg);
                let y = apply_multiscale(&mut g, x, l, &map, mode, bank_arg, ema_arg).unwrap();
                g.value(y).to_vec()
            };
            let reference = run(&base);
            for t in 0..l {
                let mut perturbed = base.clone();
                for c in 0..e {
                    perturbed.data_mut()[t * e + c] += 0.75;
                }
                let out = run(&perturbed);
                assert_eq!(&out[..t * e], &reference[..t * e], "mode {mode:?} t={t}");
                assert_eq!(
                    column(&out, e, 0)[t..].to_vec(),
                    column(perturbed.data(), e, 0)[t..].to_vec(),
                    "pass-through, mode {mode:?}"
                );
            }
        }
    }
}
