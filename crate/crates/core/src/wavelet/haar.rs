//! Haar analysis filter bank and the non-causal block reconstruction used as
//! a reference for the causal operators.

use serde::Serialize;

use crate::error::{config_err, data_err, Result};

/// Low-pass analysis filter `g[n]`.
pub const HAAR_LOWPASS: [f64; 2] = [0.5, 0.5];
/// High-pass analysis filter `h[n]`.
pub const HAAR_HIGHPASS: [f64; 2] = [0.5, -0.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PyramidLevel {
    pub approx: Vec<f64>,
    pub detail: Vec<f64>,
}

/// Approximation and detail coefficients of one signal, one entry per level
/// (index 0 is level 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveletPyramid {
    pub source_length: usize,
    pub levels: Vec<PyramidLevel>,
}

impl WaveletPyramid {
    pub fn level(&self, j: usize) -> Option<&PyramidLevel> {
        j.checked_sub(1).and_then(|i| self.levels.get(i))
    }

    pub fn max_level(&self) -> usize {
        self.levels.len()
    }
}

/// One analysis step: filter with `g`/`h` and keep every second sample.
///
/// `approx[n] = (x[2n] + x[2n+1]) / 2`, `detail[n] = (x[2n] − x[2n+1]) / 2`.
/// An odd-length input is padded with one zero on the right.
pub fn haar_analysis_step(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.is_empty() {
        return data_err("haar analysis of an empty signal");
    }
    let half = x.len().div_ceil(2);
    let mut approx = Vec::with_capacity(half);
    let mut detail = Vec::with_capacity(half);
    for n in 0..half {
        let a = x[2 * n];
        let b = x.get(2 * n + 1).copied().unwrap_or(0.0);
        approx.push(HAAR_LOWPASS[0] * a + HAAR_LOWPASS[1] * b);
        detail.push(HAAR_HIGHPASS[0] * a + HAAR_HIGHPASS[1] * b);
    }
    Ok((approx, detail))
}

/// Number of levels until a single coefficient remains: `⌈log2 L⌉`.
pub fn max_levels(len: usize) -> usize {
    if len <= 1 {
        0
    } else {
        (usize::BITS - (len - 1).leading_zeros()) as usize
    }
}

/// Recursive analysis on the approximation branch down to `max_level`.
pub fn haar_analysis(x: &[f64], max_level: usize) -> Result<WaveletPyramid> {
    if x.is_empty() {
        return data_err("haar analysis of an empty signal");
    }
    let top = max_levels(x.len());
    if max_level < 1 || max_level > top {
        return config_err(format!(
            "level {max_level} outside 1..={top} for a signal of length {}",
            x.len()
        ));
    }
    let mut levels = Vec::with_capacity(max_level);
    let mut current = x.to_vec();
    for _ in 0..max_level {
        let (approx, detail) = haar_analysis_step(&current)?;
        current.clone_from(&approx);
        levels.push(PyramidLevel { approx, detail });
    }
    Ok(WaveletPyramid { source_length: x.len(), levels })
}

/// Haar mother wavelet on the real line.
pub fn haar_mother(t: f64) -> f64 {
    if (0.0..0.5).contains(&t) {
        1.0
    } else if (0.5..1.0).contains(&t) {
        -1.0
    } else {
        0.0
    }
}

/// Haar scaling (box) function on the real line.
pub fn haar_scaling(t: f64) -> f64 {
    if (0.0..1.0).contains(&t) {
        1.0
    } else {
        0.0
    }
}

/// `ψ_{j,k}[n] = 2^{−j/2} ψ((n − k·2^j) / 2^j)`.
pub fn child_wavelet_value(j: u32, k: i64, n: i64) -> f64 {
    let width = f64::from(2u32.pow(j));
    haar_mother((n as f64 - k as f64 * width) / width) / width.sqrt()
}

/// Full-length approximate signal at level `j`: every block of `2^j`
/// samples holds that block's approximation coefficient (its mean).
///
/// This needs the whole signal and is therefore non-causal; it exists only
/// as a reference for the causal moving average.
pub fn reconstruct_block_signal(pyramid: &WaveletPyramid, j: usize) -> Result<Vec<f64>> {
    let len = pyramid.source_length;
    if !len.is_power_of_two() {
        return config_err(format!("block reconstruction needs a power-of-two length, got {len}"));
    }
    let Some(level) = pyramid.level(j) else {
        return config_err(format!("level {j} not present (pyramid has {})", pyramid.max_level()));
    };
    // Approximation coefficients are block means, so each one weights an
    // unnormalised box of width 2^j.
    let width = (1usize << j) as f64;
    let out = (0..len)
        .map(|n| {
            level
                .approx
                .iter()
                .enumerate()
                .map(|(k, c)| c * haar_scaling((n as f64 - k as f64 * width) / width))
                .sum()
        })
        .collect();
    Ok(out)
}
