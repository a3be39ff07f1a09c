//! `dwt`: Haar pyramid of a numeric sequence, the block reconstruction at
//! each level and the causal moving average of matching length.

use serde::Serialize;

use wglab_core::wavelet::{causal_avg, haar_analysis, reconstruct_block_signal, WaveletPyramid};
use wglab_core::Error as CoreError;

use crate::CliResult;

/// Agreement required between the causal average and the block signal.
pub const BRIDGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelTrace {
    pub level: usize,
    pub kernel: usize,
    /// Absent when the input length is not a power of two.
    pub block_signal: Option<Vec<f64>>,
    pub causal_avg: Vec<f64>,
    /// Positions `t` with `(t + 1) % kernel == 0`.
    pub block_ends: Vec<usize>,
    pub max_abs_diff: Option<f64>,
    pub bridge_pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwtReport {
    pub input: Vec<f64>,
    pub pyramid: WaveletPyramid,
    pub traces: Vec<LevelTrace>,
}

/// Numbers separated by whitespace or commas.
pub fn parse_signal(text: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for (i, tok) in text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).enumerate() {
        let v: f64 = tok.parse().map_err(|_| CoreError::Parse { position: i, message: format!("`{tok}` is not a number") })?;
        if !v.is_finite() {
            return Err(CoreError::Parse { position: i, message: format!("`{tok}` is not finite") }.into());
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CoreError::Data("input holds no numbers".into()).into());
    }
    Ok(out)
}

pub fn cmd_dwt(x: &[f64], levels: Option<usize>) -> CliResult<DwtReport> {
    let max = wglab_core::wavelet::haar::max_levels(x.len());
    let levels = levels.unwrap_or(max);
    let pyramid = haar_analysis(x, levels)?;
    let dyadic = x.len().is_power_of_two();
    let mut traces = Vec::new();
    for j in 1..=levels {
        let kernel = 1usize << j;
        if kernel > x.len() {
            break;
        }
        let avg = causal_avg(x, kernel)?;
        let block_ends: Vec<usize> = (kernel - 1..x.len()).step_by(kernel).collect();
        let (block_signal, max_abs_diff) = if dyadic {
            let block = reconstruct_block_signal(&pyramid, j)?;
            let diff = block_ends.iter().map(|&t| (avg[t] - block[t]).abs()).fold(0.0, f64::max);
            (Some(block), Some(diff))
        } else {
            (None, None)
        };
        traces.push(LevelTrace {
            level: j,
            kernel,
            block_signal,
            causal_avg: avg,
            block_ends,
            bridge_pass: max_abs_diff.map(|d| d <= BRIDGE_TOLERANCE),
            max_abs_diff,
        });
    }
    Ok(DwtReport { input: x.to_vec(), pyramid, traces })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_has_zero_details() {
        let r = cmd_dwt(&[3.0; 16], None).unwrap();
        assert!(r.pyramid.levels.iter().all(|l| l.detail.iter().all(|&d| d == 0.0)));
        assert!(r.traces.iter().all(|t| t.bridge_pass == Some(true)));
    }

    #[test]
    fn ramp_coarsest_level_is_the_mean() {
        let x: Vec<f64> = (0..32).map(f64::from).collect();
        let r = cmd_dwt(&x, Some(5)).unwrap();
        assert_eq!(r.pyramid.level(5).unwrap().approx, vec![15.5]);
        assert_eq!(r.traces.len(), 5);
    }

    #[test]
    fn non_numeric_input_is_a_parse_error() {
        let e = parse_signal("1, 2, x").unwrap_err();
        assert!(matches!(e, crate::CliError::Core(CoreError::Parse { position: 2, .. })));
        assert_eq!(parse_signal("1,2\n3 4").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_length_skips_the_block_oracle() {
        let r = cmd_dwt(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], None).unwrap();
        assert!(r.traces.iter().all(|t| t.block_signal.is_none()));
    }
}
