//! Causal smoothing of a single coordinate signal along the token axis.
//!
//! All operators treat samples before position 0 as zero.

use crate::error::{config_err, Result};

pub const EMA_ALPHA_MIN: f64 = 1e-3;
pub const EMA_ALPHA_MAX: f64 = 1.0 - 1e-3;

/// `y[t] = Σ_{m=0}^{K−1} kernel[m]·x[t−m]`, summed in increasing `m`.
pub(crate) fn conv_forward(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let mut acc = 0.0;
            for (m, w) in kernel.iter().enumerate().take(t + 1) {
                acc += w * x[t - m];
            }
            acc
        })
        .collect()
}

/// Vector-Jacobian product of [`conv_forward`].
pub(crate) fn conv_backward(
    x: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dk: Option<&mut [f64]>,
) {
    let l = x.len();
    if let Some(dx) = dx {
        for (s, d) in dx.iter_mut().enumerate() {
            *d += kernel.iter().enumerate().take(l - s).map(|(m, w)| w * grad_out[s + m]).sum::<f64>();
        }
    }
    if let Some(dk) = dk {
        for (m, d) in dk.iter_mut().enumerate() {
            *d += (m..l).map(|t| grad_out[t] * x[t - m]).sum::<f64>();
        }
    }
}

/// Causal convolution with a kernel of length `1 ≤ K ≤ L`.
pub fn causal_conv1d(x: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.is_empty() || kernel.len() > x.len() {
        return config_err(format!("kernel length {} must lie in 1..={}", kernel.len(), x.len()));
    }
    Ok(conv_forward(x, kernel))
}

/// Trailing moving average over exactly `K` samples ending at `t`:
/// `y[t] = (1/K)·Σ_{m=t−K+1}^{t} x[m]`.
///
/// Terms are accumulated newest-first with weight `1/K` each, the same
/// order the convolution path uses, so a constant `1/K` kernel reproduces
/// this bit for bit.
pub fn causal_avg(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 || k > x.len() {
        return config_err(format!("kernel length {k} must lie in 1..={}", x.len()));
    }
    let w = 1.0 / k as f64;
    let mut y = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let start = (t + 1).saturating_sub(k);
        let mut acc = 0.0;
        for m in (start..=t).rev() {
            acc += w * x[m];
        }
        y.push(acc);
    }
    Ok(y)
}

pub(crate) fn ema_forward(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut s = 0.0;
    for (t, &v) in x.iter().enumerate() {
        s = if t == 0 { v } else { alpha * v + (1.0 - alpha) * s };
        y.push(s);
    }
    y
}

pub(crate) fn ema_backward(alpha: f64, grad_out: &[f64], dx: &mut [f64]) {
    let mut carry = 0.0;
    for t in (0..grad_out.len()).rev() {
        carry = grad_out[t] + (1.0 - alpha) * carry;
        dx[t] += if t == 0 { carry } else { alpha * carry };
    }
}

/// Exponential moving average `s_0 = x_0`, `s_t = α·x_t + (1−α)·s_{t−1}`.
pub fn ema_smooth(x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config_err(format!("EMA decay {alpha} must lie strictly between 0 and 1"));
    }
    Ok(ema_forward(x, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avg_identity_and_hand_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(causal_avg(&x, 1).unwrap(), x.to_vec());
        assert_eq!(causal_avg(&x, 2).unwrap(), vec![0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn avg_of_constant_ramps_up() {
        let c = 2.0;
        for k in 1..=8 {
            let y = causal_avg(&[c; 8], k).unwrap();
            for (t, v) in y.iter().enumerate() {
                let expected = c * (t + 1).min(k) as f64 / k as f64;
                assert!((v - expected).abs() < 1e-15, "k={k} t={t}");
            }
        }
    }

    #[test]
    fn avg_rejects_bad_lengths() {
        assert!(causal_avg(&[1.0; 4], 0).is_err());
        assert!(causal_avg(&[1.0; 4], 5).is_err());
        assert!(causal_conv1d(&[1.0; 4], &[]).is_err());
        assert!(causal_conv1d(&[1.0; 4], &[1.0; 5]).is_err());
    }

    #[test]
    fn conv_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(causal_conv1d(&x, &[1.0]).unwrap(), x.to_vec());
        assert_eq!(causal_conv1d(&x, &[0.5, 0.5]).unwrap(), vec![0.5, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn constant_kernel_matches_avg_bitwise() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 13.0 - 3.0).collect();
        for k in 1..=x.len() {
            let w = vec![1.0 / k as f64; k];
            assert_eq!(causal_conv1d(&x, &w).unwrap(), causal_avg(&x, k).unwrap());
        }
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_smooth(&[1.0, 0.0, 0.0, 0.0], 0.5).unwrap(), vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(ema_smooth(&[3.0; 6], 0.3).unwrap().iter().filter(|&&v| (v - 3.0).abs() > 1e-15).count(), 0);
        let x = [0.3, -1.0, 2.5, 7.0];
        let y = ema_smooth(&x, 1.0 - 1e-12).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-9));
        assert!(ema_smooth(&x, 0.0).is_err());
        assert!(ema_smooth(&x, 1.0).is_err());
    }

    #[test]
    fn fir_versus_iir_support() {
        let mut impulse = vec![0.0; 64];
        impulse[0] = 1.0;
        let k = 8;
        let fir = causal_avg(&impulse, k).unwrap();
        assert!(fir[..k].iter().all(|&v| v != 0.0));
        assert!(fir[k..].iter().all(|&v| v == 0.0));
        let iir = ema_smooth(&impulse, 0.5).unwrap();
        assert!(iir.iter().all(|&v| v != 0.0));
    }

    proptest::proptest! {
        #[test]
        fn avg_never_grows_peak(x in proptest::collection::vec(-100.0f64..100.0, 1..64), k in 1usize..64) {
            let k = k.min(x.len());
            let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let y = causal_avg(&x, k).unwrap();
            proptest::prop_assert!(y.iter().all(|v| v.abs() <= peak * (1.0 + 1e-12)));
        }

        #[test]
        fn avg_preserves_window_means(x in proptest::collection::vec(-10.0f64..10.0, 2..48), k in 1usize..48) {
            let k = k.min(x.len());
            let y = causal_avg(&x, k).unwrap();
            let tail = &y[k - 1..];
            let out_mean = tail.iter().sum::<f64>() / tail.len() as f64;
            let windows: Vec<f64> = (k - 1..x.len()).map(|t| x[t + 1 - k..=t].iter().sum::<f64>() / k as f64).collect();
            let in_mean = windows.iter().sum::<f64>() / windows.len() as f64;
            proptest::prop_assert!((out_mean - in_mean).abs() <= 1e-10);
        }
    }
}
