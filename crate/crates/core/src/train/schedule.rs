use super::config::TrainConfig;

/// Learning rate after replaying a history of validation losses through
/// the reduce-on-plateau rule: once `plateau_window` consecutive
/// evaluations fail to beat the best loss by more than `plateau_epsilon`,
/// the rate is multiplied by `decay_factor` (never below `lr_floor`) and the
/// count restarts.
pub fn plateau_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    let mut lr = cfg.lr_init;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &v in history {
        if v < best - cfg.plateau_epsilon {
            best = v;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.plateau_window {
            lr = (lr * cfg.decay_factor).max(cfg.lr_floor);
            stale = 0;
        }
    }
    lr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_history_keeps_initial_rate() {
        let cfg = TrainConfig::default();
        let h: Vec<f64> = (0..20).map(|i| 3.0 - 0.01 * f64::from(i)).collect();
        assert_eq!(plateau_schedule(&h, &cfg), cfg.lr_init);
    }

    #[test]
    fn flat_window_halves_once() {
        let cfg = TrainConfig::default();
        assert_eq!(plateau_schedule(&[2.0; 4], &cfg), cfg.lr_init * 0.5);
        assert_eq!(plateau_schedule(&[2.0; 3], &cfg), cfg.lr_init);
    }

    #[test]
    fn decay_floors() {
        let cfg = TrainConfig::default();
        assert_eq!(plateau_schedule(&[2.0; 400], &cfg), cfg.lr_floor);
    }

    #[test]
    fn rate_never_increases() {
        let cfg = TrainConfig::default();
        let h: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let rates: Vec<f64> = (1..=h.len()).map(|n| plateau_schedule(&h[..n], &cfg)).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }
}
