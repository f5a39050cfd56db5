//! Learning-rate and KL-weight schedules.

use std::f64::consts::PI;

use super::train::TrainConfig;

/// Cyclical KL warm-up: zero (or one, if configured) before the warm-up
/// starts, then in every cycle a linear ramp 0 → 1 over the first half and a
/// hold at 1 over the second half.
pub fn kl_weight_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter < cfg.kl_warmup_start {
        return if cfg.full_kl_before_warmup { 1.0 } else { 0.0 };
    }
    let period = cfg.kl_warmup_period.max(2);
    let half = period / 2;
    let c = (iter - cfg.kl_warmup_start) % period;
    if c < half {
        c as f64 / half as f64
    } else {
        1.0
    }
}

/// Iteration at which the one-cycle schedule peaks.
pub fn lr_peak_iteration(cfg: &TrainConfig) -> usize {
    (cfg.lr_warmup_fraction * cfg.iterations as f64).round() as usize
}

/// Cosine one-cycle schedule: `max_lr / div` → `max_lr` over the warm-up
/// fraction, then `max_lr` → `max_lr / final_div` over the remaining iterations.
pub fn lr_schedule(iter: usize, cfg: &TrainConfig) -> f64 {
    let max = cfg.max_lr;
    let start = max / cfg.lr_div_factor;
    let end = max / cfg.lr_final_div_factor;
    let peak = lr_peak_iteration(cfg);
    let last = cfg.iterations.saturating_sub(1).max(peak + 1);
    if iter <= peak {
        if peak == 0 {
            return max;
        }
        let t = iter as f64 / peak as f64;
        max - (max - start) * 0.5 * (1.0 + (PI * t).cos())
    } else {
        let t = ((iter - peak) as f64 / (last - peak) as f64).min(1.0);
        end + (max - end) * 0.5 * (1.0 + (PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_weight_points() {
        let cfg = TrainConfig::default();
        assert_eq!(kl_weight_schedule(0, &cfg), 0.0);
        assert_eq!(kl_weight_schedule(19_999, &cfg), 0.0);
        assert_eq!(kl_weight_schedule(20_000, &cfg), 0.0);
        assert_eq!(kl_weight_schedule(20_500, &cfg), 0.5);
        assert_eq!(kl_weight_schedule(21_000, &cfg), 1.0);
        assert_eq!(kl_weight_schedule(21_999, &cfg), 1.0);
        assert_eq!(kl_weight_schedule(22_500, &cfg), 0.5);
        let held = TrainConfig { full_kl_before_warmup: true, ..TrainConfig::default() };
        assert_eq!(kl_weight_schedule(5, &held), 1.0);
    }

    #[test]
    fn kl_weight_every_cycle_reaches_one() {
        let cfg = TrainConfig::default();
        assert!((0..20_000).all(|i| kl_weight_schedule(i, &cfg) == 0.0));
        for cycle in 0..40 {
            let base = 20_000 + cycle * 2000;
            let vals: Vec<f64> = (base..base + 2000).map(|i| kl_weight_schedule(i, &cfg)).collect();
            assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(vals.iter().cloned().fold(0.0, f64::max), 1.0);
            assert_eq!(vals[0], 0.0);
        }
    }

    #[test]
    fn lr_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(30_000, &cfg), 0.001);
        assert!((lr_schedule(0, &cfg) - 0.00004).abs() < 1e-18);
        let end = lr_schedule(cfg.iterations - 1, &cfg);
        assert!((end - 0.001 / 1e4).abs() < 1e-15);
    }

    #[test]
    fn lr_monotone_each_side_of_peak() {
        let cfg = TrainConfig::default();
        let lrs: Vec<f64> = (0..cfg.iterations).map(|i| lr_schedule(i, &cfg)).collect();
        let peak = lr_peak_iteration(&cfg);
        assert!(lrs[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs.iter().cloned().fold(0.0, f64::max), cfg.max_lr);
    }
}
