use std::f64::consts::PI;

/// Cosine-annealed learning rate at step `t` of `total`. Steps past the end
/// stay at `eta_min`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, eta_min: f64) -> f64 {
    if total == 0 || t >= total {
        return eta_min;
    }
    eta_min + 0.5 * (lr0 - eta_min) * (1.0 + (PI * t as f64 / total as f64).cos())
}
