//! Triangular cyclical learning-rate schedule.
//!
//! The rate ramps linearly from `lr_base` up to `lr_max` over `stepsize`
//! iterations, back down over the next `stepsize`, and repeats.

/// Learning rate at a given 0-based iteration.
pub fn lr_at(iteration: usize, lr_base: f64, lr_max: f64, stepsize: usize) -> f64 {
    assert!(stepsize > 0, "cyclical schedule needs a positive stepsize");
    let it = iteration as f64;
    let step = stepsize as f64;
    let cycle = (1.0 + it / (2.0 * step)).floor();
    let x = (it / step - 2.0 * cycle + 1.0).abs();
    lr_base + (lr_max - lr_base) * (1.0 - x).max(0.0)
}
