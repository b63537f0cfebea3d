//! Final gap → sparing probability.

use crate::model::{Attribute, ControllerConfig};

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse logistic. Infinite at 0 and 1.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `σ(δ_final / T)` with `T` the attribute's decision temperature under the
/// configured mode.
pub fn p_spare(final_gap: f64, attribute: Attribute, cfg: &ControllerConfig) -> f64 {
    logistic(final_gap / cfg.temperature(attribute))
}
