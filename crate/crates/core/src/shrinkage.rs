//! Panel statistics and the variance-aware shrinkage quantities.
//!
//! Under the agent model `δ_i = δ_h + η_i` with `η_i` i.i.d., zero mean and
//! variance `τ²`, the within-panel variance `D²` is unbiased for `τ²`, the
//! consensus adjustment has variance `τ²/n`, and the scalar `γ` minimising
//! `E[(γΔ − Δ_h)²]` is `Δ_h² / (Δ_h² + τ²/n)`.

use thiserror::Error;

use crate::stats::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShrinkageError {
    #[error("panel has {0} persona(s); at least 2 are needed")]
    PanelTooSmall(usize),
    #[error("panel contains a non-finite gap")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelStats {
    /// `δ̄`, the panel mean.
    pub consensus: f64,
    /// `D²`, the unbiased sample variance of the panel.
    pub within_variance: f64,
    /// `Δ = δ̄ − δ_base`.
    pub consensus_adjustment: f64,
    pub n: usize,
}

/// Panel mean and centred values.
///
/// Values are shifted by the first gap before summing: variance is
/// shift-invariant and a unanimous panel then yields exactly its common value
/// and exactly zero spread.
fn centred(gaps: &[f64]) -> (f64, Vec<f64>) {
    let pivot = gaps[0];
    let shifted: Vec<f64> = gaps.iter().map(|g| g - pivot).collect();
    let mean_shift = shifted.iter().copied().collect::<CompensatedSum>().value() / gaps.len() as f64;
    let dev = shifted.iter().map(|s| s - mean_shift).collect();
    (pivot + mean_shift, dev)
}

/// Panel mean `δ̄`. Requires a non-empty slice.
pub fn consensus(gaps: &[f64]) -> f64 {
    assert!(!gaps.is_empty(), "consensus of an empty panel");
    centred(gaps).0
}

/// Unbiased sample variance `D²`; `None` for fewer than two gaps.
pub fn within_variance(gaps: &[f64]) -> Option<f64> {
    if gaps.len() < 2 {
        return None;
    }
    let (_, dev) = centred(gaps);
    let ss: CompensatedSum = dev.iter().map(|d| d * d).collect();
    Some(ss.value() / (gaps.len() - 1) as f64)
}

pub fn panel_stats(gaps: &[f64], base: f64) -> Result<PanelStats, ShrinkageError> {
    if gaps.len() < 2 {
        return Err(ShrinkageError::PanelTooSmall(gaps.len()));
    }
    if !base.is_finite() || gaps.iter().any(|g| !g.is_finite()) {
        return Err(ShrinkageError::NonFinite);
    }
    let consensus = consensus(gaps);
    Ok(PanelStats {
        consensus,
        within_variance: within_variance(gaps).expect("n >= 2"),
        consensus_adjustment: consensus - base,
        n: gaps.len(),
    })
}

/// MSE-optimal shrinkage `Δ_h² / (Δ_h² + τ²/n)`; `0` in the `0/0` case.
pub fn gamma_star(delta_h_sq: f64, tau_sq: f64, n: usize) -> f64 {
    let noise = tau_sq / n as f64;
    let denom = delta_h_sq + noise;
    if denom == 0.0 {
        0.0
    } else {
        delta_h_sq / denom
    }
}

/// Drop in `Var(Δ)` from adding the `(n+1)`-th persona: `τ²/(n(n+1))`.
pub fn marginal_persona_variance(tau_sq: f64, n: usize) -> f64 {
    let n = n as f64;
    tau_sq / (n * (n + 1.0))
}

/// `E[(γΔ − Δ_h)²] = γ²τ²/n + (γ − 1)²Δ_h²`.
pub fn mse_of_gamma(gamma: f64, delta_h: f64, tau_sq: f64, n: usize) -> f64 {
    gamma * gamma * tau_sq / n as f64 + (gamma - 1.0).powi(2) * delta_h * delta_h
}
