//! One pass of loss-averse importance sampling.
//!
//! Gaussian perturbations of the consensus gap are scored by how much closer
//! they bring each persona (and the consensus itself) compared with the base
//! gap, passed through a Kahneman–Tversky value function, blended between
//! individual and collective terms, and softmax-aggregated. A pass whose
//! normalised effective sample size is at or below the threshold returns
//! exactly zero.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::ControllerConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsPassResult {
    pub delta_ptis: f64,
    /// `(Σw)² / (K·Σw²)`, in `(0, 1]`.
    pub ess_norm: f64,
    pub guard_triggered: bool,
    pub max_abs_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PtisError {
    #[error("importance weights are degenerate: no candidate has a finite utility")]
    DegenerateWeights,
    #[error("utilities and perturbations differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("an importance pass needs at least one candidate")]
    NoCandidates,
}

/// Symmetrised inputs of one scenario.
#[derive(Debug, Clone, Copy)]
pub struct PassInputs<'a> {
    pub base: f64,
    pub consensus: f64,
    pub personas: &'a [f64],
}

/// `|δ_base − δ_target| − |candidate − δ_target|`: positive when the candidate
/// is closer to the target than the base gap is.
pub fn gains(candidate: f64, base: f64, target: f64) -> f64 {
    (base - target).abs() - (candidate - target).abs()
}

/// `z^α` for gains, `−κ(−z)^α` for losses.
pub fn pt_value(z: f64, alpha: f64, kappa: f64) -> f64 {
    if z >= 0.0 {
        z.powf(alpha)
    } else {
        -kappa * (-z).powf(alpha)
    }
}

/// `(1−λ)·mean_i v(g_i/σ) + λ·v(g_cons/σ)`.
pub fn total_utility(persona_gains: &[f64], consensus_gain: f64, cfg: &ControllerConfig) -> f64 {
    let v = |g: f64| pt_value(g / cfg.proposal_sigma, cfg.pt_alpha, cfg.pt_kappa);
    let individual = if persona_gains.is_empty() {
        0.0
    } else {
        persona_gains.iter().map(|&g| v(g)).sum::<f64>() / persona_gains.len() as f64
    };
    (1.0 - cfg.lambda_coop) * individual + cfg.lambda_coop * v(consensus_gain)
}

/// Utility of the candidate `δ̄ + ε`.
pub fn candidate_utility(inputs: &PassInputs<'_>, eps: f64, cfg: &ControllerConfig) -> f64 {
    let candidate = inputs.consensus + eps;
    let persona_gains: Vec<f64> = inputs
        .personas
        .iter()
        .map(|&d| gains(candidate, inputs.base, d))
        .collect();
    let consensus_gain = gains(candidate, inputs.base, inputs.consensus);
    total_utility(&persona_gains, consensus_gain, cfg)
}

/// Softmax aggregation of perturbations with the ESS guard.
///
/// Weights are `exp((U_k − max U)/η)`; the guard fires when
/// `ess_norm ≤ rho`, in which case `delta_ptis` is exactly `0`.
pub fn aggregate(
    utilities: &[f64],
    perturbations: &[f64],
    eta: f64,
    rho: f64,
) -> Result<IsPassResult, PtisError> {
    if utilities.len() != perturbations.len() {
        return Err(PtisError::LengthMismatch(utilities.len(), perturbations.len()));
    }
    if utilities.is_empty() {
        return Err(PtisError::NoCandidates);
    }
    if utilities.iter().any(|u| u.is_nan()) {
        return Err(PtisError::DegenerateWeights);
    }
    let u_max = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !u_max.is_finite() {
        return Err(PtisError::DegenerateWeights);
    }
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut sum_we = 0.0;
    for (&u, &e) in utilities.iter().zip(perturbations) {
        let w = ((u - u_max) / eta).exp();
        sum_w += w;
        sum_w2 += w * w;
        sum_we += w * e;
    }
    let k = utilities.len() as f64;
    let ess_norm = (sum_w * sum_w / (k * sum_w2)).min(1.0);
    let guard_triggered = ess_norm <= rho;
    let max_abs_perturbation = perturbations.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(IsPassResult {
        delta_ptis: if guard_triggered { 0.0 } else { sum_we / sum_w },
        ess_norm,
        guard_triggered,
        max_abs_perturbation,
    })
}

/// Runs a pass on caller-supplied perturbations `ε_k`.
pub fn is_pass_with_draws(
    inputs: &PassInputs<'_>,
    perturbations: &[f64],
    cfg: &ControllerConfig,
) -> Result<IsPassResult, PtisError> {
    let utilities: Vec<f64> = perturbations
        .iter()
        .map(|&e| candidate_utility(inputs, e, cfg))
        .collect();
    aggregate(
        &utilities,
        perturbations,
        cfg.is_temperature_eta,
        cfg.ess_threshold_rho,
    )
}

/// Draws `n` perturbations from `N(0, σ²)`.
pub fn draw_perturbations<R: Rng + ?Sized>(rng: &mut R, sigma: f64, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, sigma).expect("sigma validated > 0");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Draws `k_half` perturbations from `rng` and runs one pass.
pub fn is_pass<R: Rng + ?Sized>(
    inputs: &PassInputs<'_>,
    cfg: &ControllerConfig,
    rng: &mut R,
) -> Result<IsPassResult, PtisError> {
    let eps = draw_perturbations(rng, cfg.proposal_sigma, cfg.k_half);
    is_pass_with_draws(inputs, &eps, cfg)
}
