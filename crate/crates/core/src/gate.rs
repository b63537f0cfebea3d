//! Dual-pass reliability gate, the gated correction, the ESS-anchor blend and
//! the persona floor.
//!
//! The two half-budget passes are independent estimates of the same
//! correction; their squared disagreement `V_r` is a one-pair half-sample
//! variance estimate, and `r = exp(−V_r/s)` shrinks the averaged correction
//! when it is unreliable.

use rand::Rng;

use crate::model::ControllerConfig;
use crate::ptis::{draw_perturbations, is_pass_with_draws, IsPassResult, PassInputs, PtisError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualPass {
    pub pass1: IsPassResult,
    pub pass2: IsPassResult,
    /// `(δ⁽¹⁾ − δ⁽²⁾)²`.
    pub inter_pass_gap_sq: f64,
    pub gate_weight: f64,
}

impl DualPass {
    pub fn max_abs_perturbation(&self) -> f64 {
        self.pass1
            .max_abs_perturbation
            .max(self.pass2.max_abs_perturbation)
    }

    pub fn correction(&self) -> f64 {
        disca_correction(&self.pass1, &self.pass2, self.gate_weight)
    }
}

/// `exp(−V_r/s)`.
pub fn gate_weight(inter_pass_gap_sq: f64, gate_scale_s: f64) -> f64 {
    (-inter_pass_gap_sq / gate_scale_s).exp()
}

/// Runs both passes on caller-supplied draws.
pub fn dual_pass_with_draws(
    inputs: &PassInputs<'_>,
    draws1: &[f64],
    draws2: &[f64],
    cfg: &ControllerConfig,
) -> Result<DualPass, PtisError> {
    let pass1 = is_pass_with_draws(inputs, draws1, cfg)?;
    let pass2 = is_pass_with_draws(inputs, draws2, cfg)?;
    let d = pass1.delta_ptis - pass2.delta_ptis;
    let inter_pass_gap_sq = d * d;
    let gate_weight = if cfg.gate_enabled {
        gate_weight(inter_pass_gap_sq, cfg.gate_scale_s)
    } else {
        1.0
    };
    Ok(DualPass {
        pass1,
        pass2,
        inter_pass_gap_sq,
        gate_weight,
    })
}

/// Draws `2·k_half` perturbations from `rng`: the first half feeds pass 1,
/// the second half pass 2.
pub fn dual_pass<R: Rng + ?Sized>(
    inputs: &PassInputs<'_>,
    cfg: &ControllerConfig,
    rng: &mut R,
) -> Result<DualPass, PtisError> {
    let draws = draw_perturbations(rng, cfg.proposal_sigma, 2 * cfg.k_half);
    let (d1, d2) = draws.split_at(cfg.k_half);
    dual_pass_with_draws(inputs, d1, d2, cfg)
}

/// `δ* = r·(δ⁽¹⁾ + δ⁽²⁾)/2`.
pub fn disca_correction(pass1: &IsPassResult, pass2: &IsPassResult, r: f64) -> f64 {
    r * 0.5 * (pass1.delta_ptis + pass2.delta_ptis)
}

/// `α_ess = min(1, mean(ess₁, ess₂)/ρ)`.
pub fn ess_blend_weight(pass1: &IsPassResult, pass2: &IsPassResult, rho: f64) -> f64 {
    (0.5 * (pass1.ess_norm + pass2.ess_norm) / rho).min(1.0)
}

/// `α_ess·δ̄ + (1 − α_ess)·δ_base + δ*`, or `δ̄ + δ*` with the blend disabled.
pub fn final_gap(
    base: f64,
    consensus: f64,
    correction: f64,
    pass1: &IsPassResult,
    pass2: &IsPassResult,
    cfg: &ControllerConfig,
) -> f64 {
    if !cfg.ess_anchor_blend {
        return consensus + correction;
    }
    let a = ess_blend_weight(pass1, pass2, cfg.ess_threshold_rho);
    a * consensus + (1.0 - a) * base + correction
}

/// Caps how far any persona's gap distance may grow relative to the base gap.
///
/// The move `c = δ_final − δ_base` is scaled by the largest `t ∈ [0, 1]` such
/// that `|δ_base + t·c − δ_i| − |δ_base − δ_i| ≤ f` for every persona. For a
/// persona on the far side of the move the distance first shrinks, so its cap
/// is `(f + 2|δ_base − δ_i|)/|c|`; otherwise it is `f/|c|`.
pub fn apply_persona_floor(final_gap: f64, base: f64, personas: &[f64], f: f64) -> f64 {
    if f == 0.0 {
        return final_gap;
    }
    let c = final_gap - base;
    if c == 0.0 {
        return final_gap;
    }
    let t = personas
        .iter()
        .map(|&p| {
            let d = base - p;
            if d * c < 0.0 {
                (f + 2.0 * d.abs()) / c.abs()
            } else {
                f / c.abs()
            }
        })
        .fold(1.0f64, f64::min);
    if t >= 1.0 {
        final_gap
    } else {
        base + t * c
    }
}
