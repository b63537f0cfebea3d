//! The per-scenario correction pipeline.
//!
//! Each scenario draws its `2·k_half` perturbations from the stream keyed by
//! `(master_seed, "ptis", scenario_id)`, so results never depend on scenario
//! order or on how work is spread over threads.

use rayon::prelude::*;

use crate::decide::p_spare;
use crate::gate::{apply_persona_floor, dual_pass, ess_blend_weight, final_gap};
use crate::model::{Attribute, ControllerConfig, CorrectionTrace, PanelGapRecord, PassSummary};
use crate::panel::symmetrise;
use crate::ptis::{PassInputs, PtisError};
use crate::rng;
use crate::shrinkage::{consensus, within_variance};

/// Applies the full correction to symmetrised gaps.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
}

impl Controller {
    /// `cfg` is expected to have passed [`crate::model::validate_config`].
    pub fn new(cfg: ControllerConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// Runs the pipeline on already-symmetrised gaps.
    pub fn correct_gaps(
        &self,
        scenario_id: &str,
        attribute: Attribute,
        base: f64,
        personas: &[f64],
    ) -> Result<CorrectionTrace, PtisError> {
        let cfg = &self.cfg;
        let consensus = consensus(personas);
        let inputs = PassInputs {
            base,
            consensus,
            personas,
        };
        let mut stream = rng::stream(cfg.master_seed, &["ptis", scenario_id]);
        let dp = dual_pass(&inputs, cfg, &mut stream)?;
        let correction = dp.correction();
        let blended = final_gap(base, consensus, correction, &dp.pass1, &dp.pass2, cfg);
        let final_gap = apply_persona_floor(blended, base, personas, cfg.persona_floor_f);
        let ess_blend = if cfg.ess_anchor_blend {
            ess_blend_weight(&dp.pass1, &dp.pass2, cfg.ess_threshold_rho)
        } else {
            1.0
        };
        let summary = |p: &crate::ptis::IsPassResult| PassSummary {
            delta_ptis: p.delta_ptis,
            ess_norm: p.ess_norm,
            guard_triggered: p.guard_triggered,
        };
        Ok(CorrectionTrace {
            scenario_id: scenario_id.to_string(),
            attribute,
            symmetrised_base_gap: base,
            symmetrised_persona_gaps: personas.to_vec(),
            consensus,
            within_panel_variance: within_variance(personas),
            pass_outputs: [summary(&dp.pass1), summary(&dp.pass2)],
            inter_pass_gap_sq: dp.inter_pass_gap_sq,
            gate_weight: dp.gate_weight,
            correction,
            max_abs_perturbation: dp.max_abs_perturbation(),
            ess_blend,
            final_gap,
            p_spare: p_spare(final_gap, attribute, cfg),
            t_logit: cfg.t_logit,
        })
    }

    /// Symmetrises a record and corrects it.
    pub fn correct(&self, record: &PanelGapRecord) -> Result<CorrectionTrace, PtisError> {
        let (base, personas) = symmetrise(record, self.cfg.debias_enabled);
        self.correct_gaps(&record.scenario_id, record.attribute, base, &personas)
    }

    /// Corrects every record in parallel; output order matches input order.
    pub fn correct_all(&self, records: &[PanelGapRecord]) -> Result<Vec<CorrectionTrace>, PtisError> {
        records.par_iter().map(|r| self.correct(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PersonaGap;

    fn record(id: &str, base: f64, personas: &[f64]) -> PanelGapRecord {
        PanelGapRecord {
            scenario_id: id.into(),
            country: "USA".into(),
            attribute: Attribute::SocialValue,
            delta_base_ab: base,
            delta_base_ba: -base,
            persona_gaps: personas
                .iter()
                .enumerate()
                .map(|(i, &g)| PersonaGap {
                    persona_id: format!("p{i}"),
                    delta_ab: g,
                    delta_ba: -g,
                })
                .collect(),
        }
    }

    #[test]
    fn trace_is_internally_consistent() {
        let ctl = Controller::new(ControllerConfig::default());
        let t = ctl.correct(&record("s1", 0.1, &[0.6, 0.9, 0.3, 1.2])).unwrap();
        assert_eq!(t.symmetrised_base_gap, 0.1);
        assert!((t.consensus - 0.75).abs() < 1e-15);
        assert_eq!(t.gate_weight, (-t.inter_pass_gap_sq / 0.04).exp());
        assert!(t.correction.abs() <= t.max_abs_perturbation);
        let expected = t.ess_blend * t.consensus + (1.0 - t.ess_blend) * t.symmetrised_base_gap + t.correction;
        assert_eq!(t.final_gap, expected);
        assert_eq!(t.p_spare, p_spare(t.final_gap, Attribute::SocialValue, ctl.config()));
        assert_eq!(t.t_logit, 3.0);
    }

    #[test]
    fn single_persona_has_no_variance() {
        let ctl = Controller::new(ControllerConfig::default());
        let t = ctl.correct(&record("s1", 0.1, &[0.6])).unwrap();
        assert_eq!(t.within_panel_variance, None);
    }

    #[test]
    fn parallel_matches_sequential_and_order() {
        let ctl = Controller::new(ControllerConfig::default());
        let recs: Vec<_> = (0..50)
            .map(|i| record(&format!("s{i}"), 0.01 * i as f64, &[0.5, -0.2, 0.3]))
            .collect();
        let par = ctl.correct_all(&recs).unwrap();
        let seq: Vec<_> = recs.iter().map(|r| ctl.correct(r).unwrap()).collect();
        assert_eq!(par, seq);
        let mut rev = recs.clone();
        rev.reverse();
        let mut back = ctl.correct_all(&rev).unwrap();
        back.reverse();
        assert_eq!(back, seq);
    }

    #[test]
    fn trace_round_trips_through_json() {
        let ctl = Controller::new(ControllerConfig::default());
        let t = ctl.correct(&record("s1", 0.1, &[0.6, 0.9])).unwrap();
        let back: CorrectionTrace = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
