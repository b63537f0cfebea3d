//! Shared domain types and the controller configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One of the six moral dimensions a scenario isolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Species,
    Gender,
    Age,
    Fitness,
    SocialValue,
    Utilitarianism,
}

impl Attribute {
    /// All attributes in canonical column order.
    pub const ALL: [Attribute; 6] = [
        Attribute::Species,
        Attribute::Gender,
        Attribute::Age,
        Attribute::Fitness,
        Attribute::SocialValue,
        Attribute::Utilitarianism,
    ];

    /// Position in [`Attribute::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Species => "Species",
            Attribute::Gender => "Gender",
            Attribute::Age => "Age",
            Attribute::Fitness => "Fitness",
            Attribute::SocialValue => "SocialValue",
            Attribute::Utilitarianism => "Utilitarianism",
        }
    }

    /// Default per-attribute decision temperature.
    pub fn default_temperature(self) -> f64 {
        match self {
            Attribute::Species => 4.0,
            Attribute::Gender => 3.5,
            _ => 1.5,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown attribute `{s}`"))
    }
}

/// A persona's gaps under the two token orderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaGap {
    pub persona_id: String,
    pub delta_ab: f64,
    pub delta_ba: f64,
}

/// One scenario's base and per-persona decision gaps under both orderings.
///
/// This is the only model-facing input of the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelGapRecord {
    pub scenario_id: String,
    pub country: String,
    pub attribute: Attribute,
    pub delta_base_ab: f64,
    pub delta_base_ba: f64,
    pub persona_gaps: Vec<PersonaGap>,
}

/// Why a [`PanelGapRecord`] was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("scenario `{0}` has no persona gaps")]
    EmptyPanel(String),
    #[error("scenario `{scenario_id}`: non-finite value in {field}")]
    NonFinite { scenario_id: String, field: String },
    #[error("scenario `{scenario_id}`: duplicate persona id `{persona_id}`")]
    DuplicatePersona {
        scenario_id: String,
        persona_id: String,
    },
}

impl PanelGapRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        let non_finite = |field: String| RecordError::NonFinite {
            scenario_id: self.scenario_id.clone(),
            field,
        };
        if self.persona_gaps.is_empty() {
            return Err(RecordError::EmptyPanel(self.scenario_id.clone()));
        }
        if !self.delta_base_ab.is_finite() {
            return Err(non_finite("base.ab".into()));
        }
        if !self.delta_base_ba.is_finite() {
            return Err(non_finite("base.ba".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.persona_gaps {
            if !p.delta_ab.is_finite() {
                return Err(non_finite(format!("personas[{}].ab", p.persona_id)));
            }
            if !p.delta_ba.is_finite() {
                return Err(non_finite(format!("personas[{}].ba", p.persona_id)));
            }
            if !seen.insert(p.persona_id.as_str()) {
                return Err(RecordError::DuplicatePersona {
                    scenario_id: self.scenario_id.clone(),
                    persona_id: p.persona_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// How the final gap is turned into a sparing probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperatureMode {
    /// Divide by the attribute's `t_cat` entry.
    #[default]
    PerAttributeTemp,
    /// Divide by `t_dec` for every attribute.
    UniformTemp,
}

impl FromStr for TemperatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-attribute-temp" => Ok(TemperatureMode::PerAttributeTemp),
            "uniform-temp" => Ok(TemperatureMode::UniformTemp),
            other => Err(format!("unknown temperature mode `{other}`")),
        }
    }
}

/// Configuration failure. The message names the first violated constraint.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Every controller hyperparameter. Immutable for the duration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub n_personas: usize,
    pub k_half: usize,
    pub gate_scale_s: f64,
    pub proposal_sigma: f64,
    pub lambda_coop: f64,
    pub is_temperature_eta: f64,
    pub ess_threshold_rho: f64,
    pub pt_alpha: f64,
    pub pt_kappa: f64,
    pub t_dec: f64,
    pub t_cat: BTreeMap<Attribute, f64>,
    /// Carried through to traces; no stage of the pipeline reads it.
    pub t_logit: f64,
    /// `0.0` disables the floor.
    pub persona_floor_f: f64,
    pub debias_enabled: bool,
    pub gate_enabled: bool,
    /// When off, the final gap is `consensus + correction` regardless of ESS.
    pub ess_anchor_blend: bool,
    pub temperature_mode: TemperatureMode,
    pub master_seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            n_personas: 4,
            k_half: 64,
            gate_scale_s: 0.04,
            proposal_sigma: 0.3,
            lambda_coop: 0.7,
            is_temperature_eta: 0.5,
            ess_threshold_rho: 0.1,
            pt_alpha: 0.88,
            pt_kappa: 2.25,
            t_dec: 0.5,
            t_cat: Attribute::ALL
                .into_iter()
                .map(|a| (a, a.default_temperature()))
                .collect(),
            t_logit: 3.0,
            persona_floor_f: 0.0,
            debias_enabled: true,
            gate_enabled: true,
            ess_anchor_blend: true,
            temperature_mode: TemperatureMode::PerAttributeTemp,
            master_seed: 42,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be > 0")))
    }
}

/// Checks every range constraint and returns the config unchanged.
pub fn validate_config(cfg: ControllerConfig) -> Result<ControllerConfig, ConfigError> {
    let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
    if cfg.n_personas == 0 {
        return invalid("n_personas must be >= 1");
    }
    if cfg.k_half == 0 {
        return invalid("k_half must be >= 1");
    }
    positive("gate_scale_s", cfg.gate_scale_s)?;
    positive("proposal_sigma", cfg.proposal_sigma)?;
    if !(0.0..=1.0).contains(&cfg.lambda_coop) {
        return invalid("lambda_coop must be in [0, 1]");
    }
    positive("is_temperature_eta", cfg.is_temperature_eta)?;
    if !(cfg.ess_threshold_rho > 0.0 && cfg.ess_threshold_rho <= 1.0) {
        return invalid("ess_threshold_rho must be in (0, 1]");
    }
    if !(cfg.pt_alpha > 0.0 && cfg.pt_alpha <= 1.0) {
        return invalid("pt_alpha must be in (0, 1]");
    }
    if !(cfg.pt_kappa.is_finite() && cfg.pt_kappa >= 1.0) {
        return invalid("pt_kappa must be >= 1");
    }
    positive("t_dec", cfg.t_dec)?;
    for a in Attribute::ALL {
        match cfg.t_cat.get(&a) {
            None => return Err(ConfigError::Invalid(format!("t_cat is missing {a}"))),
            Some(&t) => positive(&format!("t_cat[{a}]"), t)?,
        }
    }
    positive("t_logit", cfg.t_logit)?;
    if !(cfg.persona_floor_f.is_finite() && cfg.persona_floor_f >= 0.0) {
        return invalid("persona_floor_f must be >= 0");
    }
    Ok(cfg)
}

impl ControllerConfig {
    /// Parses and validates a JSON document. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        validate_config(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Decision temperature for `attribute` under the active mode.
    pub fn temperature(&self, attribute: Attribute) -> f64 {
        match self.temperature_mode {
            TemperatureMode::PerAttributeTemp => self.t_cat[&attribute],
            TemperatureMode::UniformTemp => self.t_dec,
        }
    }

    /// SHA-256 of the compact JSON form, hex encoded. Used for provenance.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Per-scenario audit record of one controller invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub scenario_id: String,
    pub attribute: Attribute,
    pub symmetrised_base_gap: f64,
    pub symmetrised_persona_gaps: Vec<f64>,
    pub consensus: f64,
    /// Sample variance of the persona gaps; absent for single-persona panels.
    pub within_panel_variance: Option<f64>,
    pub pass_outputs: [PassSummary; 2],
    pub inter_pass_gap_sq: f64,
    pub gate_weight: f64,
    pub correction: f64,
    /// Largest |perturbation| drawn for this scenario across both passes.
    pub max_abs_perturbation: f64,
    pub ess_blend: f64,
    pub final_gap: f64,
    pub p_spare: f64,
    pub t_logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub delta_ptis: f64,
    pub ess_norm: f64,
    pub guard_triggered: bool,
}

/// Six-dimensional preference vector on the [0, 1] scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AmceRepr", into = "AmceRepr")]
pub struct AmceVector {
    values: [f64; 6],
    n_scenarios: [usize; 6],
}

#[derive(Serialize, Deserialize)]
struct AmceRepr {
    values: BTreeMap<Attribute, f64>,
    #[serde(default)]
    n_scenarios: BTreeMap<Attribute, usize>,
}

impl TryFrom<AmceRepr> for AmceVector {
    type Error = String;

    fn try_from(r: AmceRepr) -> Result<Self, Self::Error> {
        let mut values = [0.0; 6];
        let mut counts = [0; 6];
        for a in Attribute::ALL {
            values[a.index()] = *r
                .values
                .get(&a)
                .ok_or_else(|| format!("AMCE missing attribute {a}"))?;
            counts[a.index()] = r.n_scenarios.get(&a).copied().unwrap_or(0);
        }
        AmceVector::with_counts(values, counts)
    }
}

impl From<AmceVector> for AmceRepr {
    fn from(v: AmceVector) -> Self {
        AmceRepr {
            values: Attribute::ALL.into_iter().map(|a| (a, v.get(a))).collect(),
            n_scenarios: Attribute::ALL
                .into_iter()
                .map(|a| (a, v.n_scenarios[a.index()]))
                .collect(),
        }
    }
}

impl AmceVector {
    /// Builds a vector from values in [`Attribute::ALL`] order.
    pub fn new(values: [f64; 6]) -> Result<Self, String> {
        Self::with_counts(values, [0; 6])
    }

    pub fn with_counts(values: [f64; 6], n_scenarios: [usize; 6]) -> Result<Self, String> {
        for (a, v) in Attribute::ALL.iter().zip(values) {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(format!("AMCE value for {a} must be in [0, 1], got {v}"));
            }
        }
        Ok(Self {
            values,
            n_scenarios,
        })
    }

    /// A constant vector.
    pub fn splat(v: f64) -> Result<Self, String> {
        Self::new([v; 6])
    }

    pub fn get(&self, a: Attribute) -> f64 {
        self.values[a.index()]
    }

    pub fn n_scenarios(&self, a: Attribute) -> usize {
        self.n_scenarios[a.index()]
    }

    pub fn values(&self) -> &[f64; 6] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = validate_config(ControllerConfig::default()).unwrap();
        assert_eq!(cfg.n_personas, 4);
        assert_eq!(cfg.k_half, 64);
        assert_eq!(cfg.gate_scale_s, 0.04);
        assert_eq!(cfg.proposal_sigma, 0.3);
        assert_eq!(cfg.lambda_coop, 0.7);
        assert_eq!(cfg.is_temperature_eta, 0.5);
        assert_eq!(cfg.ess_threshold_rho, 0.1);
        assert_eq!(cfg.pt_alpha, 0.88);
        assert_eq!(cfg.pt_kappa, 2.25);
        assert_eq!(cfg.t_dec, 0.5);
        assert_eq!(cfg.t_logit, 3.0);
        assert_eq!(cfg.t_cat[&Attribute::Species], 4.0);
        assert_eq!(cfg.t_cat[&Attribute::Gender], 3.5);
        for a in [
            Attribute::Age,
            Attribute::Fitness,
            Attribute::SocialValue,
            Attribute::Utilitarianism,
        ] {
            assert_eq!(cfg.t_cat[&a], 1.5);
        }
        assert_eq!(cfg.persona_floor_f, 0.0);
        assert!(cfg.debias_enabled && cfg.gate_enabled);
    }

    #[test]
    fn zero_sigma_rejected() {
        let cfg = ControllerConfig {
            proposal_sigma: 0.0,
            ..Default::default()
        };
        let err = validate_config(cfg).unwrap_err();
        assert_eq!(err.to_string(), "proposal_sigma must be > 0");
    }

    #[test]
    fn lambda_endpoint_accepted() {
        let cfg = ControllerConfig {
            lambda_coop: 1.0,
            ..Default::default()
        };
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn missing_t_cat_entry_rejected() {
        let mut cfg = ControllerConfig::default();
        cfg.t_cat.remove(&Attribute::Age);
        let err = validate_config(cfg).unwrap_err().to_string();
        assert!(err.contains("Age"), "{err}");
    }

    #[test]
    fn unknown_json_key_rejected() {
        let err = ControllerConfig::from_json(r#"{"k_haf": 32}"#).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ControllerConfig::from_json(r#"{"k_half": 32, "gate_enabled": false}"#).unwrap();
        assert_eq!(cfg.k_half, 32);
        assert!(!cfg.gate_enabled);
        assert_eq!(cfg.gate_scale_s, 0.04);
    }

    #[test]
    fn record_validation() {
        let mut rec = PanelGapRecord {
            scenario_id: "s".into(),
            country: "USA".into(),
            attribute: Attribute::Age,
            delta_base_ab: 0.0,
            delta_base_ba: 0.0,
            persona_gaps: vec![],
        };
        assert!(matches!(rec.validate(), Err(RecordError::EmptyPanel(_))));
        rec.persona_gaps = vec![
            PersonaGap {
                persona_id: "a".into(),
                delta_ab: 1.0,
                delta_ba: 0.0,
            },
            PersonaGap {
                persona_id: "a".into(),
                delta_ab: 1.0,
                delta_ba: 0.0,
            },
        ];
        assert!(matches!(
            rec.validate(),
            Err(RecordError::DuplicatePersona { .. })
        ));
        rec.persona_gaps[1].persona_id = "b".into();
        rec.persona_gaps[1].delta_ba = f64::NAN;
        assert!(matches!(rec.validate(), Err(RecordError::NonFinite { .. })));
    }

    #[test]
    fn amce_rejects_out_of_range() {
        assert!(AmceVector::new([0.5, 0.5, 0.5, 0.5, 0.5, 1.2]).is_err());
        assert!(AmceVector::new([0.5, 0.5, f64::NAN, 0.5, 0.5, 0.5]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_config() -> impl Strategy<Value = ControllerConfig> {
            (
                1usize..10,
                1usize..256,
                1e-3f64..1.0,
                1e-3f64..2.0,
                0.0f64..=1.0,
                1e-3f64..5.0,
                1e-3f64..=1.0,
                1e-3f64..=1.0,
                1.0f64..5.0,
                (
                    proptest::array::uniform6(0.1f64..10.0),
                    0.0f64..3.0,
                    any::<(bool, bool, bool)>(),
                    any::<u64>(),
                ),
            )
                .prop_map(
                    |(n, k, s, sigma, lam, eta, rho, alpha, kappa, (tc, floor, flags, seed))| {
                        ControllerConfig {
                            n_personas: n,
                            k_half: k,
                            gate_scale_s: s,
                            proposal_sigma: sigma,
                            lambda_coop: lam,
                            is_temperature_eta: eta,
                            ess_threshold_rho: rho,
                            pt_alpha: alpha,
                            pt_kappa: kappa,
                            t_cat: Attribute::ALL.into_iter().zip(tc).collect(),
                            persona_floor_f: floor,
                            debias_enabled: flags.0,
                            gate_enabled: flags.1,
                            ess_anchor_blend: flags.2,
                            master_seed: seed,
                            ..Default::default()
                        }
                    },
                )
        }

        proptest! {
            #[test]
            fn json_roundtrip_is_identity(cfg in arb_config()) {
                let cfg = validate_config(cfg).unwrap();
                let back = ControllerConfig::from_json(&cfg.to_json()).unwrap();
                prop_assert_eq!(&back, &cfg);
                for a in Attribute::ALL {
                    prop_assert!(back.t_cat.contains_key(&a));
                }
            }
        }
    }
}
