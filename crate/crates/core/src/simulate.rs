//! Synthetic populations with known ground truth and the experiment harness
//! that runs the controller, its ablations and the baselines against them.
//!
//! A population fixes, per attribute, a human AMCE `h_a`, a base-model bias and
//! a persona bias. Each scenario gets a target probability near `h_a` (drawn in
//! antithetic pairs so the scenario mean is exactly `h_a` for even counts) and
//! a population gap `δ_h = T_a·logit(target)`. Gaps are then served by
//! [`MockProvider`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::Controller;
use crate::decide::{logistic, logit, p_spare};
use crate::eval::{amce, mis, CountryResult, EvalError};
use crate::model::{
    validate_config, AmceVector, Attribute, ConfigError, ControllerConfig, CorrectionTrace,
    PanelGapRecord,
};
use crate::panel::{acquire_record, symmetrise, MockProvider, ProviderError};
use crate::ptis::PtisError;
use crate::rng;
use crate::shrinkage::consensus;
use crate::stats::{mean, population_std};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid population spec: {0}")]
    Spec(String),
    #[error("population spec parse error: {0}")]
    SpecParse(#[from] serde_json::Error),
    #[error("population spec io error: {0}")]
    SpecIo(#[from] std::io::Error),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Ptis(#[from] PtisError),
    #[error("{0}")]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Empty(String),
}

fn default_scenarios() -> usize {
    50
}

fn default_spread() -> f64 {
    0.1
}

/// JSON description of one synthetic country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub country_id: String,
    /// Ground-truth AMCE per attribute, strictly inside (0, 1).
    pub human_amce: BTreeMap<Attribute, f64>,
    /// Additive base-model miscalibration in logits; missing entries are 0.
    #[serde(default)]
    pub base_bias: BTreeMap<Attribute, f64>,
    /// Shared persona miscalibration in logits; missing entries are 0.
    #[serde(default)]
    pub persona_bias: BTreeMap<Attribute, f64>,
    /// Persona noise scale `τ`.
    pub tau: f64,
    #[serde(default)]
    pub positional_bias_scale: f64,
    #[serde(default = "default_scenarios")]
    pub n_scenarios_per_attribute: usize,
    /// Half-width of the target-probability spread around `h_a`.
    #[serde(default = "default_spread")]
    pub target_spread: f64,
    /// Persona means alternate `+g, −g` by persona number when non-zero.
    #[serde(default)]
    pub contested_offset: f64,
    /// Temperatures linking `δ_h` to target probabilities; defaults to the
    /// controller's per-attribute defaults.
    #[serde(default)]
    pub temperatures: Option<BTreeMap<Attribute, f64>>,
}

impl PopulationSpec {
    /// An unbiased, noise-free country with the given human AMCE.
    pub fn unbiased(country_id: &str, human: [f64; 6]) -> Self {
        PopulationSpec {
            country_id: country_id.to_string(),
            human_amce: Attribute::ALL.into_iter().zip(human).collect(),
            base_bias: BTreeMap::new(),
            persona_bias: BTreeMap::new(),
            tau: 0.0,
            positional_bias_scale: 0.0,
            n_scenarios_per_attribute: default_scenarios(),
            target_spread: default_spread(),
            contested_offset: 0.0,
            temperatures: None,
        }
    }

    /// Parses one spec object or an array of them.
    pub fn parse_many(text: &str) -> Result<Vec<PopulationSpec>, SimError> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        Ok(if v.is_array() {
            serde_json::from_value(v)?
        } else {
            vec![serde_json::from_value(v)?]
        })
    }

    pub fn load_many(path: impl AsRef<Path>) -> Result<Vec<PopulationSpec>, SimError> {
        Self::parse_many(&std::fs::read_to_string(path)?)
    }
}

/// One generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub attribute: Attribute,
    pub target_p: f64,
    /// Population gap `δ_h`.
    pub delta_h: f64,
}

/// A generated country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub country_id: String,
    pub human_amce: AmceVector,
    pub base_bias: BTreeMap<Attribute, f64>,
    pub persona_bias: BTreeMap<Attribute, f64>,
    pub tau: f64,
    pub positional_bias_scale: f64,
    pub n_scenarios_per_attribute: usize,
    pub target_spread: f64,
    pub contested_offset: f64,
    pub temperatures: BTreeMap<Attribute, f64>,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

impl SyntheticPopulation {
    pub fn bias(&self, a: Attribute) -> f64 {
        self.base_bias.get(&a).copied().unwrap_or(0.0)
    }

    pub fn persona_bias(&self, a: Attribute) -> f64 {
        self.persona_bias.get(&a).copied().unwrap_or(0.0)
    }

    /// A disjoint pool of scenarios from the same generator.
    pub fn held_out(&self, per_attribute: usize) -> SyntheticPopulation {
        let mut out = self.clone();
        out.scenarios = make_scenarios(self, per_attribute, "heldout");
        out.n_scenarios_per_attribute = per_attribute;
        out
    }
}

/// Persona ids of an `n`-member panel.
pub fn persona_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("persona-{i}")).collect()
}

fn make_scenarios(pop: &SyntheticPopulation, per_attribute: usize, pool: &str) -> Vec<Scenario> {
    let mut out = Vec::with_capacity(6 * per_attribute);
    for a in Attribute::ALL {
        let h = pop.human_amce.get(a);
        let half_width = pop.target_spread.min(0.9 * h.min(1.0 - h));
        let temp = pop.temperatures[&a];
        for j in 0..per_attribute {
            let pair = (j / 2).to_string();
            let u: f64 = if half_width == 0.0 {
                0.0
            } else {
                let mut s = rng::stream(pop.seed, &["target", pool, &pop.country_id, a.name(), &pair]);
                half_width * (2.0 * s.random::<f64>() - 1.0)
            };
            let target_p = if j % 2 == 0 { h + u } else { h - u };
            let delta_h = if target_p == 0.5 { 0.0 } else { temp * logit(target_p) };
            let id = if pool == "main" {
                format!("{}-{}-{:04}", pop.country_id, a.name(), j)
            } else {
                format!("{}-{}-{}-{:04}", pop.country_id, pool, a.name(), j)
            };
            out.push(Scenario {
                id,
                attribute: a,
                target_p,
                delta_h,
            });
        }
    }
    out
}

fn finite_map(name: &str, m: &BTreeMap<Attribute, f64>) -> Result<(), SimError> {
    for (a, v) in m {
        if !v.is_finite() {
            return Err(SimError::Spec(format!("{name}[{a}] must be finite")));
        }
    }
    Ok(())
}

/// Deterministically builds a population from `spec` under `seed`.
pub fn generate_population(seed: u64, spec: &PopulationSpec) -> Result<SyntheticPopulation, SimError> {
    let mut human = [0.0; 6];
    for a in Attribute::ALL {
        let h = *spec
            .human_amce
            .get(&a)
            .ok_or_else(|| SimError::Spec(format!("human_amce is missing {a}")))?;
        if !(h > 0.0 && h < 1.0) {
            return Err(SimError::Spec(format!(
                "human_amce[{a}] must be strictly inside (0, 1), got {h}"
            )));
        }
        human[a.index()] = h;
    }
    finite_map("base_bias", &spec.base_bias)?;
    finite_map("persona_bias", &spec.persona_bias)?;
    if !(spec.tau.is_finite() && spec.tau >= 0.0) {
        return Err(SimError::Spec("tau must be >= 0".into()));
    }
    if !(spec.positional_bias_scale.is_finite() && spec.positional_bias_scale >= 0.0) {
        return Err(SimError::Spec("positional_bias_scale must be >= 0".into()));
    }
    if spec.n_scenarios_per_attribute == 0 {
        return Err(SimError::Spec("n_scenarios_per_attribute must be >= 1".into()));
    }
    if !(spec.target_spread.is_finite() && spec.target_spread >= 0.0) {
        return Err(SimError::Spec("target_spread must be >= 0".into()));
    }
    if !spec.contested_offset.is_finite() {
        return Err(SimError::Spec("contested_offset must be finite".into()));
    }
    let temperatures: BTreeMap<Attribute, f64> = match &spec.temperatures {
        None => Attribute::ALL
            .into_iter()
            .map(|a| (a, a.default_temperature()))
            .collect(),
        Some(t) => {
            for a in Attribute::ALL {
                match t.get(&a) {
                    Some(&v) if v.is_finite() && v > 0.0 => {}
                    _ => return Err(SimError::Spec(format!("temperatures[{a}] must be > 0"))),
                }
            }
            t.clone()
        }
    };
    let mut pop = SyntheticPopulation {
        country_id: spec.country_id.clone(),
        human_amce: AmceVector::new(human).map_err(SimError::Spec)?,
        base_bias: spec.base_bias.clone(),
        persona_bias: spec.persona_bias.clone(),
        tau: spec.tau,
        positional_bias_scale: spec.positional_bias_scale,
        n_scenarios_per_attribute: spec.n_scenarios_per_attribute,
        target_spread: spec.target_spread,
        contested_offset: spec.contested_offset,
        temperatures,
        seed,
        scenarios: Vec::new(),
    };
    pop.scenarios = make_scenarios(&pop, spec.n_scenarios_per_attribute, "main");
    Ok(pop)
}

/// A small built-in panel of countries with varied bias and noise.
pub fn builtin_specs() -> Vec<PopulationSpec> {
    let mk = |id: &str, human: [f64; 6], bias: [f64; 6], pbias: [f64; 6], tau: f64| PopulationSpec {
        country_id: id.to_string(),
        human_amce: Attribute::ALL.into_iter().zip(human).collect(),
        base_bias: Attribute::ALL.into_iter().zip(bias).collect(),
        persona_bias: Attribute::ALL.into_iter().zip(pbias).collect(),
        tau,
        positional_bias_scale: 0.3,
        n_scenarios_per_attribute: 50,
        target_spread: 0.1,
        contested_offset: 0.0,
        temperatures: None,
    };
    vec![
        mk(
            "AAA",
            [0.78, 0.58, 0.72, 0.62, 0.68, 0.75],
            [1.2, 0.8, 0.6, -0.4, 0.5, 0.7],
            [0.2, 0.1, 0.1, 0.0, -0.1, 0.1],
            0.6,
        ),
        mk(
            "BBB",
            [0.70, 0.54, 0.60, 0.58, 0.64, 0.70],
            [1.6, 1.0, 0.9, 0.3, 0.4, 0.2],
            [0.4, 0.3, 0.2, 0.1, 0.0, -0.1],
            0.9,
        ),
        mk(
            "CCC",
            [0.82, 0.52, 0.66, 0.56, 0.60, 0.68],
            [-0.8, 0.6, 0.8, 0.6, 0.8, 0.9],
            [-0.1, 0.2, 0.1, 0.2, 0.1, 0.1],
            0.4,
        ),
        mk(
            "DDD",
            [0.74, 0.60, 0.58, 0.64, 0.70, 0.62],
            [0.9, -0.5, 1.1, 0.2, -0.3, 1.0],
            [0.3, -0.2, 0.4, 0.1, 0.0, 0.2],
            1.2,
        ),
        mk(
            "EEE",
            [0.66, 0.56, 0.70, 0.60, 0.62, 0.72],
            [0.4, 0.4, 0.4, 0.4, 0.4, 0.4],
            [0.0; 6],
            0.8,
        ),
    ]
}

/// A contested country: odd-numbered personas sit `+1.5` logits from the
/// population preference and even-numbered ones `−1.5`, with little noise
/// otherwise, so the panel is bimodal.
pub fn contested_spec() -> PopulationSpec {
    PopulationSpec {
        base_bias: Attribute::ALL.into_iter().map(|a| (a, 0.6)).collect(),
        tau: 0.3,
        positional_bias_scale: 0.3,
        contested_offset: 1.5,
        ..PopulationSpec::unbiased("CON", [0.75, 0.55, 0.7, 0.6, 0.65, 0.7])
    }
}

pub fn builtin_populations(seed: u64) -> Vec<SyntheticPopulation> {
    builtin_specs()
        .iter()
        .map(|s| generate_population(seed, s).expect("built-in specs are valid"))
        .collect()
}

/// Every pipeline variant the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Disca,
    DiscaUngated,
    NoPersona,
    NoIsConsensus,
    AlwaysOnPtis,
    NoDebias,
    FixedOffset,
    TempScalingOracle,
    MarginScalingOracle,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Vanilla,
        Method::Disca,
        Method::DiscaUngated,
        Method::NoPersona,
        Method::NoIsConsensus,
        Method::AlwaysOnPtis,
        Method::NoDebias,
        Method::FixedOffset,
        Method::TempScalingOracle,
        Method::MarginScalingOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Disca => "disca",
            Method::DiscaUngated => "disca_ungated",
            Method::NoPersona => "no_persona",
            Method::NoIsConsensus => "no_is_consensus",
            Method::AlwaysOnPtis => "always_on_ptis",
            Method::NoDebias => "no_debias",
            Method::FixedOffset => "fixed_offset",
            Method::TempScalingOracle => "temp_scaling_oracle",
            Method::MarginScalingOracle => "margin_scaling_oracle",
        }
    }

    /// The controller configuration this variant runs under, if it uses the
    /// controller at all.
    fn controller_config(self, cfg: &ControllerConfig) -> Option<ControllerConfig> {
        match self {
            Method::Disca | Method::NoPersona => Some(cfg.clone()),
            Method::DiscaUngated | Method::AlwaysOnPtis => Some(ControllerConfig {
                gate_enabled: false,
                ..cfg.clone()
            }),
            Method::NoDebias => Some(ControllerConfig {
                debias_enabled: false,
                ..cfg.clone()
            }),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::UnknownMethod(s.to_string()))
    }
}

/// Search grids of the fitted baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleGrid {
    pub temp_min: f64,
    pub temp_max: f64,
    /// Grid points per doubling of the temperature; the grid contains 1.
    pub temp_per_octave: u32,
    pub margin_min: f64,
    pub margin_max: f64,
    /// The margin grid is the multiples of this step in range, so it contains 0.
    pub margin_step: f64,
    /// Size of the held-out pool per attribute for the fixed-offset fit.
    pub held_out_per_attribute: usize,
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid {
            temp_min: 0.25,
            temp_max: 8.0,
            temp_per_octave: 8,
            margin_min: -3.0,
            margin_max: 3.0,
            margin_step: 0.05,
            held_out_per_attribute: 34,
        }
    }
}

impl OracleGrid {
    pub fn temperatures(&self) -> Vec<f64> {
        let k = f64::from(self.temp_per_octave);
        let lo = (self.temp_min.log2() * k - 1e-9).ceil() as i64;
        let hi = (self.temp_max.log2() * k + 1e-9).floor() as i64;
        (lo..=hi).map(|i| (i as f64 / k).exp2()).collect()
    }

    pub fn margins(&self) -> Vec<f64> {
        let lo = (self.margin_min / self.margin_step - 1e-9).ceil() as i64;
        let hi = (self.margin_max / self.margin_step + 1e-9).floor() as i64;
        (lo..=hi).map(|i| i as f64 * self.margin_step).collect()
    }
}

/// Per-run options beyond the controller configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub grid: OracleGrid,
    /// Standard deviation of Gaussian noise added to every raw gap.
    pub noise_sigma: f64,
}

/// Outcome of one (population, method) run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub result: CountryResult,
    /// Controller traces, in scenario order; empty for baselines.
    pub traces: Vec<CorrectionTrace>,
    /// Fitted scalar of the offset, temperature and margin baselines.
    pub fitted: Option<f64>,
    /// Mean over scenarios of `(δ̄ − δ_h)²`.
    pub consensus_error_sq: f64,
    pub mean_abs_correction: f64,
    pub mean_gate_weight: f64,
}

fn add_noise(pop: &SyntheticPopulation, records: &mut [PanelGapRecord], sigma: f64) {
    if sigma == 0.0 {
        return;
    }
    let z = |sid: &str, who: &str, ord: &str| -> f64 {
        StandardNormal.sample(&mut rng::stream(pop.seed, &["noise", sid, who, ord]))
    };
    for r in records.iter_mut() {
        let sid = r.scenario_id.clone();
        r.delta_base_ab += sigma * z(&sid, "base", "ab");
        r.delta_base_ba += sigma * z(&sid, "base", "ba");
        for p in r.persona_gaps.iter_mut() {
            p.delta_ab += sigma * z(&sid, &p.persona_id, "ab");
            p.delta_ba += sigma * z(&sid, &p.persona_id, "ba");
        }
    }
}

/// Acquires every scenario's panel from the population's mock provider.
pub fn acquire_population(
    pop: &SyntheticPopulation,
    n_personas: usize,
    noise_sigma: f64,
) -> Result<Vec<PanelGapRecord>, SimError> {
    let provider = MockProvider::new(pop.seed, pop);
    let ids = persona_ids(n_personas);
    let mut records = pop
        .scenarios
        .par_iter()
        .map(|s| acquire_record(&provider, &s.id, &pop.country_id, s.attribute, &ids))
        .collect::<Result<Vec<_>, _>>()?;
    add_noise(pop, &mut records, noise_sigma);
    Ok(records)
}

fn probs_for(gaps: &[(Attribute, f64)], cfg: &ControllerConfig) -> Vec<(Attribute, f64)> {
    gaps.iter().map(|&(a, g)| (a, p_spare(g, a, cfg))).collect()
}

fn fit_margin(
    bases: &[(Attribute, f64)],
    target: &AmceVector,
    cfg: &ControllerConfig,
    grid: &OracleGrid,
) -> Result<(f64, f64), SimError> {
    let mut best = (0.0, f64::INFINITY);
    for m in grid.margins() {
        let shifted: Vec<_> = bases.iter().map(|&(a, g)| (a, g + m)).collect();
        let e = mis(&amce(&probs_for(&shifted, cfg))?, target);
        if e < best.1 {
            best = (m, e);
        }
    }
    Ok(best)
}

/// Runs one method over every scenario of `pop`.
pub fn run_method_with(
    pop: &SyntheticPopulation,
    method: Method,
    cfg: &ControllerConfig,
    opts: &RunOptions,
) -> Result<MethodRun, SimError> {
    let cfg = validate_config(cfg.clone())?;
    let records = acquire_population(pop, cfg.n_personas, opts.noise_sigma)?;
    let symmetrised: Vec<(f64, Vec<f64>)> = records
        .iter()
        .map(|r| symmetrise(r, cfg.debias_enabled))
        .collect();
    let consensus_error_sq = mean(
        &symmetrised
            .iter()
            .zip(&pop.scenarios)
            .map(|((_, ps), s)| (consensus(ps) - s.delta_h).powi(2))
            .collect::<Vec<_>>(),
    );
    let bases: Vec<(Attribute, f64)> = records
        .iter()
        .zip(&symmetrised)
        .map(|(r, (b, _))| (r.attribute, *b))
        .collect();

    let mut traces = Vec::new();
    let mut fitted = None;
    let probabilities: Vec<(Attribute, f64)> = match method {
        Method::Vanilla => probs_for(&bases, &cfg),
        Method::NoIsConsensus => {
            let gaps: Vec<_> = records
                .iter()
                .zip(&symmetrised)
                .map(|(r, (_, ps))| (r.attribute, consensus(ps)))
                .collect();
            probs_for(&gaps, &cfg)
        }
        Method::MarginScalingOracle => {
            let (m, _) = fit_margin(&bases, &pop.human_amce, &cfg, &opts.grid)?;
            fitted = Some(m);
            let shifted: Vec<_> = bases.iter().map(|&(a, g)| (a, g + m)).collect();
            probs_for(&shifted, &cfg)
        }
        Method::TempScalingOracle => {
            let mut best = (1.0, f64::INFINITY, Vec::new());
            for c in opts.grid.temperatures() {
                let probs: Vec<_> = bases
                    .iter()
                    .map(|&(a, g)| (a, logistic(g / (cfg.temperature(a) * c))))
                    .collect();
                let e = mis(&amce(&probs)?, &pop.human_amce);
                if e < best.1 {
                    best = (c, e, probs);
                }
            }
            fitted = Some(best.0);
            best.2
        }
        Method::FixedOffset => {
            let pool = pop.held_out(opts.grid.held_out_per_attribute);
            let pool_records = acquire_population(&pool, cfg.n_personas, opts.noise_sigma)?;
            let mut pool_bases = Vec::with_capacity(pool_records.len());
            let mut pool_consensus = Vec::with_capacity(pool_records.len());
            for r in &pool_records {
                let (b, ps) = symmetrise(r, cfg.debias_enabled);
                pool_bases.push((r.attribute, b));
                pool_consensus.push((r.attribute, consensus(&ps)));
            }
            let proxy = amce(&probs_for(&pool_consensus, &cfg))?;
            let (m, _) = fit_margin(&pool_bases, &proxy, &cfg, &opts.grid)?;
            fitted = Some(m);
            let shifted: Vec<_> = bases.iter().map(|&(a, g)| (a, g + m)).collect();
            probs_for(&shifted, &cfg)
        }
        Method::Disca
        | Method::DiscaUngated
        | Method::AlwaysOnPtis
        | Method::NoDebias
        | Method::NoPersona => {
            let ccfg = method.controller_config(&cfg).expect("controller variant");
            let ctl = Controller::new(ccfg.clone());
            let run = |r: &PanelGapRecord| {
                if method == Method::NoPersona {
                    let (b, ps) = symmetrise(r, ccfg.debias_enabled);
                    ctl.correct_gaps(&r.scenario_id, r.attribute, b, &vec![b; ps.len()])
                } else {
                    ctl.correct(r)
                }
            };
            traces = records.par_iter().map(run).collect::<Result<Vec<_>, _>>()?;
            traces.iter().map(|t| (t.attribute, t.p_spare)).collect()
        }
    };

    let result = CountryResult::evaluate(
        &pop.country_id,
        method.name(),
        &probabilities,
        &pop.human_amce,
    )?;
    let (mean_abs_correction, mean_gate_weight) = if traces.is_empty() {
        (0.0, 1.0)
    } else {
        (
            mean(&traces.iter().map(|t| t.correction.abs()).collect::<Vec<_>>()),
            mean(&traces.iter().map(|t| t.gate_weight).collect::<Vec<_>>()),
        )
    };
    Ok(MethodRun {
        method,
        result,
        traces,
        fitted,
        consensus_error_sq,
        mean_abs_correction,
        mean_gate_weight,
    })
}

pub fn run_method(
    pop: &SyntheticPopulation,
    method: Method,
    cfg: &ControllerConfig,
) -> Result<MethodRun, SimError> {
    run_method_with(pop, method, cfg, &RunOptions::default())
}

fn require_populations(pops: &[SyntheticPopulation]) -> Result<(), SimError> {
    if pops.is_empty() {
        Err(SimError::Empty("at least one population is required".into()))
    } else {
        Ok(())
    }
}

fn macro_mis(
    pops: &[SyntheticPopulation],
    method: Method,
    cfg: &ControllerConfig,
    opts: &RunOptions,
) -> Result<(f64, Vec<MethodRun>), SimError> {
    let runs = pops
        .iter()
        .map(|p| run_method_with(p, method, cfg, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let m = mean(&runs.iter().map(|r| r.result.mis).collect::<Vec<_>>());
    Ok((m, runs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressRow {
    pub sigma_noise: f64,
    pub mis_gated: f64,
    pub mis_ungated: f64,
}

/// Macro MIS of gated and ungated DISCA with Gaussian noise added to every
/// raw gap. Noise draws are shared across grid points, so rows differ only
/// in scale.
pub fn noise_stress_test(
    pops: &[SyntheticPopulation],
    sigma_grid: &[f64],
    cfg: &ControllerConfig,
) -> Result<Vec<StressRow>, SimError> {
    require_populations(pops)?;
    if sigma_grid.is_empty() {
        return Err(SimError::Empty("sigma grid is empty".into()));
    }
    sigma_grid
        .iter()
        .map(|&sigma| {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(SimError::Spec(format!("noise sigma must be >= 0, got {sigma}")));
            }
            let opts = RunOptions {
                noise_sigma: sigma,
                ..Default::default()
            };
            Ok(StressRow {
                sigma_noise: sigma,
                mis_gated: macro_mis(pops, Method::Disca, cfg, &opts)?.0,
                mis_ungated: macro_mis(pops, Method::AlwaysOnPtis, cfg, &opts)?.0,
            })
        })
        .collect()
}

/// Hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    GateScaleS,
    LambdaCoop,
    ProposalSigma,
    TCatScale,
    NPersonas,
    KHalf,
    PersonaFloorF,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] = [
        SweepAxis::GateScaleS,
        SweepAxis::LambdaCoop,
        SweepAxis::ProposalSigma,
        SweepAxis::TCatScale,
        SweepAxis::NPersonas,
        SweepAxis::KHalf,
        SweepAxis::PersonaFloorF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::GateScaleS => "gate_scale_s",
            SweepAxis::LambdaCoop => "lambda_coop",
            SweepAxis::ProposalSigma => "proposal_sigma",
            SweepAxis::TCatScale => "t_cat_scale",
            SweepAxis::NPersonas => "n_personas",
            SweepAxis::KHalf => "k_half",
            SweepAxis::PersonaFloorF => "persona_floor_f",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ControllerConfig, value: f64) -> Result<ControllerConfig, SimError> {
        let count = |v: f64| -> Result<usize, SimError> {
            if v.is_finite() && v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(SimError::Config(ConfigError::Invalid(format!(
                    "{} must be a positive integer, got {v}",
                    self.name()
                ))))
            }
        };
        let mut c = cfg.clone();
        match self {
            SweepAxis::GateScaleS => c.gate_scale_s = value,
            SweepAxis::LambdaCoop => c.lambda_coop = value,
            SweepAxis::ProposalSigma => c.proposal_sigma = value,
            SweepAxis::TCatScale => {
                for t in c.t_cat.values_mut() {
                    *t *= value;
                }
            }
            SweepAxis::NPersonas => c.n_personas = count(value)?,
            SweepAxis::KHalf => c.k_half = count(value)?,
            SweepAxis::PersonaFloorF => c.persona_floor_f = value,
        }
        Ok(validate_config(c)?)
    }
}

impl FromStr for SweepAxis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| SimError::UnknownAxis(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub macro_mis: f64,
    /// Mean `(δ̄ − δ_h)²` across populations and scenarios.
    pub consensus_error_var: f64,
    pub mean_abs_correction: f64,
    pub mean_gate_weight: f64,
}

/// One full-DISCA run per grid point with everything else fixed.
pub fn sweep(
    axis: SweepAxis,
    grid: &[f64],
    pops: &[SyntheticPopulation],
    cfg: &ControllerConfig,
) -> Result<Vec<SweepRow>, SimError> {
    require_populations(pops)?;
    grid.iter()
        .map(|&value| {
            let c = axis.apply(cfg, value)?;
            let (m, runs) = macro_mis(pops, Method::Disca, &c, &RunOptions::default())?;
            let avg = |f: fn(&MethodRun) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());
            Ok(SweepRow {
                axis: axis.name().to_string(),
                value,
                macro_mis: m,
                consensus_error_var: avg(|r| r.consensus_error_sq),
                mean_abs_correction: avg(|r| r.mean_abs_correction),
                mean_gate_weight: avg(|r| r.mean_gate_weight),
            })
        })
        .collect()
}

/// One (population, configuration) cell of the tail-safety grid.
#[derive(Debug, Clone)]
pub struct TailCell {
    pub label: String,
    pub population: SyntheticPopulation,
    pub cfg: ControllerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCellResult {
    pub label: String,
    pub mis_vanilla: f64,
    pub mis_disca: f64,
    pub mis_consensus: f64,
}

/// Distribution of `ΔMIS = MIS_vanilla − MIS_variant` over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub variant: String,
    pub mean_delta_mis: f64,
    /// Cells where the variant is worse than vanilla.
    pub harmed_cells: usize,
    pub n_cells: usize,
    /// Largest `MIS_variant − MIS_vanilla`, floored at 0.
    pub worst_case_degradation: f64,
    pub std_delta_mis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSafetyReport {
    pub summaries: Vec<TailSummary>,
    pub cells: Vec<TailCellResult>,
}

fn summarise(variant: &str, deltas: &[f64]) -> TailSummary {
    TailSummary {
        variant: variant.to_string(),
        mean_delta_mis: mean(deltas),
        harmed_cells: deltas.iter().filter(|&&d| d < 0.0).count(),
        n_cells: deltas.len(),
        worst_case_degradation: deltas.iter().fold(0.0f64, |w, &d| w.max(-d)),
        std_delta_mis: population_std(deltas),
    }
}

/// The default tail-safety grid: 54 populations × 2 configurations.
///
/// Populations cross base-bias scale, persona-bias scale, persona noise and
/// contestation; bias directions per attribute are drawn from `seed`.
pub fn tail_safety_grid(seed: u64) -> Vec<TailCell> {
    let human = [0.76, 0.56, 0.68, 0.60, 0.66, 0.72];
    let mut dirs = rng::stream(seed, &["tail-directions"]);
    let base_dir: Vec<f64> = (0..6).map(|_| 2.0 * dirs.random::<f64>() - 1.0).collect();
    let persona_dir: Vec<f64> = (0..6).map(|_| 2.0 * dirs.random::<f64>() - 1.0).collect();
    let configs = [
        ("default", ControllerConfig::default()),
        (
            "lambda0.5",
            ControllerConfig {
                lambda_coop: 0.5,
                ..Default::default()
            },
        ),
    ];
    let mut cells = Vec::new();
    for &bb in &[0.0, 0.6, 1.2] {
        for &pb in &[0.0, 0.5, 1.5] {
            for &tau in &[0.3, 1.0, 2.0] {
                for &g in &[0.0, 0.8] {
                    let id = format!("bb{bb}-pb{pb}-tau{tau}-g{g}");
                    let spec = PopulationSpec {
                        country_id: id.clone(),
                        human_amce: Attribute::ALL.into_iter().zip(human).collect(),
                        base_bias: Attribute::ALL
                            .into_iter()
                            .zip(base_dir.iter().map(|d| bb * d))
                            .collect(),
                        persona_bias: Attribute::ALL
                            .into_iter()
                            .zip(persona_dir.iter().map(|d| pb * d))
                            .collect(),
                        tau,
                        positional_bias_scale: 0.2,
                        n_scenarios_per_attribute: 20,
                        target_spread: 0.1,
                        contested_offset: g,
                        temperatures: None,
                    };
                    let pop = generate_population(seed, &spec).expect("grid specs are valid");
                    for (name, cfg) in &configs {
                        cells.push(TailCell {
                            label: format!("{id}/{name}"),
                            population: pop.clone(),
                            cfg: ControllerConfig {
                                master_seed: seed,
                                ..cfg.clone()
                            },
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Full DISCA versus the consensus clamp, each against vanilla, per cell.
pub fn tail_safety(cells: &[TailCell]) -> Result<TailSafetyReport, SimError> {
    if cells.is_empty() {
        return Err(SimError::Empty("tail-safety grid is empty".into()));
    }
    let results = cells
        .par_iter()
        .map(|c| {
            let m = |method| run_method(&c.population, method, &c.cfg).map(|r| r.result.mis);
            Ok(TailCellResult {
                label: c.label.clone(),
                mis_vanilla: m(Method::Vanilla)?,
                mis_disca: m(Method::Disca)?,
                mis_consensus: m(Method::NoIsConsensus)?,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let d_disca: Vec<f64> = results.iter().map(|r| r.mis_vanilla - r.mis_disca).collect();
    let d_cons: Vec<f64> = results
        .iter()
        .map(|r| r.mis_vanilla - r.mis_consensus)
        .collect();
    Ok(TailSafetyReport {
        summaries: vec![
            summarise(Method::Disca.name(), &d_disca),
            summarise(Method::NoIsConsensus.name(), &d_cons),
        ],
        cells: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub macro_mis: f64,
    /// `macro_mis − macro_mis(full)`; positive means the ablation hurts.
    pub delta_vs_full: f64,
    /// Populations on which the variant is worse than full DISCA.
    pub worse_than_full: usize,
}

/// The ablation ladder: full DISCA, then each component removed.
pub fn ablation_ladder(
    pops: &[SyntheticPopulation],
    cfg: &ControllerConfig,
) -> Result<Vec<AblationRow>, SimError> {
    require_populations(pops)?;
    let opts = RunOptions::default();
    let (full, full_runs) = macro_mis(pops, Method::Disca, cfg, &opts)?;
    let ladder = [
        ("full", Method::Disca),
        ("without_persona", Method::NoPersona),
        ("always_on_ptis", Method::AlwaysOnPtis),
        ("no_is_consensus", Method::NoIsConsensus),
        ("no_debias", Method::NoDebias),
        ("vanilla", Method::Vanilla),
    ];
    ladder
        .iter()
        .map(|&(name, method)| {
            let (m, runs) = macro_mis(pops, method, cfg, &opts)?;
            Ok(AblationRow {
                variant: name.to_string(),
                macro_mis: m,
                delta_vs_full: m - full,
                worse_than_full: runs
                    .iter()
                    .zip(&full_runs)
                    .filter(|(r, f)| r.result.mis > f.result.mis)
                    .count(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> PopulationSpec {
        PopulationSpec {
            base_bias: Attribute::ALL.into_iter().map(|a| (a, 0.8)).collect(),
            tau: 0.5,
            positional_bias_scale: 0.3,
            n_scenarios_per_attribute: 12,
            ..PopulationSpec::unbiased("TST", [0.75, 0.55, 0.7, 0.6, 0.65, 0.7])
        }
    }

    #[test]
    fn contested_panels_are_bimodal() {
        let pop = generate_population(3, &contested_spec()).unwrap();
        let recs = acquire_population(&pop, 4, 0.0).unwrap();
        let (_, ps) = symmetrise(&recs[0], true);
        let d = pop.scenarios[0].delta_h;
        assert!(ps[0] - d > 0.5 && ps[2] - d > 0.5);
        assert!(ps[1] - d < -0.5 && ps[3] - d < -0.5);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_population(5, &spec()).unwrap();
        let b = generate_population(5, &spec()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_population(6, &spec()).unwrap());
        assert_eq!(a.scenarios.len(), 72);
    }

    #[test]
    fn half_targets_give_zero_gaps() {
        let s = PopulationSpec {
            target_spread: 0.0,
            ..PopulationSpec::unbiased("H", [0.5; 6])
        };
        let pop = generate_population(1, &s).unwrap();
        assert!(pop.scenarios.iter().all(|s| s.delta_h == 0.0));
    }

    #[test]
    fn scenario_mean_reproduces_human_amce() {
        let pop = generate_population(2, &spec()).unwrap();
        for a in Attribute::ALL {
            let ps: Vec<f64> = pop
                .scenarios
                .iter()
                .filter(|s| s.attribute == a)
                .map(|s| s.target_p)
                .collect();
            assert!((mean(&ps) - pop.human_amce.get(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_errors() {
        let mut s = spec();
        s.human_amce.insert(Attribute::Age, 1.0);
        assert!(matches!(generate_population(1, &s), Err(SimError::Spec(_))));
        let mut s = spec();
        s.tau = -1.0;
        assert!(matches!(generate_population(1, &s), Err(SimError::Spec(_))));
        let mut s = spec();
        s.human_amce.remove(&Attribute::Gender);
        assert!(matches!(generate_population(1, &s), Err(SimError::Spec(_))));
    }

    #[test]
    fn spec_json_one_or_many() {
        let one = serde_json::to_string(&spec()).unwrap();
        assert_eq!(PopulationSpec::parse_many(&one).unwrap(), vec![spec()]);
        let many = format!("[{one},{one}]");
        assert_eq!(PopulationSpec::parse_many(&many).unwrap().len(), 2);
        assert!(PopulationSpec::parse_many(r#"{"country_id":"X","tau":0,"bogus":1}"#).is_err());
    }

    #[test]
    fn grids_contain_identity_points() {
        let g = OracleGrid::default();
        let t = g.temperatures();
        assert!(t.contains(&1.0));
        assert_eq!(t.first(), Some(&0.25));
        assert_eq!(t.last(), Some(&8.0));
        let m = g.margins();
        assert!(m.contains(&0.0));
        assert_eq!(m.len(), 121);
        assert!((m[0] + 3.0).abs() < 1e-12 && (m[120] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(matches!("nope".parse::<Method>(), Err(SimError::UnknownMethod(_))));
        assert!(matches!("nope".parse::<SweepAxis>(), Err(SimError::UnknownAxis(_))));
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn vanilla_on_unbiased_world_is_exact() {
        let pop = generate_population(3, &PopulationSpec::unbiased("U", [0.8, 0.55, 0.7, 0.6, 0.62, 0.74])).unwrap();
        let r = run_method(&pop, Method::Vanilla, &ControllerConfig::default()).unwrap();
        assert!(r.result.mis < 1e-12, "{}", r.result.mis);
    }

    #[test]
    fn no_persona_panel_is_the_base_gap() {
        let pop = generate_population(3, &spec()).unwrap();
        let r = run_method(&pop, Method::NoPersona, &ControllerConfig::default()).unwrap();
        for t in &r.traces {
            assert_eq!(t.within_panel_variance, Some(0.0));
            assert_eq!(t.consensus, t.symmetrised_base_gap);
        }
    }

    #[test]
    fn margin_oracle_never_loses_to_vanilla() {
        let pop = generate_population(4, &spec()).unwrap();
        let c = ControllerConfig::default();
        let v = run_method(&pop, Method::Vanilla, &c).unwrap().result.mis;
        let m = run_method(&pop, Method::MarginScalingOracle, &c).unwrap().result.mis;
        let t = run_method(&pop, Method::TempScalingOracle, &c).unwrap().result.mis;
        assert!(m <= v && t <= v, "margin {m} temp {t} vanilla {v}");
    }

    #[test]
    fn zero_noise_row_matches_plain_run() {
        let pop = generate_population(4, &spec()).unwrap();
        let c = ControllerConfig::default();
        let rows = noise_stress_test(std::slice::from_ref(&pop), &[0.0, 1.0], &c).unwrap();
        let plain = run_method(&pop, Method::Disca, &c).unwrap().result.mis;
        assert_eq!(rows[0].mis_gated.to_bits(), plain.to_bits());
        assert!(rows.iter().all(|r| r.mis_gated.is_finite() && r.mis_ungated.is_finite()));
    }

    #[test]
    fn single_point_sweep_matches_run() {
        let pop = generate_population(4, &spec()).unwrap();
        let c = ControllerConfig::default();
        let rows = sweep(SweepAxis::GateScaleS, &[0.04], std::slice::from_ref(&pop), &c).unwrap();
        assert_eq!(rows.len(), 1);
        let plain = run_method(&pop, Method::Disca, &c).unwrap().result.mis;
        assert_eq!(rows[0].macro_mis, plain);
    }

    #[test]
    fn sweep_rejects_fractional_counts() {
        let pop = generate_population(4, &spec()).unwrap();
        let err = sweep(SweepAxis::KHalf, &[2.5], &[pop], &ControllerConfig::default());
        assert!(err.is_err());
    }
}
