//! Monte Carlo checks of the shrinkage statistics and of the correction's
//! boundedness and stability guarantees.
//!
//! Trials are split into fixed-size chunks, each with its own stream keyed by
//! `(master_seed, check, chunk)`. Chunks run in parallel and their partial
//! results are merged in chunk order, so every report is reproducible
//! bit-exactly from the seed and configuration.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decide::logistic;
use crate::gate::{dual_pass_with_draws, final_gap};
use crate::model::{Attribute, ControllerConfig};
use crate::ptis::{draw_perturbations, PassInputs, PtisError};
use crate::rng::{self, Stream};
use crate::shrinkage::{
    consensus, gamma_star, marginal_persona_variance, mse_of_gamma, panel_stats,
};
use crate::stats::{ols_slope, CompensatedSum};

const CHUNK: usize = 1 << 13;

fn chunked<T, F>(seed: u64, label: &str, trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Stream, usize) -> T + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(trials - c * CHUNK);
            let mut s = rng::stream(seed, &["verify", label, &c.to_string()]);
            f(&mut s, count)
        })
        .collect()
}

/// Fields every report carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub check: String,
    pub pass: bool,
    pub seed: u64,
    pub trials: usize,
    pub config_hash: String,
}

impl ReportHeader {
    fn new(check: Check, pass: bool, trials: usize, cfg: &ControllerConfig) -> Self {
        ReportHeader {
            check: check.name().to_string(),
            pass,
            seed: cfg.master_seed,
            trials,
            config_hash: cfg.config_hash(),
        }
    }
}

/// The available checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Proposition1,
    Corollary1,
    Concentration,
    BoundedCorrection,
    HolderStability,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::Proposition1,
        Check::Corollary1,
        Check::Concentration,
        Check::BoundedCorrection,
        Check::HolderStability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Proposition1 => "proposition_1",
            Check::Corollary1 => "corollary_1",
            Check::Concentration => "concentration",
            Check::BoundedCorrection => "bounded_correction",
            Check::HolderStability => "holder_stability",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Check::Proposition1 | Check::Corollary1 => 1_000_000,
            Check::Concentration => 100_000,
            Check::BoundedCorrection | Check::HolderStability => 10_000,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Check::ALL.iter().map(|c| c.name()).collect();
                format!("unknown check `{s}` (expected one of {})", names.join(", "))
            })
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        (got - want).abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Moments accumulated over simulated panels.
#[derive(Debug, Clone, Default)]
struct PanelMoments {
    d2: CompensatedSum,
    d2_sq: CompensatedSum,
    d2_max: f64,
    /// `Δ − Δ_h`, centred on the known mean for conditioning.
    dev: CompensatedSum,
    dev_sq: CompensatedSum,
    dev_4: CompensatedSum,
    /// `(γ*Δ − Δ_h)²` and its square.
    loss: CompensatedSum,
    loss_sq: CompensatedSum,
}

impl PanelMoments {
    fn merge(&mut self, o: &PanelMoments) {
        self.d2.merge(&o.d2);
        self.d2_sq.merge(&o.d2_sq);
        self.d2_max = self.d2_max.max(o.d2_max);
        self.dev.merge(&o.dev);
        self.dev_sq.merge(&o.dev_sq);
        self.dev_4.merge(&o.dev_4);
        self.loss.merge(&o.loss);
        self.loss_sq.merge(&o.loss_sq);
    }
}

/// One point of the agent-model grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub delta_h: f64,
    pub delta_base: f64,
    pub tau: f64,
    pub n: usize,
}

impl AgentModel {
    /// `Δ_h = δ_h − δ_base`.
    pub fn delta_h_gap(&self) -> f64 {
        self.delta_h - self.delta_base
    }
}

/// Default grid: the headline point `(Δ_h, τ², N) = (1, 1, 4)` plus two
/// contrasting regimes.
pub fn default_agent_grid() -> Vec<AgentModel> {
    vec![
        AgentModel {
            delta_h: 1.0,
            delta_base: 0.0,
            tau: 1.0,
            n: 4,
        },
        AgentModel {
            delta_h: 0.3,
            delta_base: -0.2,
            tau: 1.0,
            n: 4,
        },
        AgentModel {
            delta_h: 2.0,
            delta_base: 1.0,
            tau: 2.0,
            n: 8,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Point {
    pub model: AgentModel,
    pub pass: bool,
    pub mean_d2: f64,
    pub d2_target: f64,
    pub d2_rel_err: f64,
    pub d2_se: f64,
    pub max_d2: f64,
    pub var_delta: f64,
    pub var_delta_target: f64,
    pub var_delta_rel_err: f64,
    pub var_delta_se: f64,
    pub gamma_star: f64,
    /// Minimiser of the empirical MSE over γ ∈ {0, 0.01, …, 1}.
    pub gamma_argmin: f64,
    pub empirical_mse_at_gamma_star: f64,
    pub closed_form_mse_at_gamma_star: f64,
    pub empirical_mse_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub points: Vec<Prop1Point>,
}

fn simulate_panels(model: &AgentModel, trials: usize, seed: u64, label: &str) -> PanelMoments {
    let dh = model.delta_h_gap();
    let g = gamma_star(dh * dh, model.tau * model.tau, model.n);
    let parts = chunked(seed, label, trials, |s, count| {
        let mut m = PanelMoments::default();
        let mut gaps = vec![0.0; model.n];
        for _ in 0..count {
            for x in gaps.iter_mut() {
                let z: f64 = StandardNormal.sample(s);
                *x = model.delta_h + model.tau * z;
            }
            let st = panel_stats(&gaps, model.delta_base).expect("n >= 2 and finite");
            m.d2.add(st.within_variance);
            m.d2_sq.add(st.within_variance * st.within_variance);
            m.d2_max = m.d2_max.max(st.within_variance);
            let dev = st.consensus_adjustment - dh;
            m.dev.add(dev);
            m.dev_sq.add(dev * dev);
            m.dev_4.add(dev.powi(4));
            let loss = (g * st.consensus_adjustment - dh).powi(2);
            m.loss.add(loss);
            m.loss_sq.add(loss * loss);
        }
        m
    });
    let mut total = PanelMoments::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

fn prop1_point(model: AgentModel, trials: usize, seed: u64, idx: usize) -> Prop1Point {
    let t = trials as f64;
    let m = simulate_panels(&model, trials, seed, &format!("prop1-{idx}"));
    let tau_sq = model.tau * model.tau;
    let dh = model.delta_h_gap();

    let mean_d2 = m.d2.value() / t;
    let d2_se = ((m.d2_sq.value() / t - mean_d2 * mean_d2).max(0.0) / t).sqrt();

    let s1 = m.dev.value();
    let s2 = m.dev_sq.value();
    let var_delta = (s2 - s1 * s1 / t) / (t - 1.0);
    let m4 = m.dev_4.value() / t;
    let var_delta_se = ((m4 - var_delta * var_delta).max(0.0) / t).sqrt();
    let var_delta_target = tau_sq / model.n as f64;

    // E[Δ] and E[Δ²] recovered from the centred sums; the empirical MSE of γΔ
    // is then a quadratic in γ.
    let mean_delta = dh + s1 / t;
    let mean_delta_sq = s2 / t + 2.0 * dh * s1 / t + dh * dh;
    let emp_mse = |gamma: f64| gamma * gamma * mean_delta_sq - 2.0 * gamma * dh * mean_delta + dh * dh;
    let gamma_argmin = (0..=100)
        .map(|k| k as f64 / 100.0)
        .min_by(|a, b| emp_mse(*a).total_cmp(&emp_mse(*b)))
        .expect("non-empty grid");

    let g = gamma_star(dh * dh, tau_sq, model.n);
    let loss_mean = m.loss.value() / t;
    let loss_se = ((m.loss_sq.value() / t - loss_mean * loss_mean).max(0.0) / t).sqrt();
    let closed = mse_of_gamma(g, dh, tau_sq, model.n);

    let d2_rel_err = rel_err(mean_d2, tau_sq);
    let var_delta_rel_err = rel_err(var_delta, var_delta_target);
    let pass = d2_rel_err <= 0.01
        && var_delta_rel_err <= 0.02
        && (gamma_argmin - g).abs() <= 0.05
        && (loss_mean - closed).abs() <= 3.0 * loss_se + 1e-12;
    Prop1Point {
        model,
        pass,
        mean_d2,
        d2_target: tau_sq,
        d2_rel_err,
        d2_se,
        max_d2: m.d2_max,
        var_delta,
        var_delta_target,
        var_delta_rel_err,
        var_delta_se,
        gamma_star: g,
        gamma_argmin,
        empirical_mse_at_gamma_star: loss_mean,
        closed_form_mse_at_gamma_star: closed,
        empirical_mse_se: loss_se,
    }
}

/// Unbiasedness of `D²`, the `τ²/n` consensus variance and the optimality of
/// `γ*`, at each grid point.
///
/// A point passes when the mean `D²` is within 1% of `τ²`, `Var(Δ)` within 2%
/// of `τ²/n`, the empirical MSE minimiser within 0.05 of `γ*`, and the
/// empirical MSE at `γ*` within three standard errors of the closed form.
pub fn verify_proposition_1(
    trials: usize,
    grid: &[AgentModel],
    cfg: &ControllerConfig,
) -> Prop1Report {
    let points: Vec<Prop1Point> = grid
        .iter()
        .enumerate()
        .map(|(i, &m)| prop1_point(m, trials, cfg.master_seed, i))
        .collect();
    let pass = !points.is_empty() && points.iter().all(|p| p.pass);
    Prop1Report {
        header: ReportHeader::new(Check::Proposition1, pass, trials, cfg),
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub n: usize,
    pub var_n: f64,
    pub var_next: f64,
    pub empirical_drop: f64,
    pub predicted_drop: f64,
    pub drop_se: f64,
    /// `|empirical − predicted| ≤ 4·se`.
    pub within_mc_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub tau: f64,
    pub rows: Vec<MarginalRow>,
    /// OLS slope of `ln(drop)` on `ln(n + ½)`.
    pub log_log_slope: f64,
}

/// Largest panel size whose marginal drop is reported.
pub const COROLLARY_MAX_N: usize = 10;

/// The marginal-persona law: `Var(Δ; n) − Var(Δ; n+1) = τ²/(n(n+1))`.
///
/// Each trial draws one sequence of persona noises and reads the consensus of
/// its first `n` entries for every `n`, so adjacent variances share draws and
/// their difference has small Monte Carlo error. The decay exponent is fitted
/// against `n + ½`, the midpoint of each `n → n+1` step.
pub fn verify_corollary_1(trials: usize, tau: f64, cfg: &ControllerConfig) -> CorollaryReport {
    let max_n = COROLLARY_MAX_N + 1;
    // per n in 2..=max_n: Σ Δ_n, Σ Δ_n²; per step n→n+1: Σ d, Σ d².
    #[derive(Clone)]
    struct Acc {
        s1: Vec<CompensatedSum>,
        s2: Vec<CompensatedSum>,
        d1: Vec<CompensatedSum>,
        d2: Vec<CompensatedSum>,
    }
    let empty = Acc {
        s1: vec![CompensatedSum::new(); max_n + 1],
        s2: vec![CompensatedSum::new(); max_n + 1],
        d1: vec![CompensatedSum::new(); max_n + 1],
        d2: vec![CompensatedSum::new(); max_n + 1],
    };
    let parts = chunked(cfg.master_seed, "corollary", trials, |s, count| {
        let mut acc = empty.clone();
        let mut eta = vec![0.0; max_n];
        let mut cons = vec![0.0; max_n + 1];
        for _ in 0..count {
            for x in eta.iter_mut() {
                let z: f64 = StandardNormal.sample(s);
                *x = tau * z;
            }
            for n in 2..=max_n {
                cons[n] = consensus(&eta[..n]);
                acc.s1[n].add(cons[n]);
                acc.s2[n].add(cons[n] * cons[n]);
            }
            for n in 2..max_n {
                let d = cons[n] * cons[n] - cons[n + 1] * cons[n + 1];
                acc.d1[n].add(d);
                acc.d2[n].add(d * d);
            }
        }
        acc
    });
    let mut total = empty;
    for p in &parts {
        for n in 0..=max_n {
            total.s1[n].merge(&p.s1[n]);
            total.s2[n].merge(&p.s2[n]);
            total.d1[n].merge(&p.d1[n]);
            total.d2[n].merge(&p.d2[n]);
        }
    }
    let t = trials as f64;
    let var = |n: usize| {
        let s1 = total.s1[n].value();
        (total.s2[n].value() - s1 * s1 / t) / (t - 1.0)
    };
    let rows: Vec<MarginalRow> = (2..max_n)
        .map(|n| {
            let mean_d = total.d1[n].value() / t;
            let drop_se = ((total.d2[n].value() / t - mean_d * mean_d).max(0.0) / t).sqrt();
            let (var_n, var_next) = (var(n), var(n + 1));
            let empirical_drop = var_n - var_next;
            let predicted_drop = marginal_persona_variance(tau * tau, n);
            MarginalRow {
                n,
                var_n,
                var_next,
                empirical_drop,
                predicted_drop,
                drop_se,
                within_mc_error: (empirical_drop - predicted_drop).abs() <= 4.0 * drop_se,
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64 + 0.5).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.empirical_drop.max(f64::MIN_POSITIVE).ln()).collect();
    let log_log_slope = ols_slope(&xs, &ys);
    let pass = rows.iter().all(|r| r.within_mc_error) && (log_log_slope + 2.0).abs() <= 0.15;
    CorollaryReport {
        header: ReportHeader::new(Check::Corollary1, pass, trials, cfg),
        tau,
        rows,
        log_log_slope,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub n: usize,
    pub tau: f64,
    /// Deviation threshold as a multiple of `τ²`.
    pub deviation: f64,
    pub exceed_fraction: f64,
    pub limit: f64,
}

/// Frequency of `|D² − τ²| ≥ 2.3τ²` for Gaussian panels of four; must stay
/// below 5%.
pub fn verify_concentration(trials: usize, cfg: &ControllerConfig) -> ConcentrationReport {
    let (n, tau, deviation, limit) = (4usize, 1.0f64, 2.3f64, 0.05f64);
    let counts = chunked(cfg.master_seed, "concentration", trials, |s, count| {
        let mut gaps = [0.0; 4];
        let mut hits = 0usize;
        for _ in 0..count {
            for x in gaps.iter_mut() {
                let z: f64 = StandardNormal.sample(s);
                *x = tau * z;
            }
            let d2 = panel_stats(&gaps, 0.0).expect("n = 4").within_variance;
            if (d2 - tau * tau).abs() >= deviation * tau * tau {
                hits += 1;
            }
        }
        hits
    });
    let exceed_fraction = counts.iter().sum::<usize>() as f64 / trials as f64;
    ConcentrationReport {
        header: ReportHeader::new(Check::Concentration, exceed_fraction < limit, trials, cfg),
        n,
        tau,
        deviation,
        exceed_fraction,
        limit,
    }
}

/// `σ·√(2·ln(4K/δ_p))` with `K = k_half`.
pub fn high_probability_threshold(cfg: &ControllerConfig, delta_p: f64) -> f64 {
    cfg.proposal_sigma * (2.0 * (4.0 * cfg.k_half as f64 / delta_p).ln()).sqrt()
}

/// A random scenario of the bound suites: symmetrised base and persona gaps.
fn random_panel(s: &mut Stream, n: usize) -> (f64, Vec<f64>) {
    let std = |s: &mut Stream| -> f64 { StandardNormal.sample(s) };
    let delta_h = 1.5 * std(s);
    let base = delta_h + std(s);
    let tau = 0.1 + 1.4 * rand::Rng::random::<f64>(s);
    let personas = (0..n).map(|_| delta_h + tau * std(s)).collect();
    (base, personas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedCorrectionReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub delta_p: f64,
    pub threshold: f64,
    pub as_violations: usize,
    pub hp_exceedances: usize,
    pub hp_exceed_fraction: f64,
    pub max_abs_correction: f64,
    /// `threshold / (4·T_Species)`.
    pub species_probability_cap: f64,
    pub species_max_probability_shift: f64,
    pub species_trials: usize,
}

/// Almost-sure and high-probability bounds on the correction magnitude, and
/// the implied cap on the Species sparing-probability shift.
pub fn verify_bounded_correction(
    trials: usize,
    cfg: &ControllerConfig,
) -> Result<BoundedCorrectionReport, PtisError> {
    let delta_p = 0.05;
    let threshold = high_probability_threshold(cfg, delta_p);
    let t_species = cfg.temperature(Attribute::Species);
    #[derive(Default)]
    struct Acc {
        as_violations: usize,
        hp: usize,
        max_abs: f64,
        species_shift: f64,
        species_trials: usize,
    }
    let parts = chunked(cfg.master_seed, "bounded", trials, |s, count| {
        let mut acc = Acc::default();
        for i in 0..count {
            let (base, personas) = random_panel(s, cfg.n_personas);
            let cons = consensus(&personas);
            let inputs = PassInputs {
                base,
                consensus: cons,
                personas: &personas,
            };
            let draws = draw_perturbations(s, cfg.proposal_sigma, 2 * cfg.k_half);
            let (d1, d2) = draws.split_at(cfg.k_half);
            let dp = dual_pass_with_draws(&inputs, d1, d2, cfg)?;
            let corr = dp.correction();
            if corr.abs() > dp.max_abs_perturbation() {
                acc.as_violations += 1;
            }
            if corr.abs() > threshold {
                acc.hp += 1;
            }
            acc.max_abs = acc.max_abs.max(corr.abs());
            if Attribute::ALL[i % 6] == Attribute::Species {
                let f = final_gap(base, cons, corr, &dp.pass1, &dp.pass2, cfg);
                let shift = (logistic(f / t_species) - logistic((f - corr) / t_species)).abs();
                acc.species_shift = acc.species_shift.max(shift);
                acc.species_trials += 1;
            }
        }
        Ok::<_, PtisError>(acc)
    });
    let mut total = Acc::default();
    for p in parts {
        let p = p?;
        total.as_violations += p.as_violations;
        total.hp += p.hp;
        total.max_abs = total.max_abs.max(p.max_abs);
        total.species_shift = total.species_shift.max(p.species_shift);
        total.species_trials += p.species_trials;
    }
    let cap = threshold / (4.0 * t_species);
    let frac = total.hp as f64 / trials as f64;
    let pass = total.as_violations == 0 && frac <= delta_p && total.species_shift <= cap;
    Ok(BoundedCorrectionReport {
        header: ReportHeader::new(Check::BoundedCorrection, pass, trials, cfg),
        delta_p,
        threshold,
        as_violations: total.as_violations,
        hp_exceedances: total.hp,
        hp_exceed_fraction: frac,
        max_abs_correction: total.max_abs,
        species_probability_cap: cap,
        species_max_probability_shift: total.species_shift,
        species_trials: total.species_trials,
    })
}

/// `2M(1+κ)4^α / (ησ^α) · (1 + 8M²/s)`.
pub fn holder_constant(cfg: &ControllerConfig, m: f64) -> f64 {
    let a = cfg.pt_alpha;
    2.0 * m * (1.0 + cfg.pt_kappa) * 4f64.powf(a) / (cfg.is_temperature_eta * cfg.proposal_sigma.powf(a))
        * (1.0 + 8.0 * m * m / cfg.gate_scale_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub epsilon: f64,
    pub max_diff: f64,
    pub mean_diff: f64,
    /// Largest `diff / (L·ε^α)` over trials.
    pub max_bound_ratio: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub rows: Vec<HolderRow>,
    /// OLS slope of `ln(mean_diff)` on `ln ε` over the positive grid points.
    pub empirical_exponent: f64,
    /// Same fit on `max_diff`. The most sensitive trials saturate near the
    /// perturbation scale, so this is flatter than the typical response.
    pub max_diff_exponent: f64,
    /// Same fit on `ε^α`.
    pub bound_exponent: f64,
}

/// Default perturbation sizes.
pub const HOLDER_EPSILONS: [f64; 4] = [0.0, 0.01, 0.05, 0.1];

/// Perturbs every gap by `±ε` with shared perturbation draws and compares the
/// change in correction with `L·ε^α`, `L` evaluated at each trial's realised
/// `M = max|ε_k|`.
pub fn verify_holder_stability(
    eps_grid: &[f64],
    trials: usize,
    cfg: &ControllerConfig,
) -> Result<HolderReport, PtisError> {
    let k = eps_grid.len();
    #[derive(Clone)]
    struct Acc {
        max: Vec<f64>,
        sum: Vec<CompensatedSum>,
        ratio: Vec<f64>,
        viol: Vec<usize>,
    }
    let empty = Acc {
        max: vec![0.0; k],
        sum: vec![CompensatedSum::new(); k],
        ratio: vec![0.0; k],
        viol: vec![0; k],
    };
    let sign = Normal::new(0.0, 1.0).expect("unit normal");
    let parts = chunked(cfg.master_seed, "holder", trials, |s, count| {
        let mut acc = empty.clone();
        for _ in 0..count {
            let (base, personas) = random_panel(s, cfg.n_personas);
            let dirs: Vec<f64> = (0..=personas.len())
                .map(|_| if sign.sample(s) >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let draws = draw_perturbations(s, cfg.proposal_sigma, 2 * cfg.k_half);
            let (d1, d2) = draws.split_at(cfg.k_half);
            let correction = |base: f64, personas: &[f64]| -> Result<(f64, f64), PtisError> {
                let inputs = PassInputs {
                    base,
                    consensus: consensus(personas),
                    personas,
                };
                let dp = dual_pass_with_draws(&inputs, d1, d2, cfg)?;
                Ok((dp.correction(), dp.max_abs_perturbation()))
            };
            let (c0, m) = correction(base, &personas)?;
            let l = holder_constant(cfg, m);
            for (j, &eps) in eps_grid.iter().enumerate() {
                let pb = base + eps * dirs[0];
                let pp: Vec<f64> = personas
                    .iter()
                    .zip(&dirs[1..])
                    .map(|(p, d)| p + eps * d)
                    .collect();
                let (c1, _) = correction(pb, &pp)?;
                let diff = (c1 - c0).abs();
                let bound = l * eps.powf(cfg.pt_alpha);
                acc.max[j] = acc.max[j].max(diff);
                acc.sum[j].add(diff);
                if bound > 0.0 {
                    acc.ratio[j] = acc.ratio[j].max(diff / bound);
                }
                if diff > bound {
                    acc.viol[j] += 1;
                }
            }
        }
        Ok::<_, PtisError>(acc)
    });
    let mut total = empty;
    for p in parts {
        let p = p?;
        for j in 0..k {
            total.max[j] = total.max[j].max(p.max[j]);
            total.sum[j].merge(&p.sum[j]);
            total.ratio[j] = total.ratio[j].max(p.ratio[j]);
            total.viol[j] += p.viol[j];
        }
    }
    let rows: Vec<HolderRow> = (0..k)
        .map(|j| HolderRow {
            epsilon: eps_grid[j],
            max_diff: total.max[j],
            mean_diff: total.sum[j].value() / trials as f64,
            max_bound_ratio: total.ratio[j],
            violations: total.viol[j],
        })
        .collect();
    let slope = |f: &dyn Fn(&HolderRow) -> f64| {
        let fit: Vec<&HolderRow> = rows.iter().filter(|r| r.epsilon > 0.0 && f(r) > 0.0).collect();
        if fit.len() < 2 {
            return f64::NAN;
        }
        let xs: Vec<f64> = fit.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = fit.iter().map(|r| f(r).ln()).collect();
        ols_slope(&xs, &ys)
    };
    let empirical_exponent = slope(&|r| r.mean_diff);
    let max_diff_exponent = slope(&|r| r.max_diff);
    let bound_exponent = slope(&|r| r.epsilon.powf(cfg.pt_alpha));
    let pass = rows.iter().all(|r| r.violations == 0)
        && rows
            .iter()
            .filter(|r| r.epsilon == 0.0)
            .all(|r| r.max_diff == 0.0)
        && (0.8..=1.0).contains(&empirical_exponent)
        && (0.8..=1.0).contains(&bound_exponent);
    Ok(HolderReport {
        header: ReportHeader::new(Check::HolderStability, pass, trials, cfg),
        rows,
        empirical_exponent,
        max_diff_exponent,
        bound_exponent,
    })
}

/// Report of any check, for uniform handling by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VerifyReport {
    Proposition1(Prop1Report),
    Corollary1(CorollaryReport),
    Concentration(ConcentrationReport),
    BoundedCorrection(BoundedCorrectionReport),
    HolderStability(HolderReport),
}

impl VerifyReport {
    pub fn header(&self) -> &ReportHeader {
        match self {
            VerifyReport::Proposition1(r) => &r.header,
            VerifyReport::Corollary1(r) => &r.header,
            VerifyReport::Concentration(r) => &r.header,
            VerifyReport::BoundedCorrection(r) => &r.header,
            VerifyReport::HolderStability(r) => &r.header,
        }
    }

    pub fn pass(&self) -> bool {
        self.header().pass
    }
}

/// Runs `check` with its default grid; `trials` overrides the default count.
pub fn run_check(
    check: Check,
    trials: Option<usize>,
    cfg: &ControllerConfig,
) -> Result<VerifyReport, PtisError> {
    let trials = trials.unwrap_or(check.default_trials());
    Ok(match check {
        Check::Proposition1 => {
            VerifyReport::Proposition1(verify_proposition_1(trials, &default_agent_grid(), cfg))
        }
        Check::Corollary1 => VerifyReport::Corollary1(verify_corollary_1(trials, 1.0, cfg)),
        Check::Concentration => VerifyReport::Concentration(verify_concentration(trials, cfg)),
        Check::BoundedCorrection => {
            VerifyReport::BoundedCorrection(verify_bounded_correction(trials, cfg)?)
        }
        Check::HolderStability => {
            VerifyReport::HolderStability(verify_holder_stability(&HOLDER_EPSILONS, trials, cfg)?)
        }
    })
}
