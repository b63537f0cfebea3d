//! One line per acceptance criterion, then a single assertion over all of
//! them. Run with `cargo test -p disca-cli --test acceptance -- --nocapture`
//! to see the report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use disca::eval::{amce, convert_raw_amce, mis};
use disca::gate::gate_weight;
use disca::persona_profile::{age_cohort, descriptor_level, AgeCohort};
use disca::ptis::aggregate;
use disca::simulate::{
    builtin_populations, contested_spec, generate_population, noise_stress_test, run_method,
    tail_safety, tail_safety_grid, Method,
};
use disca::verify::{
    verify_bounded_correction, verify_corollary_1, verify_holder_stability, verify_proposition_1,
    AgentModel,
};
use disca::{AmceVector, Attribute, ControllerConfig};

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("..").join(rel)
}

fn shrinkage_suite(r: &mut Report, cfg: &ControllerConfig) {
    let t = Instant::now();
    let grid = [AgentModel {
        delta_h: 1.0,
        delta_base: 0.0,
        tau: 1.0,
        n: 4,
    }];
    let rep = verify_proposition_1(1_000_000, &grid, cfg);
    let secs = t.elapsed().as_secs_f64();
    let p = &rep.points[0];
    let d2_ok = (p.mean_d2 - 1.0).abs() <= 0.01;
    let var_ok = (p.var_delta - 0.25).abs() <= 0.02 * 0.25;
    let gamma_ok = (p.gamma_argmin - 0.8).abs() <= 0.05;
    r.record(
        "shrinkage over 1e6 panels (N=4, tau=1)",
        d2_ok && var_ok && gamma_ok && secs < 60.0,
        format!(
            "mean D2 = {:.5} (target 1, tol 1%), var(Delta) = {:.5} (target 0.25, tol 2%), \
             argmin gamma = {:.2} (target 0.8, tol 0.05), {secs:.1}s (limit 60s)",
            p.mean_d2, p.var_delta, p.gamma_argmin
        ),
    );
}

fn marginal_law(r: &mut Report, cfg: &ControllerConfig) {
    let rep = verify_corollary_1(1_000_000, 1.0, cfg);
    let row = rep.rows.iter().find(|x| x.n == 4).expect("n = 4 row");
    let drop_ok = (row.empirical_drop - 0.05).abs() <= 4.0 * row.drop_se;
    let slope_ok = (rep.log_log_slope + 2.0).abs() <= 0.15;
    r.record(
        "marginal persona law",
        drop_ok && slope_ok,
        format!(
            "Var drop 4->5 = {:.5} (target 0.05, 4 se = {:.5}), log-log slope = {:.3} (target -2 +/- 0.15)",
            row.empirical_drop,
            4.0 * row.drop_se,
            rep.log_log_slope
        ),
    );
}

fn bounded_correction(r: &mut Report, cfg: &ControllerConfig) {
    let rep = verify_bounded_correction(10_000, cfg).expect("bounded-correction suite runs");
    let ok = rep.as_violations == 0
        && rep.hp_exceed_fraction <= 0.05
        && (rep.threshold - 1.24).abs() < 0.005
        && (rep.species_probability_cap - 0.077).abs() < 0.001
        && rep.species_max_probability_shift <= rep.species_probability_cap;
    r.record(
        "bounded correction over 1e4 scenarios",
        ok,
        format!(
            "a.s. violations = {}, threshold = {:.4} (~1.24), fraction above = {} (limit 0.05), \
             Species cap = {:.4} (~0.077), max Species shift = {:.5}",
            rep.as_violations,
            rep.threshold,
            rep.hp_exceed_fraction,
            rep.species_probability_cap,
            rep.species_max_probability_shift
        ),
    );
}

fn holder(r: &mut Report, cfg: &ControllerConfig) {
    let rep = verify_holder_stability(&[0.01, 0.05, 0.1], 10_000, cfg).expect("stability suite runs");
    let violations: usize = rep.rows.iter().map(|x| x.violations).sum();
    let ok = violations == 0 && (0.8..=1.0).contains(&rep.empirical_exponent);
    r.record(
        "Holder stability with shared streams",
        ok,
        format!(
            "violations = {violations} over eps in {{0.01, 0.05, 0.1}}, empirical exponent = {:.3} \
             (range [0.8, 1.0]; max-diff fit {:.3}, bound fit {:.3})",
            rep.empirical_exponent, rep.max_diff_exponent, rep.bound_exponent
        ),
    );
}

fn gate(r: &mut Report, cfg: &ControllerConfig) {
    let s = cfg.gate_scale_s;
    let r0 = gate_weight(0.0, s);
    let r1 = gate_weight(s, s);
    let e_inv = (-1.0f64).exp();
    let closed_ok = r0 == 1.0 && ((r1 - e_inv) / e_inv).abs() <= 1e-12;

    let pop = generate_population(cfg.master_seed, &contested_spec()).expect("contested spec");
    let gated = run_method(&pop, Method::Disca, cfg).expect("gated run");
    let ungated = run_method(&pop, Method::DiscaUngated, cfg).expect("ungated run");
    let margin = ungated.mean_abs_correction - gated.mean_abs_correction;

    let pops = builtin_populations(cfg.master_seed);
    let stress = noise_stress_test(&pops, &[2.0], cfg).expect("stress runs");
    let s2 = &stress[0];
    let ok = closed_ok && margin > 0.0 && s2.mis_gated <= s2.mis_ungated;
    r.record(
        "reliability gate",
        ok,
        format!(
            "r(0) = {r0}, r(s) = {r1:.15} (e^-1 = {e_inv:.15}); contested mean |delta*| gated = {:.5}, \
             ungated = {:.5}, margin = {margin:.2e}; sigma_noise = 2: MIS gated = {:.5}, ungated = {:.5}",
            gated.mean_abs_correction, ungated.mean_abs_correction, s2.mis_gated, s2.mis_ungated
        ),
    );
}

fn ess_guard(r: &mut Report) {
    let mut u = vec![-1e4; 64];
    u[0] = 0.0;
    let eps: Vec<f64> = (0..64).map(|k| 0.3 - 0.01 * k as f64).collect();
    let res = aggregate(&u, &eps, 0.5, 0.1).expect("aggregation runs");
    let ok = (res.ess_norm - 0.0156).abs() < 1e-4 && res.ess_norm < 0.1 && res.delta_ptis == 0.0;
    r.record(
        "ESS guard",
        ok,
        format!(
            "ess_norm = {:.6} (~0.0156, threshold 0.1), pass output = {}",
            res.ess_norm, res.delta_ptis
        ),
    );
}

fn eval_stack(r: &mut Report) {
    let conv = convert_raw_amce(0.0).expect("in range");
    let h = AmceVector::new([0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
    let one = AmceVector::new([0.3, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
    let six = AmceVector::new(h.values().map(|v| v + 0.1)).unwrap();
    let m_id = mis(&h, &h);
    let m_one = mis(&one, &h);
    let m_six = mis(&six, &h);

    let mut rdr = csv::Reader::from_path(workspace_file("core/tests/fixtures/amce12.csv")).unwrap();
    let probs: Vec<(Attribute, f64)> = rdr
        .records()
        .map(|x| {
            let x = x.unwrap();
            (x[1].parse().unwrap(), x[2].parse().unwrap())
        })
        .collect();
    let got = amce(&probs).unwrap();
    let want = [0.8, 0.5, 0.5, 0.47, 0.25, 0.5];
    let fixture_err = got
        .values()
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let ok = conv == 50.0
        && m_id == 0.0
        && (m_one - 0.1).abs() < 1e-12
        && (m_six - 0.1 * 6f64.sqrt()).abs() < 1e-12
        && fixture_err <= 1e-12;
    r.record(
        "evaluation stack",
        ok,
        format!(
            "convert_raw_amce(0) = {conv}; MIS identity = {m_id}, one axis = {m_one:.12}, \
             six axes = {m_six:.12}; AMCE fixture max error = {fixture_err:.1e} (tol 1e-12)"
        ),
    );
}

fn tail(r: &mut Report, cfg: &ControllerConfig) {
    let rep = tail_safety(&tail_safety_grid(cfg.master_seed)).expect("tail-safety grid runs");
    let by: BTreeMap<&str, _> = rep.summaries.iter().map(|s| (s.variant.as_str(), s)).collect();
    let (d, c) = (by["disca"], by["no_is_consensus"]);
    let ok = d.n_cells >= 100 && c.n_cells == d.n_cells && d.worst_case_degradation <= c.worst_case_degradation;
    r.record(
        "tail safety",
        ok,
        format!(
            "{} cells; disca: mean dMIS = {:.4}, harmed = {}, worst = {:.4}, std = {:.4}; \
             consensus clamp: mean dMIS = {:.4}, harmed = {}, worst = {:.4}, std = {:.4}",
            d.n_cells,
            d.mean_delta_mis,
            d.harmed_cells,
            d.worst_case_degradation,
            d.std_delta_mis,
            c.mean_delta_mis,
            c.harmed_cells,
            c.worst_case_degradation,
            c.std_delta_mis
        ),
    );
}

fn persona_profile(r: &mut Report) {
    let l75 = descriptor_level(0.75);
    let l50 = descriptor_level(0.50);
    let a30 = age_cohort(1990, 2020);
    let a40 = age_cohort(1980, 2020);
    let ok = l75 == 1 && l50 == 2 && a30 == Some(AgeCohort::Young) && a40 == Some(AgeCohort::Middle);
    r.record(
        "persona profile boundaries",
        ok,
        format!("0.75 -> {l75}, 0.50 -> {l50}, age 30 -> {a30:?}, age 40 -> {a40:?}"),
    );
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_disca"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Every file in `dir`, with `wall_time_ms` removed from the summary.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let name = e.file_name().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(e.path()).unwrap();
            if name == "summary.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_ms");
                bytes = v.to_string().into_bytes();
            }
            (name, bytes)
        })
        .collect()
}

fn determinism(r: &mut Report) {
    let tmp = tempfile::tempdir().unwrap();
    let panel = workspace_file("cli/tests/fixtures/panel_usa.jsonl");
    let human = workspace_file("cli/tests/fixtures/human_usa_raw.csv");
    let runs: [Vec<&str>; 3] = [
        vec![
            "run",
            "--panel",
            panel.to_str().unwrap(),
            "--human",
            human.to_str().unwrap(),
            "--amce-scale",
            "raw",
            "--trace",
            "--seed",
            "7",
        ],
        vec!["simulate", "--trace", "--seed", "7"],
        vec!["verify", "--check", "bounded_correction", "--trials", "2000", "--seed", "7"],
    ];
    let mut identical = 0;
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let a = tmp.path().join(format!("a{i}"));
        let b = tmp.path().join(format!("b{i}"));
        if !(run_cli(args, &a) && run_cli(args, &b)) {
            continue;
        }
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        files += sa.len();
        if sa == sb && !sa.is_empty() {
            identical += 1;
        }
    }
    r.record(
        "CLI determinism",
        identical == runs.len(),
        format!("{identical}/{} commands byte-identical across repeated runs ({files} files compared)", runs.len()),
    );
}

#[test]
fn acceptance() {
    let cfg = ControllerConfig::default();
    let mut r = Report { lines: Vec::new() };
    shrinkage_suite(&mut r, &cfg);
    marginal_law(&mut r, &cfg);
    bounded_correction(&mut r, &cfg);
    holder(&mut r, &cfg);
    gate(&mut r, &cfg);
    ess_guard(&mut r);
    eval_stack(&mut r);
    tail(&mut r, &cfg);
    persona_profile(&mut r);
    determinism(&mut r);
    let failed: Vec<&String> = r.lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"));
}
