use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use disca::eval::{read_human_amce, write_results_csv, AmceScale, CountryResult};
use disca::panel::load_panel_file;
use disca::simulate::{
    ablation_ladder, builtin_populations, generate_population, noise_stress_test, run_method,
    sweep as run_sweep, tail_safety, tail_safety_grid, Method, PopulationSpec, SweepAxis,
    SyntheticPopulation,
};
use disca::verify::{run_check, Check, VerifyReport};
use disca::{Controller, ControllerConfig, CorrectionTrace};
use serde::Serialize;

use crate::output::{CliError, Outputs};

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::runtime(e.to_string()))
}

fn results_bytes(rows: &[CountryResult]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, rows).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(buf)
}

fn traces_bytes<'a>(traces: impl IntoIterator<Item = &'a CorrectionTrace>) -> Vec<u8> {
    let mut buf = Vec::new();
    for t in traces {
        serde_json::to_writer(&mut buf, t).expect("traces serialise");
        buf.push(b'\n');
    }
    buf
}

fn populations(spec: Option<&Path>, cfg: &ControllerConfig) -> Result<Vec<SyntheticPopulation>, CliError> {
    let Some(path) = spec else {
        return Ok(builtin_populations(cfg.master_seed));
    };
    let specs = PopulationSpec::load_many(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    specs
        .iter()
        .map(|s| generate_population(cfg.master_seed, s))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn sim_err(e: disca::simulate::SimError) -> CliError {
    CliError::runtime(e.to_string())
}

pub fn run(
    cfg: &ControllerConfig,
    panel: &Path,
    human: &Path,
    scale: AmceScale,
    trace: bool,
    out: &mut Outputs,
) -> Result<usize, CliError> {
    let records = load_panel_file(panel).map_err(|e| CliError::input(format!("{}: {e}", panel.display())))?;
    let file = File::open(human).map_err(|e| CliError::input(format!("{}: {e}", human.display())))?;
    let targets = read_human_amce(file, scale).map_err(|e| CliError::input(format!("{}: {e}", human.display())))?;

    let controller = Controller::new(cfg.clone());
    let traces = controller.correct_all(&records).map_err(|e| {
        // Name the first failing scenario.
        let sid = records
            .iter()
            .find(|r| controller.correct(r).is_err())
            .map_or("?", |r| r.scenario_id.as_str());
        CliError::runtime(format!("scenario {sid}: {e}"))
    })?;
    let mut by_country: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for (r, t) in records.iter().zip(&traces) {
        by_country
            .entry(r.country.as_str())
            .or_default()
            .push((t.attribute, t.p_spare));
    }
    let rows = by_country
        .iter()
        .map(|(country, probs)| {
            let h = targets
                .get(*country)
                .ok_or_else(|| CliError::input(format!("no human AMCE for country `{country}`")))?;
            CountryResult::evaluate(country, Method::Disca.name(), probs, h)
                .map_err(|e| CliError::input(format!("{country}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.add("results.csv", results_bytes(&rows)?);
    if trace {
        out.add("traces.jsonl", traces_bytes(&traces));
    }
    Ok(rows.len())
}

pub fn simulate(
    cfg: &ControllerConfig,
    spec: Option<&Path>,
    methods: &[String],
    trace: bool,
    out: &mut Outputs,
) -> Result<usize, CliError> {
    let methods: Vec<Method> = if methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        methods
            .iter()
            .map(|m| m.parse().map_err(|e: disca::simulate::SimError| CliError::usage(e.to_string())))
            .collect::<Result<_, _>>()?
    };
    let pops = populations(spec, cfg)?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for pop in &pops {
        for &m in &methods {
            let run = run_method(pop, m, cfg).map_err(sim_err)?;
            if m == Method::Disca {
                traces.extend(run.traces);
            }
            rows.push(run.result);
        }
    }
    out.add("results.csv", results_bytes(&rows)?);
    if trace {
        if !methods.contains(&Method::Disca) {
            return Err(CliError::usage("--trace needs the disca method in --methods"));
        }
        out.add("traces.jsonl", traces_bytes(&traces));
    }
    Ok(rows.len())
}

pub fn sweep(
    cfg: &ControllerConfig,
    axis: &str,
    grid: &[f64],
    spec: Option<&Path>,
    out: &mut Outputs,
) -> Result<usize, CliError> {
    let axis: SweepAxis = axis.parse().map_err(|e: disca::simulate::SimError| {
        let names: Vec<_> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
        CliError::usage(format!("{e} (expected one of {})", names.join(", ")))
    })?;
    let pops = populations(spec, cfg)?;
    let rows = run_sweep(axis, grid, &pops, cfg).map_err(sim_err)?;
    out.add("sweep.csv", csv_bytes(&rows)?);
    Ok(rows.len())
}

pub fn stress(
    cfg: &ControllerConfig,
    grid: &[f64],
    spec: Option<&Path>,
    out: &mut Outputs,
) -> Result<usize, CliError> {
    let pops = populations(spec, cfg)?;
    let rows = noise_stress_test(&pops, grid, cfg).map_err(sim_err)?;
    out.add("stress.csv", csv_bytes(&rows)?);
    Ok(rows.len())
}

pub fn verify(
    cfg: &ControllerConfig,
    check: &str,
    trials: Option<usize>,
    out: &mut Outputs,
) -> Result<usize, CliError> {
    let checks: Vec<Check> = if check == "all" {
        Check::ALL.to_vec()
    } else {
        vec![check.parse().map_err(CliError::usage)?]
    };
    let reports = checks
        .into_iter()
        .map(|c| run_check(c, trials, cfg))
        .collect::<Result<Vec<VerifyReport>, _>>()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let text = if reports.len() == 1 {
        serde_json::to_string(&reports[0])
    } else {
        serde_json::to_string(&reports)
    }
    .expect("reports serialise");
    println!("{text}");
    out.add("verify.json", format!("{text}\n").into_bytes());
    Ok(reports.len())
}

pub fn ablate(cfg: &ControllerConfig, spec: Option<&Path>, out: &mut Outputs) -> Result<usize, CliError> {
    let pops = populations(spec, cfg)?;
    let ladder = ablation_ladder(&pops, cfg).map_err(sim_err)?;
    let tail = tail_safety(&tail_safety_grid(cfg.master_seed)).map_err(sim_err)?;
    out.add("ablation.csv", csv_bytes(&ladder)?);
    out.add("tail_safety.csv", csv_bytes(&tail.summaries)?);
    out.add("tail_safety_cells.csv", csv_bytes(&tail.cells)?);
    Ok(ladder.len())
}
