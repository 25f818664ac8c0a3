use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use usedrop::config::{ChannelBuilder, ChannelSource, RunConfig};
use usedrop::dp_iid::iid_backward_induction;
use usedrop::dp_symmetric::{
    check_curvature_bound, check_value_structure, small_drop_condition, solve_and_extract, ThresholdReport,
};
use usedrop::policy::{read_policy_csv, write_policy_csv, Extraction};
use usedrop::scenarios::{write_iid_table_csv, write_value_table_csv};
use usedrop::sim::{simulate as run_simulation, SimConfig};
use usedrop::PlantModel;

use crate::{Cli, Failure};

/// Relative tolerance of the value-structure check.
pub const STRUCTURE_TOL: f64 = 1e-8;
/// Slack on the curvature bound, in grid spacings.
pub const BOUND_SLACK_SPACINGS: f64 = 10.0;

pub fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs --config <path>"))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = RunConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(out) = &cli.out {
        cfg.outputs.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.sim.trials = trials;
    }
    if let Some(points) = cli.grid_points {
        cfg.solver.num_points = points;
    }
    cfg.grid()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.outputs.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn extraction_json(ex: &Extraction) -> Value {
    match ex {
        Extraction::Threshold(rule) => {
            let (lo, hi) = rule.silent_interval().unwrap_or((f64::NAN, f64::NAN));
            json!({ "kind": rule.kind().to_string(), "tau_lo": number(lo), "tau_hi": number(hi) })
        }
        Extraction::Asymmetric { lo, hi } => json!({ "kind": "asymmetric", "tau_lo": number(*lo), "tau_hi": number(*hi) }),
        Extraction::NotThreshold { witness } => {
            json!({ "kind": "not_threshold", "witness": [witness.0, witness.1, witness.2] })
        }
    }
}

/// Structure, bound and extraction checks of a solved instance as JSON.
pub fn structure_report(report: &ThresholdReport) -> Value {
    let table = &report.table;
    let structure = check_value_structure(table, STRUCTURE_TOL);
    let slack = BOUND_SLACK_SPACINGS * table.grid().spacing();
    let bound = check_curvature_bound(table, slack);
    let cond = small_drop_condition(table.plant(), table.fsm());
    json!({
        "value_structure": {
            "tolerance_relative": STRUCTURE_TOL,
            "checked": structure.checked,
            "passed": structure.passed(),
            "violations": structure.violations.iter().take(20).map(|v| format!("{v:?}")).collect::<Vec<_>>(),
        },
        "curvature_bound": {
            "slack": slack,
            "checked": bound.checked,
            "max_excess": bound.max_excess,
            "passed": bound.passed(),
            "violations": bound.violations.len(),
        },
        "small_drop_condition": { "v": cond.v, "threshold": cond.threshold, "satisfied": cond.satisfied },
        "not_threshold_reachable": report
            .witnesses(true)
            .iter()
            .map(|(n, q, ex)| json!({ "n": n, "q": q, "extraction": extraction_json(ex) }))
            .collect::<Vec<_>>(),
    })
}

pub fn solve_symmetric(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let fsm = cfg.fsm()?;
    let grid = cfg.grid()?;
    let provenance = cfg.provenance()?;
    let dir = out_dir(&cfg)?;

    let start = Instant::now();
    let report = solve_and_extract(&cfg.plant, &fsm, grid, cfg.solver.value_cap)?;
    let seconds = start.elapsed().as_secs_f64();
    let policy = report.policy();

    write_value_table_csv(&report.table, &provenance, create(&dir.join("value_table.csv"))?)?;
    write_policy_csv(
        &policy,
        &provenance,
        create(&dir.join("policy.csv"))?,
        Some(create(&dir.join("policy_grid.csv"))?),
    )?;
    let structure = structure_report(&report);
    write_json(&dir.join("structure_report.json"), &structure)?;

    let thresholds: Vec<Value> = report
        .pairs(false)
        .map(|(n, q)| {
            json!({
                "n": n,
                "q": q,
                "reachable": report.reachable[n - 1][q],
                "extraction": extraction_json(report.extraction(n, q)),
            })
        })
        .collect();
    let v1 = report.table.initial_value();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "provenance": provenance,
            "command": "solve-symmetric",
            "plant": cfg.plant,
            "channel": fsm.spec(),
            "grid": { "half_width": grid.half_width(), "num_points": grid.num_points(), "spacing": grid.spacing() },
            "initial_value": v1,
            "solve_seconds": seconds,
            "thresholds": thresholds,
        }),
    )?;
    let witnesses = report.witnesses(true).len();
    println!("V1(0, q1) = {v1}");
    println!("solved in {seconds:.2} s on {} grid points", grid.num_points());
    println!(
        "value structure: {}; reachable pairs without a symmetric threshold: {witnesses}",
        if structure["value_structure"]["passed"] == json!(true) { "pass" } else { "FAIL" }
    );
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn solve_iid(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    if cfg.plant.a != 0.0 {
        return Err(Failure::Config(anyhow!(
            "solve-iid needs a white source (a = 0), got a = {}; use solve-symmetric instead",
            cfg.plant.a
        )));
    }
    let fsm = cfg.fsm()?;
    let provenance = cfg.provenance()?;
    let dir = out_dir(&cfg)?;
    let table = iid_backward_induction(&fsm, cfg.plant.sigma2, cfg.plant.horizon, &cfg.solver.iid_search)?;
    write_iid_table_csv(&table, &provenance, create(&dir.join("iid_table.csv"))?)?;
    write_policy_csv::<_, File>(&table.policy(), &provenance, create(&dir.join("policy.csv"))?, None)?;
    {
        let mut w = create(&dir.join("asymmetry_log.csv"))?;
        use std::io::Write;
        writeln!(w, "n,q,objective,symmetric_objective,tau_lo,tau_hi")?;
        for e in &table.asymmetry_log {
            writeln!(w, "{},{},{},{},{},{}", e.stage, e.state, e.objective, e.symmetric_objective, e.lo, e.hi)?;
        }
    }
    let v1 = table.initial_value();
    write_json(
        &dir.join("summary.json"),
        &json!({
            "provenance": provenance,
            "command": "solve-iid",
            "plant": cfg.plant,
            "channel": fsm.spec(),
            "initial_value": v1,
            "asymmetric_pairs": table.asymmetry_log.len(),
        }),
    )?;
    println!("V1(q1) = {v1}");
    println!("asymmetric optima at {} (stage, state) pairs", table.asymmetry_log.len());
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn grid_sibling(policy: &Path) -> PathBuf {
    let stem = policy.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    policy.with_file_name(format!("{stem}_grid.csv"))
}

pub fn simulate(cli: &Cli, policy_path: &Path, trace: usize) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    if cfg.sim.trials == 0 {
        return Err(Failure::Config(anyhow!("trials must be at least 1")));
    }
    let fsm = cfg.fsm()?;
    let provenance = cfg.provenance()?;
    let main = File::open(policy_path).with_context(|| format!("opening {}", policy_path.display()))?;
    let sibling = grid_sibling(policy_path);
    let grid = if sibling.exists() { Some(File::open(&sibling)?) } else { None };
    let (header, policy) =
        read_policy_csv(main, grid).with_context(|| format!("reading {}", policy_path.display()))?;
    if header.provenance != provenance {
        eprintln!(
            "warning: policy provenance {} does not match config provenance {provenance}",
            header.provenance
        );
    }
    let dir = out_dir(&cfg)?;
    let sim_cfg = SimConfig { trials: cfg.sim.trials, seed: cfg.sim.seed, trace_trials: trace };
    let start = Instant::now();
    let summary = run_simulation(&cfg.plant, &fsm, &policy, &sim_cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    fs::write(dir.join("sim_summary.json"), summary.to_json()?)?;
    if trace > 0 {
        summary.write_trace_csv(create(&dir.join("trace.csv"))?)?;
    }
    println!(
        "total = {} +- {} ({} trials, seed {}, {seconds:.2} s)",
        summary.total_mean, summary.total_se, summary.trials, summary.seed
    );
    let predicted = policy_path
        .parent()
        .map(|p| p.join("summary.json"))
        .filter(|p| p.exists())
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .filter(|v| v["provenance"] == json!(provenance))
        .and_then(|v| v["initial_value"].as_f64());
    if let Some(v1) = predicted {
        let z = (summary.total_mean - v1) / summary.total_se.max(f64::MIN_POSITIVE);
        println!("predicted V1 = {v1}; difference = {:.2} standard errors", z);
    }
    Ok(())
}

fn energy_config() -> RunConfig {
    RunConfig {
        plant: usedrop::scenarios::reference_plant(),
        channel: ChannelSource {
            builder: Some(ChannelBuilder::EnergyHarvesting { capacity: 4, tx_cost: 2, p_tx: 0.3 }),
            fsm: None,
        },
        solver: Default::default(),
        sim: Default::default(),
        outputs: Default::default(),
    }
}

fn workload_config() -> RunConfig {
    RunConfig {
        channel: ChannelSource {
            builder: Some(ChannelBuilder::WorkloadChain { window: 4, drop_probs: vec![0.1, 0.3, 0.5, 0.7, 0.9] }),
            fsm: None,
        },
        ..energy_config()
    }
}

fn iid_config() -> RunConfig {
    RunConfig { plant: PlantModel::new(0.0, 1.0, 0.0, 5).expect("valid constants"), ..energy_config() }
}

/// Threshold table `n, q, reachable, kind, tau` for plotting.
fn write_threshold_plot(report: &ThresholdReport, path: &Path) -> Result<(), Failure> {
    use std::io::Write;
    let mut w = create(path)?;
    writeln!(w, "n,q,reachable,kind,tau")?;
    for (n, q) in report.pairs(false) {
        let (kind, tau) = match report.extraction(n, q) {
            Extraction::Threshold(rule) => (rule.kind().to_string(), rule.tau().unwrap_or(f64::NAN)),
            Extraction::Asymmetric { .. } => ("asymmetric".into(), f64::NAN),
            Extraction::NotThreshold { .. } => ("not_threshold".into(), f64::NAN),
        };
        writeln!(w, "{n},{q},{},{kind},{tau}", u8::from(report.reachable[n - 1][q]))?;
    }
    Ok(())
}

pub fn export_examples(cli: &Cli) -> Result<(), Failure> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("examples_out"));
    fs::create_dir_all(&dir)?;
    for (name, cfg) in [("energy", energy_config()), ("workload", workload_config()), ("iid_energy", iid_config())] {
        let mut cfg = cfg;
        cfg.outputs.dir = PathBuf::from(format!("out/{name}"));
        fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&cfg)?)?;
    }
    for (name, cfg) in [("energy", energy_config()), ("workload", workload_config())] {
        let mut cfg = cfg;
        if let Some(points) = cli.grid_points {
            cfg.solver.num_points = points;
        }
        let report = solve_and_extract(&cfg.plant, &cfg.fsm()?, cfg.grid()?, cfg.solver.value_cap)?;
        write_threshold_plot(&report, &dir.join(format!("{name}_thresholds.csv")))?;
        println!("{name}: V1(0, q1) = {}", report.table.initial_value());
    }
    println!("examples written to {}", dir.display());
    Ok(())
}
