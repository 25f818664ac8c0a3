//! Acceptance suite: one line per criterion, non-zero exit if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{curvature_bound, open_loop_cost, slice_is_bowl, small_drop_level, stage_cost_oracle};
use usedrop::discrete::{discrete_dp, evaluate_policy, exhaustive_policy_search, DiscreteInstance};
use usedrop::dp_iid::{iid_stage_cost, IntervalSearch, ASYMMETRY_TOLERANCE};
use usedrop::dp_symmetric::{
    check_curvature_bound, check_value_structure, solve_and_extract, CurvatureBound, ThresholdReport, DEFAULT_VALUE_CAP,
};
use usedrop::policy::{Extraction, StageRule, Timing};
use usedrop::quadrature::{gaussian_expectation, is_symmetric_nondecreasing, ErrorGrid, GridFunction};
use usedrop::scenarios::{random_fsm, random_small_drop_instance, reference_energy_channel, reference_plant, reference_workload_channel};
use usedrop::sim::constant_policy;
use usedrop::{backward_induction, iid_backward_induction, simulate, ChannelFsm, IidValueTable, PlantModel, SimConfig};

const GRID_POINTS: usize = 2001;
const MAX_HALF_WIDTH: f64 = 200.0;
const STRUCTURE_TOL: f64 = 1e-8;
const SHAPE_TOL: f64 = 1e-8;
const BOUND_SLACK_SPACINGS: f64 = 10.0;
const SWEEP: usize = 50;
const SWEEP_SEED: u64 = 1;
const SHAPE_SEED: u64 = 2;
const ORACLE_SEED: u64 = 3;
const IID_SEED: u64 = 4;
const MC_TRIALS: usize = 100_000;
const MC_SEED: u64 = 1;
const SOLVE_BUDGET_S: f64 = 60.0;
const MC_BUDGET_S: f64 = 30.0;

type Outcome = Result<(bool, String), String>;

struct Solved {
    energy: ThresholdReport,
    energy_seconds: f64,
    workload: ThresholdReport,
    sweep: Vec<(PlantModel, ChannelFsm, ThresholdReport)>,
}

fn solve(plant: &PlantModel, fsm: &ChannelFsm) -> Result<ThresholdReport, String> {
    let grid = ErrorGrid::auto(plant, GRID_POINTS, MAX_HALF_WIDTH).map_err(|e| e.to_string())?;
    solve_and_extract(plant, fsm, grid, DEFAULT_VALUE_CAP).map_err(|e| e.to_string())
}

fn solve_all() -> Result<Solved, String> {
    let plant = reference_plant();
    let start = Instant::now();
    let energy = solve(&plant, &reference_energy_channel())?;
    let energy_seconds = start.elapsed().as_secs_f64();
    let workload = solve(&plant, &reference_workload_channel())?;
    let mut rng = ChaCha8Rng::seed_from_u64(SWEEP_SEED);
    let mut sweep = Vec::with_capacity(SWEEP);
    for _ in 0..SWEEP {
        let (p, fsm) = random_small_drop_instance(&mut rng);
        let r = solve(&p, &fsm)?;
        sweep.push((p, fsm, r));
    }
    Ok(Solved { energy, energy_seconds, workload, sweep })
}

fn energy_thresholds(s: &Solved) -> Outcome {
    let plant = reference_plant();
    let mut pairs = 0;
    let mut bad = Vec::new();
    for (n, q) in s.energy.pairs(true).filter(|(_, q)| (2..=4).contains(q)) {
        pairs += 1;
        match s.energy.extraction(n, q) {
            Extraction::Threshold(StageRule::Symmetric { tau }) if tau.is_finite() => {}
            _ => bad.push((n, q)),
        }
    }
    let level = small_drop_level(plant.a, plant.horizon);
    Ok((
        s.energy_seconds < SOLVE_BUDGET_S && bad.is_empty() && pairs > 0,
        format!(
            "solved in {:.2} s; {pairs} reachable pairs at q in 2..=4, {} without a finite symmetric threshold {bad:?}; \
             small-drop level {level:.6} < p 0.3",
            s.energy_seconds,
            bad.len()
        ),
    ))
}

fn workload_thresholds(s: &Solved) -> Outcome {
    let mut bad = Vec::new();
    let mut never = 0;
    let mut pairs = 0;
    for (n, q) in s.workload.pairs(true) {
        pairs += 1;
        match s.workload.extraction(n, q) {
            Extraction::Threshold(StageRule::Symmetric { tau }) => never += usize::from(tau.is_infinite()),
            Extraction::Threshold(StageRule::Never) => never += 1,
            Extraction::Threshold(StageRule::Always) => {}
            _ => bad.push((n, q)),
        }
    }
    Ok((
        bad.is_empty(),
        format!("{pairs} reachable pairs, {} not threshold-form {bad:?}; {never} of them silent on the whole grid", bad.len()),
    ))
}

fn small_drop_sweep(s: &Solved) -> Outcome {
    let mut out_of_regime = 0;
    let mut witnesses = 0;
    for (p, fsm, r) in &s.sweep {
        let level = small_drop_level(p.a, p.horizon);
        let in_regime = fsm.num_states() <= 5
            && (0.5..=1.2).contains(&p.a)
            && p.horizon <= 10
            && (0..fsm.num_states()).filter(|&q| fsm.transmit_allowed(q)).all(|q| fsm.drop_prob(q) < level);
        out_of_regime += usize::from(!in_regime);
        witnesses += r.witnesses(true).len();
    }
    Ok((
        out_of_regime == 0 && witnesses == 0 && s.sweep.len() == SWEEP,
        format!("{} instances, {out_of_regime} outside the small-drop regime, {witnesses} not_threshold witnesses", s.sweep.len()),
    ))
}

fn value_structure(s: &Solved) -> Outcome {
    let tables = std::iter::once(&s.energy.table)
        .chain(std::iter::once(&s.workload.table))
        .chain(s.sweep.iter().map(|(_, _, r)| &r.table));
    let mut slices = 0;
    let mut library_failures = 0;
    let mut oracle_failures = 0;
    for t in tables {
        let report = check_value_structure(t, STRUCTURE_TOL);
        library_failures += report.violations.len();
        let c = t.grid().center();
        for n in 1..=t.horizon() + 1 {
            for q in 0..t.fsm().num_states() {
                let v = t.value(n, q);
                let (lo, hi) = v.min_max();
                slices += 1;
                oracle_failures += usize::from(!slice_is_bowl(v.values(), c, STRUCTURE_TOL * (hi - lo)));
            }
        }
    }
    Ok((
        library_failures == 0 && oracle_failures == 0,
        format!("{slices} value slices; {library_failures} structure violations, {oracle_failures} slices not bowl-shaped with minimum at 0"),
    ))
}

fn curvature(s: &Solved) -> Outcome {
    let t = &s.energy.table;
    let plant = t.plant();
    let bound = CurvatureBound::new(plant);
    let formula_ok = (1..=plant.horizon + 1).all(|n| bound.at(n) == curvature_bound(plant.a, plant.horizon, n));
    let slack = BOUND_SLACK_SPACINGS * t.grid().spacing();
    let r = check_curvature_bound(t, slack);
    Ok((
        formula_ok && r.passed() && r.checked > 0,
        format!(
            "{} quotients, max excess over bound {:.4}, slack {slack:.4}, {} violations",
            r.checked,
            r.max_excess,
            r.violations.len()
        ),
    ))
}

fn step_function(rng: &mut ChaCha8Rng, grid: ErrorGrid) -> GridFunction {
    let steps = rng.random_range(1..=6);
    let mut edges: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..grid.half_width())).collect();
    edges.sort_by(f64::total_cmp);
    let mut levels = vec![rng.random_range(-2.0..2.0)];
    for _ in 0..steps {
        let last = levels[levels.len() - 1];
        levels.push(last + rng.random_range(0.0..3.0));
    }
    GridFunction::from_fn(grid, |x| levels[edges.iter().filter(|&&r| x.abs() >= r).count()])
}

fn expectation_shape() -> Outcome {
    let grid = ErrorGrid::new(10.0, 401).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(SHAPE_SEED);
    let (mut shape_failures, mut min_failures) = (0, 0);
    for _ in 0..100 {
        let f = step_function(&mut rng, grid);
        let g = step_function(&mut rng, grid);
        let a = rng.random_range(-1.5..1.5);
        let sigma2 = rng.random_range(0.2..2.0);
        let h = gaussian_expectation(&f, a, sigma2);
        let (lo, hi) = h.min_max();
        shape_failures += usize::from(!is_symmetric_nondecreasing(&h, SHAPE_TOL * (hi - lo).max(1.0)).0);
        let m = f.pointwise_min(&g);
        let exact: Vec<f64> = f.values().iter().zip(g.values()).map(|(x, y)| x.min(*y)).collect();
        let closed = is_symmetric_nondecreasing(&m, 0.0).0 && m.values() == exact.as_slice();
        min_failures += usize::from(!closed);
    }
    Ok((
        shape_failures == 0 && min_failures == 0,
        format!("100 step functions: {shape_failures} expectation shape failures, {min_failures} min-closure failures"),
    ))
}

fn discrete_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let (mut mismatches, mut unstructured, mut inconsistent) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let inst = DiscreteInstance::random(&mut rng, 5, 3, 2, false);
        let ex = exhaustive_policy_search(&inst).map_err(|e| e.to_string())?;
        let dp = discrete_dp(&inst);
        let diff = (ex.cost - dp.initial_value(&inst)).abs();
        worst = worst.max(diff);
        mismatches += usize::from(diff > 1e-12);
        unstructured += usize::from(!ex.minimizers.iter().any(|p| p.is_threshold(&inst)));
        inconsistent += ex
            .minimizers
            .iter()
            .filter(|p| (evaluate_policy(&inst, p) - ex.cost).abs() > 1e-12)
            .count();
    }
    Ok((
        mismatches == 0 && unstructured == 0 && inconsistent == 0,
        format!(
            "100 instances: max |dp - exhaustive| {worst:.1e}, {mismatches} mismatches, \
             {unstructured} without an interval-complement optimizer, {inconsistent} reported optimizers off the optimum"
        ),
    ))
}

fn random_tuple(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    let sigma2 = 10f64.powf(rng.random_range(-1.0..1.0));
    let s = sigma2.sqrt();
    let p = rng.random::<f64>();
    let mut ends = [rng.random_range(-3.0 * s..3.0 * s), rng.random_range(-3.0 * s..3.0 * s)];
    ends.sort_by(f64::total_cmp);
    match rng.random_range(0..6) {
        0 => ends[0] = f64::NEG_INFINITY,
        1 => ends[1] = f64::INFINITY,
        _ => {}
    }
    (sigma2, p, ends[0], ends[1])
}

/// Best symmetric objective by a dense scan over `tau` with local refinement.
fn symmetric_scan(sigma2: f64, p: f64, gap: f64) -> f64 {
    let s = sigma2.sqrt();
    let objective = |tau: f64| {
        let c = iid_stage_cost(sigma2, p, -tau, tau).expect("valid interval");
        c.cost + c.p_transmit * gap
    };
    let steps = 4000;
    let h = 8.0 * s / steps as f64;
    let (mut best_tau, mut best) = (f64::INFINITY, sigma2);
    for i in 0..=steps {
        let v = objective(i as f64 * h);
        if v < best {
            (best_tau, best) = (i as f64 * h, v);
        }
    }
    if best_tau.is_finite() {
        let (mut lo, mut hi) = ((best_tau - h).max(0.0), best_tau + h);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if objective(m1) <= objective(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best = best.min(objective(0.5 * (lo + hi)));
    }
    best
}

fn asymmetry_consistency(fsm: &ChannelFsm, t: &IidValueTable) -> (usize, usize) {
    let sigma2 = t.sigma2();
    let tol = ASYMMETRY_TOLERANCE * sigma2;
    let (mut unlogged, mut spurious) = (0, 0);
    for n in 1..=t.horizon() {
        for q in 0..fsm.num_states() {
            let Some(q1) = fsm.next_transmit(q) else { continue };
            let gap = t.value(n + 1, q1) - t.value(n + 1, fsm.next_silent(q));
            let p = fsm.drop_prob(q);
            let choice = t.choice(n, q);
            let scan = symmetric_scan(sigma2, p, gap);
            let sym = t.symmetric_objective(n, q);
            let logged = t.asymmetry_log.iter().find(|e| e.stage == n && e.state == q);
            let beaten = choice.objective < scan.min(sym) - tol;
            match logged {
                None => unlogged += usize::from(beaten),
                Some(e) => {
                    let recomputed = if e.lo.is_finite() || e.hi.is_finite() {
                        stage_cost_oracle(sigma2, p, e.lo, e.hi)
                            + iid_stage_cost(sigma2, p, e.lo, e.hi).expect("valid interval").p_transmit * gap
                    } else {
                        sigma2
                    };
                    let genuine = (recomputed - e.objective).abs() <= 1e-8 * sigma2.max(e.objective.abs())
                        && e.objective < scan - tol;
                    spurious += usize::from(!genuine);
                }
            }
        }
    }
    (unlogged, spurious)
}

fn iid_solver() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(IID_SEED);
    let mut worst_rel: f64 = 0.0;
    let mut cost_failures = 0;
    for _ in 0..1000 {
        let (sigma2, p, lo, hi) = random_tuple(&mut rng);
        let got = iid_stage_cost(sigma2, p, lo, hi).map_err(|e| e.to_string())?.cost;
        let want = stage_cost_oracle(sigma2, p, lo, hi);
        let rel = (got - want).abs() / want;
        worst_rel = worst_rel.max(rel);
        cost_failures += usize::from(rel.is_nan() || rel > 1e-8);
    }

    let mut channels: Vec<(ChannelFsm, f64, usize)> = vec![
        (reference_energy_channel(), 1.0, 20),
        (reference_workload_channel(), 2.5, 20),
    ];
    for _ in 0..3 {
        let m = rng.random_range(1..=4);
        let sigma2 = rng.random_range(0.3..3.0);
        channels.push((random_fsm(&mut rng, m, 1.0, 0.2), sigma2, 8));
    }
    let mut worst_shift: f64 = 0.0;
    let (mut unlogged, mut spurious, mut logged) = (0, 0, 0);
    let search = IntervalSearch::default();
    for (fsm, sigma2, horizon) in &channels {
        let base = iid_backward_induction(fsm, *sigma2, *horizon, &search).map_err(|e| e.to_string())?;
        let fine = iid_backward_induction(fsm, *sigma2, *horizon, &search.doubled()).map_err(|e| e.to_string())?;
        for n in 1..=*horizon {
            for q in 0..fsm.num_states() {
                worst_shift = worst_shift.max((base.value(n, q) - fine.value(n, q)).abs() / sigma2);
            }
        }
        let (u, s) = asymmetry_consistency(fsm, &base);
        unlogged += u;
        spurious += s;
        logged += base.asymmetry_log.len();
    }
    Ok((
        cost_failures == 0 && worst_shift <= 1e-4 && unlogged == 0 && spurious == 0,
        format!(
            "1000 tuples: max relative error {worst_rel:.1e}, {cost_failures} over 1e-8; \
             doubled search moves values by at most {worst_shift:.1e} sigma^2; \
             {logged} logged asymmetric optima, {unlogged} unlogged, {spurious} not genuine"
        ),
    ))
}

fn agreement(s: &Solved) -> Outcome {
    let plant = reference_plant();
    let mut lines = Vec::new();
    let mut ok = true;
    let start = Instant::now();
    for (name, fsm, report) in [
        ("energy", reference_energy_channel(), &s.energy),
        ("workload", reference_workload_channel(), &s.workload),
    ] {
        let sim = simulate(&plant, &fsm, &report.policy(), &SimConfig::new(MC_TRIALS, MC_SEED)).map_err(|e| e.to_string())?;
        let v1 = report.table.initial_value();
        let z = (sim.total_mean - v1) / sim.total_se;
        ok &= z.abs() <= 3.0;
        lines.push(format!("{name} {:.4} +- {:.4} vs V1 {v1:.4} ({z:+.2} SE)", sim.total_mean, sim.total_se));
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok((ok && seconds < MC_BUDGET_S, format!("{}; {seconds:.2} s", lines.join(", "))))
}

fn closed_forms() -> Outcome {
    let plant = PlantModel::new(1.0, 1.0, 0.0, 2).map_err(|e| e.to_string())?;
    let exact = open_loop_cost(plant.a, plant.sigma2, plant.horizon);
    let useless = ChannelFsm::memoryless(1.0).map_err(|e| e.to_string())?;
    let grid = ErrorGrid::auto(&plant, GRID_POINTS, MAX_HALF_WIDTH).map_err(|e| e.to_string())?;
    let (table, _) = backward_induction(&plant, &useless, grid, DEFAULT_VALUE_CAP).map_err(|e| e.to_string())?;
    let dp = table.initial_value();
    let never = constant_policy(&plant, &useless, Timing::Recursive, StageRule::Never);
    let sim = simulate(&plant, &useless, &never, &SimConfig::new(MC_TRIALS, MC_SEED)).map_err(|e| e.to_string())?;
    let free = ChannelFsm::memoryless(0.0).map_err(|e| e.to_string())?;
    let always = constant_policy(&plant, &free, Timing::Recursive, StageRule::Always);
    let zero = simulate(&plant, &free, &always, &SimConfig::new(MC_TRIALS, MC_SEED)).map_err(|e| e.to_string())?;
    let dp_ok = (dp - exact).abs() <= 1e-9 * exact;
    let sim_ok = (sim.total_mean - exact).abs() <= 3.0 * sim.total_se;
    Ok((
        exact == 3.0 && dp_ok && sim_ok && zero.total_mean == 0.0,
        format!(
            "never-transmit {exact}: DP {dp:.12}, simulation {:.4} +- {:.4}; always-transmit on p = 0: {}",
            sim.total_mean, sim.total_se, zero.total_mean
        ),
    ))
}

fn main() -> ExitCode {
    let solved = solve_all();
    let with_solved = |f: fn(&Solved) -> Outcome| -> Outcome {
        match &solved {
            Ok(s) => f(s),
            Err(e) => Err(format!("reference solve failed: {e}")),
        }
    };
    let results = [
        with_solved(energy_thresholds),
        with_solved(workload_thresholds),
        with_solved(small_drop_sweep),
        with_solved(value_structure),
        with_solved(curvature),
        expectation_shape(),
        with_solved(agreement),
        discrete_oracle(),
        iid_solver(),
        closed_forms(),
    ];
    let mut passed = 0;
    for (i, r) in results.iter().enumerate() {
        let (ok, detail) = match r {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        passed += usize::from(ok);
        println!("criterion {:>2}: {} {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
