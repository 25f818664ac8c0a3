//! The bundled property suite behind `usedrop verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use usedrop::discrete::{discrete_dp, exhaustive_policy_search, DiscreteInstance};
use usedrop::dp_symmetric::{
    backward_induction, check_curvature_bound, check_value_structure, solve_and_extract, ThresholdReport,
    DEFAULT_VALUE_CAP,
};
use usedrop::policy::{Extraction, StageRule, Timing};
use usedrop::process::predicted_open_loop_cost;
use usedrop::quadrature::{gaussian_expectation, is_symmetric_nondecreasing, ErrorGrid, GridFunction};
use usedrop::scenarios::{random_small_drop_instance, reference_energy_channel, reference_plant, reference_workload_channel};
use usedrop::sim::{constant_policy, simulate, SimConfig};
use usedrop::{ChannelFsm, PlantModel, Result};

use crate::commands::{BOUND_SLACK_SPACINGS, STRUCTURE_TOL};

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub grid_points: usize,
    pub sweep: usize,
    pub oracle_instances: usize,
    pub trials: usize,
    pub inject_defect: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Property {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub properties: Vec<Property>,
}

impl VerifyReport {
    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.properties.push(Property { name: name.into(), passed, detail });
    }

    pub fn first_failure(&self) -> Option<&str> {
        self.properties.iter().find(|p| !p.passed).map(|p| p.name.as_str())
    }
}

/// Reachable pairs among `states` whose optimal rule is not a symmetric
/// threshold; with `finite`, never-transmit does not count as one.
pub fn non_threshold_pairs(report: &ThresholdReport, states: Option<&[usize]>, finite: bool) -> Vec<(usize, usize)> {
    report
        .pairs(true)
        .filter(|(_, q)| states.is_none_or(|s| s.contains(q)))
        .filter(|&(n, q)| match report.extraction(n, q) {
            Extraction::Threshold(StageRule::Symmetric { tau }) => !tau.is_finite(),
            Extraction::Threshold(StageRule::Always) => false,
            Extraction::Threshold(StageRule::Never) => finite,
            _ => true,
        })
        .collect()
}

/// Symmetric step function, non-decreasing in `|x|`, with random jumps.
pub fn random_symmetric_step<R: Rng + ?Sized>(rng: &mut R, grid: ErrorGrid) -> GridFunction {
    let steps = rng.random_range(1..=6);
    let mut edges: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..grid.half_width())).collect();
    edges.sort_by(f64::total_cmp);
    let mut levels = vec![rng.random_range(-2.0..2.0)];
    for _ in 0..steps {
        let last = *levels.last().expect("non-empty");
        levels.push(last + rng.random_range(0.0..3.0));
    }
    GridFunction::from_fn(grid, |x| levels[edges.iter().filter(|&&r| x.abs() >= r).count()])
}

pub fn run_suite(opts: &SuiteOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let plant = reference_plant();
    let grid = ErrorGrid::auto(&plant, opts.grid_points, 200.0)?;

    let energy_fsm = reference_energy_channel();
    let mut energy = solve_and_extract(&plant, &energy_fsm, grid, DEFAULT_VALUE_CAP)?;
    let workload = solve_and_extract(&plant, &reference_workload_channel(), grid, DEFAULT_VALUE_CAP)?;
    if opts.inject_defect {
        let i = grid.center() + grid.num_points() / 10;
        energy.table.perturb(2, energy_fsm.initial_state(), i, -1e3);
    }

    let s_e = check_value_structure(&energy.table, STRUCTURE_TOL);
    let s_w = check_value_structure(&workload.table, STRUCTURE_TOL);
    let first = s_e.violations.first().or(s_w.violations.first());
    report.push(
        "check_value_structure",
        s_e.passed() && s_w.passed(),
        match first {
            None => format!("{} value slices symmetric, non-decreasing in |e|, minimised at 0", s_e.checked + s_w.checked),
            Some(v) => format!("stage {}, state {}: {:?}", v.stage, v.state, v.issue),
        },
    );

    let bad_e = non_threshold_pairs(&energy, Some(&[2, 3, 4]), true);
    let bad_w = non_threshold_pairs(&workload, None, false);
    report.push(
        "threshold_structure",
        bad_e.is_empty() && bad_w.is_empty(),
        format!("reachable pairs without a symmetric threshold: energy {bad_e:?}, workload {bad_w:?}"),
    );

    let slack = BOUND_SLACK_SPACINGS * grid.spacing();
    let bound = check_curvature_bound(&energy.table, slack);
    report.push(
        "curvature_bound",
        bound.passed(),
        format!("{} quotients checked, max excess {:.3e}, slack {slack:.3e}", bound.checked, bound.max_excess),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut witnesses = 0;
    for _ in 0..opts.sweep {
        let (p, fsm) = random_small_drop_instance(&mut rng);
        let g = ErrorGrid::auto(&p, opts.grid_points, 200.0)?;
        let r = solve_and_extract(&p, &fsm, g, DEFAULT_VALUE_CAP)?;
        witnesses += r.witnesses(true).len();
    }
    report.push(
        "small_drop_sweep",
        witnesses == 0,
        format!("{} random small-drop instances, {witnesses} non-threshold reachable pairs", opts.sweep),
    );

    let shape_grid = ErrorGrid::new(10.0, 401)?;
    let mut shape_failures = 0;
    for _ in 0..100 {
        let f = random_symmetric_step(&mut rng, shape_grid);
        let g = random_symmetric_step(&mut rng, shape_grid);
        let a = rng.random_range(-1.5..1.5);
        let h = gaussian_expectation(&f, a, rng.random_range(0.2..2.0));
        let (lo, hi) = h.min_max();
        let h_ok = is_symmetric_nondecreasing(&h, 1e-8 * (hi - lo).max(1.0)).0;
        let m_ok = is_symmetric_nondecreasing(&f.pointwise_min(&g), 0.0).0;
        shape_failures += usize::from(!(h_ok && m_ok));
    }
    report.push(
        "expectation_shape",
        shape_failures == 0,
        format!("100 random symmetric step functions, {shape_failures} failures"),
    );

    let mut mismatches = 0;
    let mut unstructured = 0;
    for _ in 0..opts.oracle_instances {
        let inst = DiscreteInstance::random(&mut rng, 5, 3, 2, false);
        let ex = exhaustive_policy_search(&inst)?;
        let dp = discrete_dp(&inst);
        mismatches += usize::from((ex.cost - dp.initial_value(&inst)).abs() > 1e-12);
        unstructured += usize::from(!ex.minimizers.iter().any(|p| p.is_threshold(&inst)));
    }
    report.push(
        "discrete_oracle",
        mismatches == 0 && unstructured == 0,
        format!(
            "{} instances: {mismatches} value mismatches, {unstructured} without an interval-complement optimiser",
            opts.oracle_instances
        ),
    );

    report.push_closed_forms(opts)?;
    Ok(report)
}

impl VerifyReport {
    fn push_closed_forms(&mut self, opts: &SuiteOptions) -> Result<()> {
        let p = PlantModel::new(1.0, 1.0, 0.0, 2)?;
        let useless = ChannelFsm::memoryless(1.0)?;
        let (table, _) = backward_induction(&p, &useless, ErrorGrid::auto(&p, opts.grid_points, 200.0)?, DEFAULT_VALUE_CAP)?;
        let exact = predicted_open_loop_cost(&p);
        let dp_ok = (table.initial_value() - exact).abs() <= 1e-9 * exact;
        let never = constant_policy(&p, &useless, Timing::Recursive, StageRule::Never);
        let s = simulate(&p, &useless, &never, &SimConfig::new(opts.trials, opts.seed))?;
        let sim_ok = (s.total_mean - exact).abs() <= 3.0 * s.total_se;
        let free = ChannelFsm::memoryless(0.0)?;
        let always = constant_policy(&p, &free, Timing::Recursive, StageRule::Always);
        let zero = simulate(&p, &free, &always, &SimConfig::new(opts.trials.min(10_000), opts.seed))?;
        self.push(
            "closed_forms",
            dp_ok && sim_ok && zero.total_mean == 0.0,
            format!(
                "never-transmit {exact}: DP {}, simulation {} +- {}; always-transmit on a free channel {}",
                table.initial_value(),
                s.total_mean,
                s.total_se,
                zero.total_mean
            ),
        );
        Ok(())
    }
}
