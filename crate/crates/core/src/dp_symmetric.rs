//! Backward induction over (error, channel state) for symmetric policies.
//!
//! `V[N+1](e, q) = e^2` and, for `n = N..1`,
//!
//! ```text
//! C0(e, q) = e^2 + E[V[n+1](a e + W, q0)]
//! C1(e, q) = p e^2 + p E[V[n+1](a e + W, q1)] + (1 - p) E[V[n+1](W, q1)]
//! V[n](e, q) = min(C0, C1)
//! ```
//!
//! with `q0`, `q1` the silent and transmit successors of `q` and `p` its drop
//! probability. Ties go to silence. Masked states only have `C0`.

use rayon::prelude::*;

use crate::channel::ChannelFsm;
use crate::error::{Error, Result};
use crate::policy::{extract_threshold, Extraction, StageRule, Timing, TransmitPolicy};
use crate::process::PlantModel;
use crate::quadrature::{
    directional_difference_quotient, gaussian_expectation, gaussian_mean, is_symmetric_nondecreasing,
    ErrorGrid, GridFunction, ShapeViolation, KERNEL_SIGMAS,
};

pub const DEFAULT_VALUE_CAP: f64 = 1e12;

/// Value functions and the two branch costs of every stage.
#[derive(Debug, Clone)]
pub struct ValueTable {
    grid: ErrorGrid,
    plant: PlantModel,
    fsm: ChannelFsm,
    /// `values[n - 1][q]` for `n = 1..=N+1`.
    values: Vec<Vec<GridFunction>>,
    /// `silent[n - 1][q]` for `n = 1..=N`.
    silent: Vec<Vec<GridFunction>>,
    /// `attempt[n - 1][q]`, `None` at masked states.
    attempt: Vec<Vec<Option<GridFunction>>>,
    transmit: Vec<Vec<Vec<bool>>>,
}

impl ValueTable {
    pub fn grid(&self) -> &ErrorGrid {
        &self.grid
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn fsm(&self) -> &ChannelFsm {
        &self.fsm
    }

    pub fn horizon(&self) -> usize {
        self.plant.horizon
    }

    /// `V[n](., q)` for `n = 1..=N+1`.
    pub fn value(&self, n: usize, q: usize) -> &GridFunction {
        &self.values[n - 1][q]
    }

    /// Cost-to-go when staying silent, `n = 1..=N`.
    pub fn cost_silent(&self, n: usize, q: usize) -> &GridFunction {
        &self.silent[n - 1][q]
    }

    /// Cost-to-go when attempting a transmission, `None` at masked states.
    pub fn cost_attempt(&self, n: usize, q: usize) -> Option<&GridFunction> {
        self.attempt[n - 1][q].as_ref()
    }

    pub fn transmit(&self, n: usize, q: usize) -> &[bool] {
        &self.transmit[n - 1][q]
    }

    /// Optimal total cost from zero initial error in the initial channel state.
    pub fn initial_value(&self) -> f64 {
        self.value(1, self.fsm.initial_state()).values()[self.grid.center()]
    }

    /// Adds `delta` to one stored value. Used to plant defects when
    /// exercising the structure checks.
    pub fn perturb(&mut self, n: usize, q: usize, i: usize, delta: f64) {
        let slot = &mut self.values[n - 1][q];
        let mut v = slot.values().to_vec();
        v[i] += delta;
        *slot = GridFunction::new(self.grid, v).expect("same grid");
    }

    /// Gridded optimal policy over stages `1..=N`.
    pub fn gridded_policy(&self) -> TransmitPolicy {
        let rules = self
            .transmit
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|t| StageRule::Gridded { grid: self.grid, transmit: t.clone() })
                    .collect()
            })
            .collect();
        TransmitPolicy::for_channel(&self.fsm, Timing::Recursive, rules).expect("sized from the channel")
    }
}

/// Solves the symmetric-policy dynamic program on `grid`.
pub fn backward_induction(
    plant: &PlantModel,
    fsm: &ChannelFsm,
    grid: ErrorGrid,
    value_cap: f64,
) -> Result<(ValueTable, TransmitPolicy)> {
    plant.validate()?;
    let n_stages = plant.horizon;
    let m = fsm.num_states();
    let (a, s2) = (plant.a, plant.sigma2);
    let squares: Vec<f64> = grid.points().iter().map(|e| e * e).collect();
    let terminal = GridFunction::new(grid, squares.clone())?;

    let mut values = vec![Vec::new(); n_stages + 1];
    values[n_stages] = vec![terminal; m];
    let mut silent = vec![Vec::new(); n_stages];
    let mut attempt = vec![Vec::new(); n_stages];
    let mut transmit = vec![Vec::new(); n_stages];

    for n in (1..=n_stages).rev() {
        let next = &values[n];
        let expectations: Vec<(GridFunction, f64)> = next
            .par_iter()
            .map(|v| (gaussian_expectation(v, a, s2), gaussian_mean(v, s2)))
            .collect();

        let stage: Vec<_> = (0..m)
            .into_par_iter()
            .map(|q| {
                let (h0, _) = &expectations[fsm.next_silent(q)];
                let c0: Vec<f64> = squares.iter().zip(h0.values()).map(|(e2, h)| e2 + h).collect();
                let Some(q1) = fsm.next_transmit(q) else {
                    let c0 = GridFunction::new(grid, c0).expect("same grid");
                    return (c0.clone(), c0, None, vec![false; grid.num_points()]);
                };
                let p = fsm.drop_prob(q);
                let (h1, mean1) = &expectations[q1];
                let reset = (1.0 - p) * mean1;
                let c1: Vec<f64> = squares
                    .iter()
                    .zip(h1.values())
                    .map(|(e2, h)| p * e2 + p * h + reset)
                    .collect();
                let t: Vec<bool> = c0.iter().zip(&c1).map(|(x0, x1)| x1 < x0).collect();
                let v: Vec<f64> = c0
                    .iter()
                    .zip(&c1)
                    .zip(&t)
                    .map(|((&x0, &x1), &go)| if go { x1 } else { x0 })
                    .collect();
                (
                    GridFunction::new(grid, v).expect("same grid"),
                    GridFunction::new(grid, c0).expect("same grid"),
                    Some(GridFunction::new(grid, c1).expect("same grid")),
                    t,
                )
            })
            .collect();

        let mut vs = Vec::with_capacity(m);
        for (q, (v, c0, c1, t)) in stage.into_iter().enumerate() {
            let worst = v.values().iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
            if !(worst <= value_cap) {
                return Err(Error::ValueOverflow { stage: n, state: q, value: worst, cap: value_cap });
            }
            vs.push(v);
            silent[n - 1].push(c0);
            attempt[n - 1].push(c1);
            transmit[n - 1].push(t);
        }
        values[n - 1] = vs;
    }

    let table = ValueTable {
        grid,
        plant: *plant,
        fsm: fsm.clone(),
        values,
        silent,
        attempt,
        transmit,
    };
    let policy = table.gridded_policy();
    Ok((table, policy))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructureIssue {
    Shape(ShapeViolation),
    MinimumOffOrigin { argmin: f64, min: f64, at_origin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureViolation {
    pub stage: usize,
    pub state: usize,
    pub issue: StructureIssue,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructureReport {
    pub checked: usize,
    pub violations: Vec<StructureViolation>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every `V[n](., q)` is symmetric, non-decreasing in `|e|` and
/// minimised at the origin. `tol` is relative to each slice's value range.
pub fn check_value_structure(table: &ValueTable, tol: f64) -> StructureReport {
    let mut report = StructureReport::default();
    let c = table.grid.center();
    for (stage, slices) in table.values.iter().enumerate() {
        for (q, v) in slices.iter().enumerate() {
            report.checked += 1;
            let (lo, hi) = v.min_max();
            let abs_tol = tol * (hi - lo);
            let push = |issue| StructureViolation { stage: stage + 1, state: q, issue };
            if let (false, Some(s)) = is_symmetric_nondecreasing(v, abs_tol) {
                report.violations.push(push(StructureIssue::Shape(s)));
            }
            let at_origin = v.values()[c];
            if at_origin > lo + abs_tol {
                let i = v.values().iter().position(|&x| x == lo).unwrap_or(c);
                report.violations.push(push(StructureIssue::MinimumOffOrigin {
                    argmin: table.grid.point(i),
                    min: lo,
                    at_origin,
                }));
            }
        }
    }
    report
}

/// Per-stage bound `2 a^2 (N + 1 - n) + a^2` on the difference quotients of
/// the expected next-stage value, and the drop-probability level it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBound {
    /// Indexed by `n - 1` for `n = 1..=N+1`.
    pub v_prime: Vec<f64>,
    pub v: f64,
    pub threshold_condition: f64,
}

impl CurvatureBound {
    pub fn new(plant: &PlantModel) -> Self {
        let a2 = plant.a * plant.a;
        let big_n = plant.horizon;
        let v_prime: Vec<f64> = (1..=big_n + 1)
            .map(|n| 2.0 * a2 * (big_n + 1 - n) as f64 + a2)
            .collect();
        let v = v_prime[0];
        Self { v_prime, v, threshold_condition: 1.0 / (1.0 + v) }
    }

    pub fn at(&self, n: usize) -> f64 {
        self.v_prime[n - 1]
    }
}

/// Whether every state that may transmit has drop probability below
/// `1 / (1 + v)`, the sufficient condition for threshold optimality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallDropCondition {
    pub v: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

pub fn small_drop_condition(plant: &PlantModel, fsm: &ChannelFsm) -> SmallDropCondition {
    let bound = CurvatureBound::new(plant);
    let satisfied = (0..fsm.num_states())
        .filter(|&q| fsm.transmit_allowed(q))
        .all(|q| fsm.drop_prob(q) < bound.threshold_condition);
    SmallDropCondition { v: bound.v, threshold: bound.threshold_condition, satisfied }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientExcess {
    pub stage: usize,
    pub state: usize,
    pub e: f64,
    pub quotient: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundReport {
    pub checked: usize,
    /// Largest `quotient - bound` seen.
    pub max_excess: f64,
    pub violations: Vec<QuotientExcess>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `O[n](e, q) <= v'[n] + slack` for every stage `n = 1..=N+1`, state
/// and grid point `e >= 0` whose quotient does not touch the tail model.
pub fn check_curvature_bound(table: &ValueTable, slack: f64) -> BoundReport {
    let plant = &table.plant;
    let bound = CurvatureBound::new(plant);
    let grid = table.grid;
    let d = grid.spacing();
    let reach = KERNEL_SIGMAS * plant.sigma();
    let interior: Vec<f64> = (grid.center()..grid.num_points())
        .map(|i| grid.point(i))
        .filter(|e| plant.a.abs() * (e + d) + reach <= grid.half_width())
        .collect();

    type SliceQuotients = (usize, usize, Vec<(f64, f64)>);
    let per_slice: Vec<SliceQuotients> = table
        .values
        .par_iter()
        .enumerate()
        .flat_map_iter(|(stage, slices)| {
            slices.iter().enumerate().map(move |(q, v)| (stage + 1, q, v))
        })
        .map(|(n, q, v)| {
            let h = gaussian_expectation(v, plant.a, plant.sigma2);
            let quotients = interior
                .iter()
                .filter_map(|&e| directional_difference_quotient(&h, e).ok().map(|o| (e, o)))
                .collect();
            (n, q, quotients)
        })
        .collect();

    let mut report = BoundReport { max_excess: f64::NEG_INFINITY, ..Default::default() };
    for (n, q, quotients) in per_slice {
        let b = bound.at(n);
        for (e, o) in quotients {
            report.checked += 1;
            report.max_excess = report.max_excess.max(o - b);
            if o > b + slack {
                report.violations.push(QuotientExcess { stage: n, state: q, e, quotient: o, bound: b });
            }
        }
    }
    report
}

/// Optimal gridded solution plus the threshold read off every (stage, state).
#[derive(Debug, Clone)]
pub struct ThresholdReport {
    pub table: ValueTable,
    /// `extractions[n - 1][q]`.
    pub extractions: Vec<Vec<Extraction>>,
    /// `reachable[n - 1][q]` from the initial state.
    pub reachable: Vec<Vec<bool>>,
}

impl ThresholdReport {
    pub fn extraction(&self, n: usize, q: usize) -> &Extraction {
        &self.extractions[n - 1][q]
    }

    /// `(n, q, witness)` for every pair whose optimal rule is not threshold-shaped.
    pub fn witnesses(&self, reachable_only: bool) -> Vec<(usize, usize, Extraction)> {
        self.pairs(reachable_only)
            .filter(|&(n, q)| !matches!(self.extraction(n, q), Extraction::Threshold(_)))
            .map(|(n, q)| (n, q, self.extraction(n, q).clone()))
            .collect()
    }

    /// All `(n, q)` pairs, optionally only those reachable from the initial state.
    pub fn pairs(&self, reachable_only: bool) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.table.fsm.num_states();
        (1..=self.table.horizon())
            .flat_map(move |n| (0..m).map(move |q| (n, q)))
            .filter(move |&(n, q)| !reachable_only || self.reachable[n - 1][q])
    }

    /// Symmetric threshold rules where extraction succeeded, the gridded
    /// optimum elsewhere.
    pub fn policy(&self) -> TransmitPolicy {
        let rules = self
            .extractions
            .iter()
            .enumerate()
            .map(|(stage, row)| {
                row.iter()
                    .enumerate()
                    .map(|(q, ex)| match ex {
                        Extraction::Threshold(rule) => rule.clone(),
                        _ => StageRule::Gridded {
                            grid: self.table.grid,
                            transmit: self.table.transmit[stage][q].clone(),
                        },
                    })
                    .collect()
            })
            .collect();
        TransmitPolicy::for_channel(&self.table.fsm, Timing::Recursive, rules).expect("sized from the channel")
    }
}

/// Runs the solver and extracts a symmetric threshold at every (stage, state).
pub fn solve_and_extract(
    plant: &PlantModel,
    fsm: &ChannelFsm,
    grid: ErrorGrid,
    value_cap: f64,
) -> Result<ThresholdReport> {
    let (table, _) = backward_induction(plant, fsm, grid, value_cap)?;
    let extractions = table
        .transmit
        .iter()
        .map(|stage| stage.iter().map(|t| extract_threshold(&grid, t, true)).collect())
        .collect();
    let reachable = fsm.reachable(plant.horizon);
    Ok(ThresholdReport { table, extractions, reachable })
}
