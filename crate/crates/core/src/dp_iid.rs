//! Dynamic program for a white Gaussian source (`a = 0`).
//!
//! With an independent source the stage cost depends only on the channel
//! state and the current interval rule, so the value function lives on the
//! channel states alone. Each (stage, state) optimises a silent interval
//! `[lo, hi]` with closed-form truncated moments; the interval may be
//! asymmetric because the estimator tells an erased attempt from silence.

use serde::Serialize;

use crate::channel::ChannelFsm;
use crate::error::{Error, Result};
use crate::policy::{StageRule, Timing, TransmitPolicy};
use crate::quadrature::{normalise, PartialMoments};

/// Stage cost of one interval rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCost {
    pub cost: f64,
    pub p_transmit: f64,
    pub silent: PartialMoments,
    pub attempted: PartialMoments,
    lo: f64,
    hi: f64,
}

impl StageCost {
    /// Conditional mean given silence.
    pub fn silent_estimate(&self) -> Result<f64> {
        Ok(normalise(self.silent, self.lo, self.hi)?.mean)
    }

    /// Conditional mean given an attempted (and erased) transmission.
    pub fn attempt_estimate(&self) -> Result<f64> {
        Ok(normalise(self.attempted, self.hi, self.lo)?.mean)
    }
}

/// Expected squared error of one stage when the encoder stays silent on
/// `[lo, hi]` and attempts a transmission outside it. `lo == hi` means
/// always transmit.
pub fn iid_stage_cost(sigma2: f64, p_drop: f64, lo: f64, hi: f64) -> Result<StageCost> {
    if !(sigma2 > 0.0) || !(0.0..=1.0).contains(&p_drop) || !(lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "stage cost needs sigma2 > 0, p in [0, 1], lo <= hi; got {sigma2}, {p_drop}, [{lo}, {hi}]"
        )));
    }
    let silent = PartialMoments::on(sigma2, lo, hi);
    let attempted = PartialMoments::outside(sigma2, lo, hi);
    Ok(StageCost {
        cost: silent.residual() + p_drop * attempted.residual(),
        p_transmit: attempted.m0,
        silent,
        attempted,
        lo,
        hi,
    })
}

/// Resolution of the interval search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct IntervalSearch {
    /// Coarse grid points per axis.
    pub coarse_points: usize,
    /// Half-width of the search box in standard deviations; box edges stand
    /// for infinite endpoints.
    pub span_sigmas: f64,
    /// Final step of the pattern search in standard deviations.
    pub tol_sigmas: f64,
}

impl Default for IntervalSearch {
    fn default() -> Self {
        Self { coarse_points: 121, span_sigmas: 6.0, tol_sigmas: 1e-6 }
    }
}

impl IntervalSearch {
    pub fn doubled(self) -> Self {
        Self { coarse_points: 2 * self.coarse_points - 1, ..self }
    }
}

/// Best interval rule for one (stage, state) problem.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalChoice {
    pub rule: StageRule,
    pub lo: f64,
    pub hi: f64,
    pub objective: f64,
    pub p_transmit: f64,
}

struct Objective {
    sigma2: f64,
    p_drop: f64,
    gap: f64,
    bound: f64,
}

impl Objective {
    fn endpoint(&self, x: f64) -> f64 {
        if x <= -self.bound {
            f64::NEG_INFINITY
        } else if x >= self.bound {
            f64::INFINITY
        } else {
            x
        }
    }

    fn eval(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = (self.endpoint(lo), self.endpoint(hi));
        let c = iid_stage_cost(self.sigma2, self.p_drop, lo, hi).expect("lo <= hi inside the box");
        c.cost + c.p_transmit * self.gap
    }

    fn choice(&self, lo: f64, hi: f64) -> IntervalChoice {
        let (lo, hi) = (self.endpoint(lo), self.endpoint(hi));
        let rule = if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            StageRule::Never
        } else if lo >= hi {
            StageRule::Always
        } else {
            StageRule::Interval { lo, hi }
        };
        let (lo, hi) = match rule {
            StageRule::Always => (0.0, 0.0),
            _ => (lo, hi),
        };
        let c = iid_stage_cost(self.sigma2, self.p_drop, lo, hi).expect("valid interval");
        IntervalChoice { rule, lo, hi, objective: c.cost + c.p_transmit * self.gap, p_transmit: c.p_transmit }
    }
}

/// Pattern search over `(lo, hi)` from a starting point, halving the step
/// until it falls below `tol`. `shape` maps a candidate onto the feasible set.
fn refine(
    f: &impl Fn(f64, f64) -> f64,
    mut x: (f64, f64),
    mut step: f64,
    tol: f64,
    moves: &[(f64, f64)],
    bound: f64,
) -> ((f64, f64), f64) {
    let mut fx = f(x.0, x.1);
    while step >= tol {
        let mut best = (x, fx);
        for &(dl, dh) in moves {
            let lo = (x.0 + dl * step).clamp(-bound, bound);
            let hi = (x.1 + dh * step).clamp(-bound, bound);
            if lo > hi {
                continue;
            }
            let v = f(lo, hi);
            if v < best.1 {
                best = ((lo, hi), v);
            }
        }
        if best.1 < fx {
            (x, fx) = best;
        } else {
            step /= 2.0;
        }
    }
    (x, fx)
}

/// Minimises stage cost plus `p_transmit * continuation_gap` over silent
/// intervals `[lo, hi]`.
pub fn optimize_interval(
    sigma2: f64,
    p_drop: f64,
    continuation_gap: f64,
    search: &IntervalSearch,
) -> IntervalChoice {
    let sigma = sigma2.sqrt();
    let obj = Objective { sigma2, p_drop, gap: continuation_gap, bound: search.span_sigmas * sigma };
    let b = obj.bound;
    let k = search.coarse_points.max(2);
    let h = 2.0 * b / (k - 1) as f64;
    let xs: Vec<f64> = (0..k).map(|i| -b + i as f64 * h).collect();

    let mut best = ((0.0, 0.0), f64::INFINITY);
    for (i, &lo) in xs.iter().enumerate() {
        for &hi in &xs[i..] {
            let v = obj.eval(lo, hi);
            if v < best.1 {
                best = ((lo, hi), v);
            }
        }
    }
    let moves = [
        (1.0, 0.0),
        (-1.0, 0.0),
        (0.0, 1.0),
        (0.0, -1.0),
        (1.0, 1.0),
        (-1.0, -1.0),
        (-1.0, 1.0),
        (1.0, -1.0),
    ];
    let ((lo, hi), _) = refine(&|l, u| obj.eval(l, u), best.0, h, search.tol_sigmas * sigma, &moves, b);
    pick_best(&obj, lo, hi)
}

/// Best symmetric silent interval `[-tau, tau]`.
pub fn optimize_symmetric_interval(
    sigma2: f64,
    p_drop: f64,
    continuation_gap: f64,
    search: &IntervalSearch,
) -> IntervalChoice {
    let sigma = sigma2.sqrt();
    let obj = Objective { sigma2, p_drop, gap: continuation_gap, bound: search.span_sigmas * sigma };
    let b = obj.bound;
    let k = search.coarse_points.max(2);
    let h = b / (k - 1) as f64;
    let mut best = (0.0, f64::INFINITY);
    for i in 0..k {
        let tau = i as f64 * h;
        let v = obj.eval(-tau, tau);
        if v < best.1 {
            best = (tau, v);
        }
    }
    let ((lo, hi), _) = refine(
        &|l, u| obj.eval(l, u),
        (-best.0, best.0),
        h,
        search.tol_sigmas * sigma,
        &[(-1.0, 1.0), (1.0, -1.0)],
        b,
    );
    pick_best(&obj, lo, hi)
}

/// Compares the refined candidate with the never- and always-transmit
/// rules; ties favour silence.
fn pick_best(obj: &Objective, lo: f64, hi: f64) -> IntervalChoice {
    let never = obj.choice(f64::NEG_INFINITY, f64::INFINITY);
    let always = obj.choice(0.0, 0.0);
    let found = obj.choice(lo, hi);
    [never, always, found]
        .into_iter()
        .reduce(|best, c| if c.objective < best.objective { c } else { best })
        .expect("three candidates")
}

/// A (stage, state) where the best interval beats the best symmetric one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymmetryEntry {
    pub stage: usize,
    pub state: usize,
    pub objective: f64,
    pub symmetric_objective: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Channel-state value function and optimal interval rules.
#[derive(Debug, Clone)]
pub struct IidValueTable {
    sigma2: f64,
    fsm: ChannelFsm,
    /// `values[n - 1][q]` for `n = 1..=N+1`.
    values: Vec<Vec<f64>>,
    /// `choices[n - 1][q]` for `n = 1..=N`.
    choices: Vec<Vec<IntervalChoice>>,
    /// Best symmetric objective per (stage, state).
    symmetric: Vec<Vec<f64>>,
    pub asymmetry_log: Vec<AsymmetryEntry>,
}

impl IidValueTable {
    pub fn horizon(&self) -> usize {
        self.choices.len()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn value(&self, n: usize, q: usize) -> f64 {
        self.values[n - 1][q]
    }

    pub fn choice(&self, n: usize, q: usize) -> &IntervalChoice {
        &self.choices[n - 1][q]
    }

    pub fn symmetric_objective(&self, n: usize, q: usize) -> f64 {
        self.symmetric[n - 1][q]
    }

    pub fn initial_value(&self) -> f64 {
        self.value(1, self.fsm.initial_state())
    }

    pub fn policy(&self) -> TransmitPolicy {
        let rules = self
            .choices
            .iter()
            .map(|row| row.iter().map(|c| c.rule.clone()).collect())
            .collect();
        TransmitPolicy::for_channel(&self.fsm, Timing::Memoryless, rules).expect("sized from the channel")
    }
}

/// Objective improvements below this (times `sigma2`) are not logged as asymmetry.
pub const ASYMMETRY_TOLERANCE: f64 = 1e-9;

pub fn iid_backward_induction(
    fsm: &ChannelFsm,
    sigma2: f64,
    horizon: usize,
    search: &IntervalSearch,
) -> Result<IidValueTable> {
    if !(sigma2 > 0.0) || horizon == 0 {
        return Err(Error::InvalidArgument(format!(
            "need sigma2 > 0 and horizon >= 1, got {sigma2}, {horizon}"
        )));
    }
    let m = fsm.num_states();
    let mut values = vec![vec![0.0; m]; horizon + 1];
    let mut choices = vec![Vec::with_capacity(m); horizon];
    let mut symmetric = vec![Vec::with_capacity(m); horizon];
    let mut asymmetry_log = Vec::new();

    for n in (1..=horizon).rev() {
        let next = values[n].clone();
        let solved: Vec<(IntervalChoice, f64)> = {
            use rayon::prelude::*;
            (0..m)
                .into_par_iter()
                .map(|q| {
                    let q0 = fsm.next_silent(q);
                    match fsm.next_transmit(q) {
                        None => {
                            let c = IntervalChoice {
                                rule: StageRule::Never,
                                lo: f64::NEG_INFINITY,
                                hi: f64::INFINITY,
                                objective: sigma2,
                                p_transmit: 0.0,
                            };
                            (c, sigma2)
                        }
                        Some(q1) => {
                            let gap = next[q1] - next[q0];
                            let p = fsm.drop_prob(q);
                            let best = optimize_interval(sigma2, p, gap, search);
                            let sym = optimize_symmetric_interval(sigma2, p, gap, search);
                            (best, sym.objective)
                        }
                    }
                })
                .collect()
        };
        for (q, (choice, sym)) in solved.into_iter().enumerate() {
            let v = choice.objective + next[fsm.next_silent(q)];
            values[n - 1][q] = v;
            if sym - choice.objective > ASYMMETRY_TOLERANCE * sigma2 {
                asymmetry_log.push(AsymmetryEntry {
                    stage: n,
                    state: q,
                    objective: choice.objective,
                    symmetric_objective: sym,
                    lo: choice.lo,
                    hi: choice.hi,
                });
            }
            choices[n - 1].push(choice);
            symmetric[n - 1].push(sym);
        }
    }
    asymmetry_log.sort_by_key(|e| (e.stage, e.state));
    Ok(IidValueTable { sigma2, fsm: fsm.clone(), values, choices, symmetric, asymmetry_log })
}
