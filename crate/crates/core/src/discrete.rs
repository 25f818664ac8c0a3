//! Finite-support instances with a white source, solved two ways: by
//! enumerating every deterministic stage-wise policy and walking the full
//! outcome tree, and by backward induction over transmit subsets.
//!
//! A policy assigns a transmit subset of the support (a bit mask over the
//! sorted support points) to every reachable (stage, state) pair.

use rand::Rng;

use crate::channel::ChannelFsm;
use crate::error::{Error, Result};

/// Enumeration bound for [`exhaustive_policy_search`].
pub const ENUMERATION_LIMIT: u128 = 10_000_000;
/// Minimisers of the exhaustive search are kept up to this count.
pub const MINIMIZER_STORE_LIMIT: usize = 100_000;
/// Relative tolerance deciding ties between policy costs.
pub const TIE_TOLERANCE: f64 = 1e-12;

const MAX_SUPPORT: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    /// `(value, probability)`, sorted by value with distinct values.
    support: Vec<(f64, f64)>,
    fsm: ChannelFsm,
    horizon: usize,
}

impl DiscreteInstance {
    pub fn new(mut support: Vec<(f64, f64)>, fsm: ChannelFsm, horizon: usize) -> Result<Self> {
        if support.is_empty() || support.len() > MAX_SUPPORT {
            return Err(Error::InvalidArgument(format!(
                "support needs 1..={MAX_SUPPORT} points, got {}",
                support.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        if support.iter().any(|&(v, p)| !v.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidArgument("support values must be finite, probabilities in [0, 1]".into()));
        }
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("support probabilities sum to {total}, not 1")));
        }
        support.sort_by(|a, b| a.0.total_cmp(&b.0));
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("support values must be distinct".into()));
        }
        Ok(Self { support, fsm, horizon })
    }

    /// `N(0, sigma2)` quantised to `points`, each carrying the mass of its
    /// nearest-point cell.
    pub fn quantized_gaussian(points: &[f64], sigma2: f64, fsm: ChannelFsm, horizon: usize) -> Result<Self> {
        let mut pts = points.to_vec();
        pts.sort_by(f64::total_cmp);
        let sigma = sigma2.sqrt();
        let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-x / (sigma * std::f64::consts::SQRT_2));
        let edges: Vec<f64> = pts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut support = Vec::with_capacity(pts.len());
        for (i, &v) in pts.iter().enumerate() {
            let lo = if i == 0 { 0.0 } else { cdf(edges[i - 1]) };
            let hi = if i + 1 == pts.len() { 1.0 } else { cdf(edges[i]) };
            support.push((v, hi - lo));
        }
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        for s in &mut support {
            s.1 /= total;
        }
        Self::new(support, fsm, horizon)
    }

    /// Random instance: support of `1..=max_support` points, an FSM of
    /// `1..=max_states` states and horizon `1..=max_horizon`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        max_support: usize,
        max_states: usize,
        max_horizon: usize,
        symmetric_support: bool,
    ) -> Self {
        let k = rng.random_range(1..=max_support.max(1));
        let support = if symmetric_support {
            let half: Vec<f64> = {
                let mut v: Vec<f64> = (0..k / 2).map(|_| rng.random_range(0.1..3.0)).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            };
            let weights: Vec<f64> = half.iter().map(|_| rng.random_range(0.05..1.0)).collect();
            let mut pts: Vec<(f64, f64)> = half.iter().zip(&weights).flat_map(|(&x, &w)| [(x, w), (-x, w)]).collect();
            if k % 2 == 1 || pts.is_empty() {
                pts.push((0.0, rng.random_range(0.05..1.0)));
            }
            pts
        } else {
            let mut pts: Vec<(f64, f64)> =
                (0..k).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.05..1.0))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            pts.dedup_by(|a, b| a.0 == b.0);
            pts
        };
        let total: f64 = support.iter().map(|&(_, p)| p).sum();
        let support = support.into_iter().map(|(x, p)| (x, p / total)).collect();
        let m = rng.random_range(1..=max_states.max(1));
        let fsm = crate::scenarios::random_fsm(rng, m, 1.0, 0.3);
        let horizon = rng.random_range(1..=max_horizon.max(1));
        Self::new(support, fsm, horizon).expect("generated instance is valid")
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn fsm(&self) -> &ChannelFsm {
        &self.fsm
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Reachable (stage, state) pairs at which transmission is allowed.
    pub fn decision_pairs(&self) -> Vec<(usize, usize)> {
        let reach = self.fsm.reachable(self.horizon);
        (1..=self.horizon)
            .flat_map(|n| (0..self.fsm.num_states()).map(move |q| (n, q)))
            .filter(|&(n, q)| reach[n - 1][q] && self.fsm.transmit_allowed(q))
            .collect()
    }

    /// Number of policies the exhaustive search visits.
    pub fn enumeration_size(&self) -> u128 {
        let bits = self.support.len() as u32 * self.decision_pairs().len() as u32;
        1u128.checked_shl(bits).unwrap_or(u128::MAX)
    }

    fn full_mask(&self) -> u32 {
        (1u32 << self.support.len()) - 1
    }

    /// Moments of the silent and transmit parts of the support under `mask`.
    fn split(&self, mask: u32) -> Split {
        let mut silent = Moments::default();
        let mut attempted = Moments::default();
        for (i, &(x, p)) in self.support.iter().enumerate() {
            if mask >> i & 1 == 1 {
                attempted.add(x, p);
            } else {
                silent.add(x, p);
            }
        }
        Split { silent, attempted }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    m0: f64,
    m1: f64,
    m2: f64,
}

impl Moments {
    fn add(&mut self, x: f64, p: f64) {
        self.m0 += p;
        self.m1 += p * x;
        self.m2 += p * x * x;
    }

    fn residual(&self) -> f64 {
        if self.m0 <= 0.0 {
            0.0
        } else {
            (self.m2 - self.m1 * self.m1 / self.m0).max(0.0)
        }
    }
}

struct Split {
    silent: Moments,
    attempted: Moments,
}

/// Transmit mask per stage and state: `masks[n - 1][q]`, bit `i` set when
/// the `i`-th smallest support point transmits. Pairs outside the decision
/// set hold 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscretePolicy {
    pub masks: Vec<Vec<u32>>,
}

impl DiscretePolicy {
    pub fn mask(&self, n: usize, q: usize) -> u32 {
        self.masks[n - 1][q]
    }
}

/// Whether the silent points of `mask` form one contiguous run of the
/// sorted support (empty and full runs included).
pub fn is_interval_complement(mask: u32, support_len: usize) -> bool {
    let silent: Vec<usize> = (0..support_len).filter(|&i| mask >> i & 1 == 0).collect();
    silent.windows(2).all(|w| w[1] == w[0] + 1)
}

impl DiscretePolicy {
    /// Interval-complement check at every decision pair.
    pub fn is_threshold(&self, inst: &DiscreteInstance) -> bool {
        inst.decision_pairs()
            .into_iter()
            .all(|(n, q)| is_interval_complement(self.mask(n, q), inst.support.len()))
    }
}

/// Exact expected total cost of `policy`, walking every noise and drop
/// outcome and forming the estimator's conditional mean at each node from
/// the partition the policy induces there.
pub fn evaluate_policy(inst: &DiscreteInstance, policy: &DiscretePolicy) -> f64 {
    fn walk(inst: &DiscreteInstance, policy: &DiscretePolicy, n: usize, q: usize, weight: f64) -> f64 {
        if n > inst.horizon || weight == 0.0 {
            return 0.0;
        }
        let mask = if inst.fsm.transmit_allowed(q) { policy.mask(n, q) } else { 0 };
        let mut silent = (0.0, 0.0);
        let mut attempted = (0.0, 0.0);
        for (i, &(x, p)) in inst.support.iter().enumerate() {
            let acc = if mask >> i & 1 == 1 { &mut attempted } else { &mut silent };
            acc.0 += p;
            acc.1 += p * x;
        }
        let mean = |(m0, m1): (f64, f64)| if m0 > 0.0 { m1 / m0 } else { 0.0 };
        let (x_silent, x_erased) = (mean(silent), mean(attempted));
        let drop = inst.fsm.drop_prob(q);
        let mut cost = 0.0;
        for (i, &(x, p)) in inst.support.iter().enumerate() {
            if mask >> i & 1 == 1 {
                let erased = weight * p * drop;
                cost += erased * (x - x_erased).powi(2);
                let next = inst.fsm.next_transmit(q).expect("mask is zero at masked states");
                cost += walk(inst, policy, n + 1, next, weight * p);
            } else {
                cost += weight * p * (x - x_silent).powi(2);
                cost += walk(inst, policy, n + 1, inst.fsm.next_silent(q), weight * p);
            }
        }
        cost
    }
    walk(inst, policy, 1, inst.fsm.initial_state(), 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub cost: f64,
    /// Minimisers within [`TIE_TOLERANCE`], capped at [`MINIMIZER_STORE_LIMIT`].
    pub minimizers: Vec<DiscretePolicy>,
    pub minimizer_count: usize,
    pub evaluated: u64,
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

pub fn exhaustive_policy_search(inst: &DiscreteInstance) -> Result<ExhaustiveResult> {
    let size = inst.enumeration_size();
    if size > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { size, limit: ENUMERATION_LIMIT });
    }
    let pairs = inst.decision_pairs();
    let k = inst.support.len();
    let m = inst.fsm.num_states();
    let mut policy = DiscretePolicy { masks: vec![vec![0; m]; inst.horizon] };
    let mut best = f64::INFINITY;
    let mut minimizers = Vec::new();
    let mut count = 0usize;
    let width = 1u64 << k;
    for code in 0..size as u64 {
        let mut c = code;
        for &(n, q) in &pairs {
            policy.masks[n - 1][q] = (c % width) as u32;
            c /= width;
        }
        let cost = evaluate_policy(inst, &policy);
        if near(cost, best) {
            count += 1;
            if minimizers.len() < MINIMIZER_STORE_LIMIT {
                minimizers.push(policy.clone());
            }
            best = best.min(cost);
        } else if cost < best {
            best = cost;
            minimizers.clear();
            minimizers.push(policy.clone());
            count = 1;
        }
    }
    Ok(ExhaustiveResult { cost: best, minimizers, minimizer_count: count, evaluated: size as u64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDp {
    /// `values[n - 1][q]` for `n = 1..=N+1`.
    pub values: Vec<Vec<f64>>,
    pub policy: DiscretePolicy,
    /// Best cost over interval-complement masks only, per decision stage and state.
    pub interval_values: Vec<Vec<f64>>,
}

/// Backward induction over transmit subsets:
/// `V_n(q) = min_T [res(S) + p_q res(T) + P(S) V_{n+1}(q0) + P(T) V_{n+1}(q1)]`.
pub fn discrete_dp(inst: &DiscreteInstance) -> DiscreteDp {
    let m = inst.fsm.num_states();
    let k = inst.support.len();
    let splits: Vec<Split> = (0..=inst.full_mask()).map(|mask| inst.split(mask)).collect();
    let mut values = vec![vec![0.0; m]; inst.horizon + 1];
    let mut interval_values = vec![vec![0.0; m]; inst.horizon];
    let mut masks = vec![vec![0u32; m]; inst.horizon];
    for n in (1..=inst.horizon).rev() {
        for q in 0..m {
            let v0 = values[n][inst.fsm.next_silent(q)];
            let Some(q1) = inst.fsm.next_transmit(q) else {
                let s = &splits[0];
                values[n - 1][q] = s.silent.residual() + v0;
                interval_values[n - 1][q] = values[n - 1][q];
                continue;
            };
            let v1 = values[n][q1];
            let p = inst.fsm.drop_prob(q);
            let mut best = (f64::INFINITY, 0u32);
            let mut best_interval = f64::INFINITY;
            for (mask, s) in splits.iter().enumerate() {
                let c = s.silent.residual() + p * s.attempted.residual() + s.silent.m0 * v0 + s.attempted.m0 * v1;
                if c < best.0 {
                    best = (c, mask as u32);
                }
                if c < best_interval && is_interval_complement(mask as u32, k) {
                    best_interval = c;
                }
            }
            values[n - 1][q] = best.0;
            masks[n - 1][q] = best.1;
            interval_values[n - 1][q] = best_interval;
        }
    }
    DiscreteDp { values, policy: DiscretePolicy { masks }, interval_values }
}

impl DiscreteDp {
    pub fn initial_value(&self, inst: &DiscreteInstance) -> f64 {
        self.values[0][inst.fsm.initial_state()]
    }
}
