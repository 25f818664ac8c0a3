//! Monte Carlo evaluation of a transmission policy.
//!
//! Trial `t` draws plant noise from ChaCha8 stream `2t` and channel drops
//! from stream `2t + 1` of the run seed, one draw of each per stage, so
//! results do not depend on thread count or trial scheduling.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelFsm;
use crate::error::{Error, Result};
use crate::policy::{StageRule, Timing, TransmitPolicy};
use crate::process::{error_step, PlantModel};

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct SimConfig {
    pub trials: usize,
    pub seed: u64,
    /// Number of leading trials recorded in the trace.
    #[serde(default)]
    pub trace_trials: usize,
}

impl SimConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self { trials, seed, trace_trials: 0 }
    }
}

/// One stage of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub trial: usize,
    pub n: usize,
    pub x: f64,
    pub xhat: f64,
    pub e: f64,
    /// Transmission attempted.
    pub r: u8,
    /// Channel success draw.
    pub c: u8,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub trials: usize,
    pub seed: u64,
    pub timing: String,
    pub stages: usize,
    pub stage_mse: Vec<f64>,
    pub stage_se: Vec<f64>,
    pub total_mean: f64,
    pub total_se: f64,
    /// Attempts per stage, averaged over stages and trials.
    pub transmit_rate: f64,
    pub delivery_rate: f64,
    /// `occupancy[n - 1][q]`: fraction of trials in state `q` at stage `n`.
    pub occupancy: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SimSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The same rule at every state for every stage the timing simulates.
pub fn constant_policy(plant: &PlantModel, fsm: &ChannelFsm, timing: Timing, rule: StageRule) -> TransmitPolicy {
    TransmitPolicy::uniform(fsm, timing, simulated_stages(plant, timing), rule)
}

fn simulated_stages(plant: &PlantModel, timing: Timing) -> usize {
    match timing {
        Timing::Recursive => plant.horizon + 1,
        Timing::Memoryless => plant.horizon,
    }
}

#[derive(Debug, Clone)]
struct Accum {
    stage_sum: Vec<f64>,
    stage_sq: Vec<f64>,
    total_sum: f64,
    total_sq: f64,
    attempts: u64,
    deliveries: u64,
    occupancy: Vec<Vec<u64>>,
}

impl Accum {
    fn new(stages: usize, states: usize) -> Self {
        Self {
            stage_sum: vec![0.0; stages],
            stage_sq: vec![0.0; stages],
            total_sum: 0.0,
            total_sq: 0.0,
            attempts: 0,
            deliveries: 0,
            occupancy: vec![vec![0; states]; stages],
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.stage_sum.iter_mut().zip(&other.stage_sum) {
            *a += b;
        }
        for (a, b) in self.stage_sq.iter_mut().zip(&other.stage_sq) {
            *a += b;
        }
        self.total_sum += other.total_sum;
        self.total_sq += other.total_sq;
        self.attempts += other.attempts;
        self.deliveries += other.deliveries;
        for (ra, rb) in self.occupancy.iter_mut().zip(&other.occupancy) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self
    }
}

/// Ordered pairwise reduction; the tree shape depends only on the length.
fn pairwise(parts: &[Accum]) -> Accum {
    match parts {
        [one] => one.clone(),
        _ => {
            let (l, r) = parts.split_at(parts.len() / 2);
            pairwise(l).merge(&pairwise(r))
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Conditional means of the silent and attempted regions for every
/// (stage, state) of a memoryless policy.
fn memoryless_estimates(policy: &TransmitPolicy, sigma2: f64) -> Vec<Vec<(f64, f64)>> {
    let mean = |p: crate::quadrature::PartialMoments| if p.m0 > 0.0 { p.m1 / p.m0 } else { 0.0 };
    policy
        .rules()
        .iter()
        .map(|row| {
            row.iter()
                .map(|rule| {
                    let (s, a) = rule.region_moments(sigma2);
                    (mean(s), mean(a))
                })
                .collect()
        })
        .collect()
}

pub fn simulate(plant: &PlantModel, fsm: &ChannelFsm, policy: &TransmitPolicy, config: &SimConfig) -> Result<SimSummary> {
    plant.validate()?;
    if config.trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    if policy.stages() > 0 && policy.num_states() != fsm.num_states() {
        return Err(Error::PolicyMismatch { policy: policy.num_states(), channel: fsm.num_states() });
    }
    let timing = policy.timing();
    match timing {
        Timing::Recursive if plant.a != 0.0 && !policy.is_symmetric() => {
            return Err(Error::AsymmetricPolicy { a: plant.a });
        }
        Timing::Memoryless if plant.a != 0.0 => {
            return Err(Error::InvalidArgument(format!(
                "memoryless policies need a white source, got a = {}",
                plant.a
            )));
        }
        _ => {}
    }
    let stages = simulated_stages(plant, timing);
    let m = fsm.num_states();
    let sigma = plant.sigma();
    let estimates = match timing {
        Timing::Memoryless => memoryless_estimates(policy, plant.sigma2),
        Timing::Recursive => Vec::new(),
    };

    let run_trial = |t: usize, acc: &mut Accum, trace: Option<&mut Vec<TraceRow>>| -> Result<()> {
        let mut noise = stream(config.seed, 2 * t as u64);
        let mut drops = stream(config.seed, 2 * t as u64 + 1);
        let mut q = fsm.initial_state();
        // post-transmission error of the previous stage and the noise that
        // drives the next one; both vanish before stage 1 since x0 is known
        let mut post = 0.0;
        let mut w_prev = 0.0;
        let mut x = plant.x0;
        let mut total = 0.0;
        let mut rows = Vec::new();
        for n in 1..=stages {
            let z: f64 = StandardNormal.sample(&mut noise);
            let w = sigma * z;
            let success = fsm.sample_drop(q, &mut drops);
            let e = plant.a * post + w_prev;
            let r = match timing {
                Timing::Recursive => policy.decide(n, q, e),
                Timing::Memoryless => policy.decide(n, q, w),
            };
            let next = fsm.step(q, r)?;
            let delivered = r && success;
            let cost = match timing {
                Timing::Recursive => {
                    post = error_step(plant, post, delivered, w_prev);
                    post * post
                }
                Timing::Memoryless => {
                    let (silent, attempt) = estimates.get(n - 1).map_or((0.0, 0.0), |row| row[q]);
                    match (r, delivered) {
                        (_, true) => 0.0,
                        (true, false) => (w - attempt).powi(2),
                        (false, _) => (w - silent).powi(2),
                    }
                }
            };
            acc.stage_sum[n - 1] += cost;
            acc.stage_sq[n - 1] += cost * cost;
            acc.occupancy[n - 1][q] += 1;
            acc.attempts += r as u64;
            acc.deliveries += delivered as u64;
            total += cost;
            if trace.is_some() {
                let (xn, xhat, err) = match timing {
                    Timing::Recursive => (x, x - e, e),
                    Timing::Memoryless => {
                        let (silent, attempt) = estimates.get(n - 1).map_or((0.0, 0.0), |row| row[q]);
                        let xhat = if delivered { w } else if r { attempt } else { silent };
                        (w, xhat, w - xhat)
                    }
                };
                rows.push(TraceRow { trial: t, n, x: xn, xhat, e: err, r: r as u8, c: success as u8, q });
            }
            x = plant.a * x + w;
            w_prev = w;
            q = next;
        }
        acc.total_sum += total;
        acc.total_sq += total * total;
        if let Some(trace) = trace {
            trace.extend(rows);
        }
        Ok(())
    };

    let chunks: Vec<(usize, usize)> = (0..config.trials)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(config.trials)))
        .collect();
    let parts: Vec<Result<Accum>> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut acc = Accum::new(stages, m);
            for t in s..e {
                run_trial(t, &mut acc, None)?;
            }
            Ok(acc)
        })
        .collect();
    let parts: Vec<Accum> = parts.into_iter().collect::<Result<_>>()?;
    let acc = pairwise(&parts);

    let mut trace = Vec::new();
    let mut scratch = Accum::new(stages, m);
    for t in 0..config.trace_trials.min(config.trials) {
        run_trial(t, &mut scratch, Some(&mut trace))?;
    }

    let k = config.trials as f64;
    let se = |sum: f64, sq: f64| {
        if config.trials < 2 {
            return 0.0;
        }
        let mean = sum / k;
        ((sq / k - mean * mean).max(0.0) * k / (k - 1.0) / k).sqrt()
    };
    let cells = k * stages as f64;
    Ok(SimSummary {
        trials: config.trials,
        seed: config.seed,
        timing: timing.to_string(),
        stages,
        stage_mse: acc.stage_sum.iter().map(|s| s / k).collect(),
        stage_se: acc.stage_sum.iter().zip(&acc.stage_sq).map(|(&s, &q)| se(s, q)).collect(),
        total_mean: acc.total_sum / k,
        total_se: se(acc.total_sum, acc.total_sq),
        transmit_rate: acc.attempts as f64 / cells,
        delivery_rate: acc.deliveries as f64 / cells,
        occupancy: acc
            .occupancy
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / k).collect())
            .collect(),
        trace,
    })
}

/// Exact expected total cost of a memoryless policy, propagating the
/// channel-state distribution forward.
pub fn expected_memoryless_cost(fsm: &ChannelFsm, sigma2: f64, horizon: usize, policy: &TransmitPolicy) -> f64 {
    let m = fsm.num_states();
    let mut dist = vec![0.0; m];
    dist[fsm.initial_state()] = 1.0;
    let mut total = 0.0;
    for n in 1..=horizon {
        let mut next = vec![0.0; m];
        for q in 0..m {
            if dist[q] == 0.0 {
                continue;
            }
            let rule = match policy.rule(n, q) {
                Some(rule) if fsm.transmit_allowed(q) => rule.clone(),
                _ => StageRule::Never,
            };
            let (silent, attempted) = rule.region_moments(sigma2);
            total += dist[q] * (silent.residual() + fsm.drop_prob(q) * attempted.residual());
            next[fsm.next_silent(q)] += dist[q] * silent.m0;
            if let Some(t) = fsm.next_transmit(q) {
                next[t] += dist[q] * attempted.m0;
            }
        }
        dist = next;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant(a: f64, n: usize) -> PlantModel {
        PlantModel::new(a, 1.0, 0.0, n).unwrap()
    }

    #[test]
    fn never_transmit_matches_open_loop() {
        let p = plant(1.0, 2);
        let fsm = ChannelFsm::memoryless(0.3).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Recursive, StageRule::Never);
        let s = simulate(&p, &fsm, &pol, &SimConfig::new(100_000, 7)).unwrap();
        assert_eq!(s.stages, 3);
        assert!((s.total_mean - 3.0).abs() < 4.0 * s.total_se, "{} +- {}", s.total_mean, s.total_se);
        assert_eq!(s.transmit_rate, 0.0);
    }

    #[test]
    fn perfect_channel_always_transmitting_costs_nothing() {
        let p = plant(1.3, 5);
        let fsm = ChannelFsm::memoryless(0.0).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Recursive, StageRule::Always);
        let s = simulate(&p, &fsm, &pol, &SimConfig::new(1000, 1)).unwrap();
        assert_eq!(s.total_mean, 0.0);
        assert_eq!(s.delivery_rate, 1.0);
    }

    #[test]
    fn deterministic_across_thread_pools() {
        let p = plant(0.9, 6);
        let fsm = ChannelFsm::energy_harvesting(3, 1, 0.2).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Recursive, StageRule::Symmetric { tau: 0.8 });
        let cfg = SimConfig { trials: 3000, seed: 99, trace_trials: 2 };
        let a = simulate(&p, &fsm, &pol, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate(&p, &fsm, &pol, &cfg)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 2 * 7);
        let c = simulate(&p, &fsm, &pol, &SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.total_mean, c.total_mean);
    }

    #[test]
    fn rejects_asymmetric_policy_on_a_correlated_source() {
        let p = plant(0.5, 3);
        let fsm = ChannelFsm::memoryless(0.5).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Recursive, StageRule::Interval { lo: -1.0, hi: 2.0 });
        assert!(matches!(simulate(&p, &fsm, &pol, &SimConfig::new(10, 0)), Err(Error::AsymmetricPolicy { .. })));
        let pol = constant_policy(&p, &fsm, Timing::Memoryless, StageRule::Never);
        assert!(simulate(&p, &fsm, &pol, &SimConfig::new(10, 0)).is_err());
    }

    #[test]
    fn memoryless_half_line_matches_closed_form() {
        let p = plant(0.0, 4);
        let fsm = ChannelFsm::memoryless(0.5).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Memoryless, StageRule::Interval { lo: 0.0, hi: f64::INFINITY });
        let exact = expected_memoryless_cost(&fsm, 1.0, 4, &pol);
        let v = 1.0 - 2.0 / std::f64::consts::PI;
        assert!((exact - 4.0 * 0.75 * v).abs() < 1e-12);
        let s = simulate(&p, &fsm, &pol, &SimConfig::new(200_000, 3)).unwrap();
        assert!((s.total_mean - exact).abs() < 4.0 * s.total_se);
    }

    #[test]
    fn occupancy_rows_are_distributions() {
        let p = plant(1.0, 4);
        let fsm = ChannelFsm::workload_chain(2, &[0.1, 0.5, 0.9]).unwrap();
        let pol = constant_policy(&p, &fsm, Timing::Recursive, StageRule::Symmetric { tau: 0.5 });
        let s = simulate(&p, &fsm, &pol, &SimConfig::new(2000, 5)).unwrap();
        for row in &s.occupancy {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(s.occupancy[0][0], 1.0);
    }
}
