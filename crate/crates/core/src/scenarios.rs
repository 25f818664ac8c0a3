//! Reference instances, random instance generators and table exports.

use std::io::Write;

use rand::Rng;

use crate::channel::{ChannelFsm, FsmSpec};
use crate::dp_iid::IidValueTable;
use crate::dp_symmetric::{CurvatureBound, ValueTable};
use crate::error::Result;
use crate::process::PlantModel;

/// `a = 1.1`, `sigma2 = 1`, `x0 = 0`, `N = 20`.
pub fn reference_plant() -> PlantModel {
    PlantModel::new(1.1, 1.0, 0.0, 20).expect("valid constants")
}

/// Battery of capacity 4, transmission cost 2, drop probability 0.3.
pub fn reference_energy_channel() -> ChannelFsm {
    ChannelFsm::energy_harvesting(4, 2, 0.3).expect("valid constants")
}

/// Workload window 4 with drop probabilities rising in the request count.
pub fn reference_workload_channel() -> ChannelFsm {
    ChannelFsm::workload_chain(4, &[0.1, 0.3, 0.5, 0.7, 0.9]).expect("valid constants")
}

/// Random channel with `m` states. Each state is masked with probability
/// `mask_prob` (masked states drop with probability 1); unmasked states draw
/// their drop probability uniformly from `[0, max_drop)`.
pub fn random_fsm<R: Rng + ?Sized>(rng: &mut R, m: usize, max_drop: f64, mask_prob: f64) -> ChannelFsm {
    let mut transitions = Vec::with_capacity(m);
    let mut drop_probs = Vec::with_capacity(m);
    let mut transmit_allowed = Vec::with_capacity(m);
    for _ in 0..m {
        let allowed = !rng.random_bool(mask_prob);
        let silent = rng.random_range(0..m);
        let transmit = allowed.then(|| rng.random_range(0..m));
        transitions.push((silent, transmit));
        transmit_allowed.push(allowed);
        drop_probs.push(if allowed { rng.random::<f64>() * max_drop } else { 1.0 });
    }
    ChannelFsm::try_from(FsmSpec {
        num_states: m,
        transitions,
        drop_probs,
        initial_state: rng.random_range(0..m),
        transmit_allowed,
    })
    .expect("generated channel is valid")
}

/// Plant and channel inside the small-drop regime: `m <= 5`,
/// `a` in `[0.5, 1.2]`, `N <= 10`, every unmasked drop probability below
/// `1 / (1 + 2 a^2 N + a^2)`.
pub fn random_small_drop_instance<R: Rng + ?Sized>(rng: &mut R) -> (PlantModel, ChannelFsm) {
    let a = rng.random_range(0.5..=1.2);
    let horizon = rng.random_range(1..=10);
    let plant = PlantModel::new(a, 1.0, 0.0, horizon).expect("valid ranges");
    let limit = CurvatureBound::new(&plant).threshold_condition;
    let m = rng.random_range(1..=5);
    let fsm = random_fsm(rng, m, limit, 0.2);
    (plant, fsm)
}

/// Rows `n, q, e, V, C0, C1, transmit` for every stage with a decision;
/// `C1` is empty at masked states.
pub fn write_value_table_csv<W: Write>(table: &ValueTable, provenance: &str, mut out: W) -> Result<()> {
    writeln!(out, "# provenance={provenance}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "q", "e", "V", "C0", "C1", "transmit"])?;
    let grid = table.grid();
    for n in 1..=table.horizon() {
        for q in 0..table.fsm().num_states() {
            let v = table.value(n, q).values();
            let c0 = table.cost_silent(n, q).values();
            let c1 = table.cost_attempt(n, q).map(|c| c.values());
            let t = table.transmit(n, q);
            for i in 0..grid.num_points() {
                w.write_record([
                    n.to_string(),
                    q.to_string(),
                    grid.point(i).to_string(),
                    v[i].to_string(),
                    c0[i].to_string(),
                    c1.map_or(String::new(), |c| c[i].to_string()),
                    (t[i] as u8).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `n, q, kind, tau_lo, tau_hi, value, p_transmit`.
pub fn write_iid_table_csv<W: Write>(table: &IidValueTable, provenance: &str, mut out: W) -> Result<()> {
    writeln!(out, "# provenance={provenance}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "q", "kind", "tau_lo", "tau_hi", "value", "p_transmit"])?;
    let m = table.policy().num_states();
    for n in 1..=table.horizon() {
        for q in 0..m {
            let c = table.choice(n, q);
            w.write_record([
                n.to_string(),
                q.to_string(),
                c.rule.kind().to_string(),
                c.lo.to_string(),
                c.hi.to_string(),
                table.value(n, q).to_string(),
                c.p_transmit.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
