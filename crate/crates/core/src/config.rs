//! Run configuration: one JSON document naming the plant, the channel,
//! solver resolution, simulation budget and output location.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{validate_fsm, ChannelFsm, FsmSpec};
use crate::dp_iid::IntervalSearch;
use crate::dp_symmetric::DEFAULT_VALUE_CAP;
use crate::error::{Error, Result};
use crate::process::PlantModel;
use crate::quadrature::ErrorGrid;

/// Reserved channel presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelBuilder {
    EnergyHarvesting { capacity: usize, tx_cost: usize, p_tx: f64 },
    WorkloadChain { window: usize, drop_probs: Vec<f64> },
    Memoryless { p_drop: f64 },
}

impl ChannelBuilder {
    pub fn build(&self) -> Result<ChannelFsm> {
        match self {
            Self::EnergyHarvesting { capacity, tx_cost, p_tx } => {
                ChannelFsm::energy_harvesting(*capacity, *tx_cost, *p_tx)
            }
            Self::WorkloadChain { window, drop_probs } => ChannelFsm::workload_chain(*window, drop_probs),
            Self::Memoryless { p_drop } => ChannelFsm::memoryless(*p_drop),
        }
    }
}

/// Exactly one of `builder` and `fsm`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builder: Option<ChannelBuilder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fsm: Option<FsmSpec>,
}

impl ChannelSource {
    pub fn build(&self) -> Result<ChannelFsm> {
        match (&self.builder, &self.fsm) {
            (Some(b), None) => b.build(),
            (None, Some(spec)) => {
                let violations = validate_fsm(spec);
                if violations.is_empty() {
                    ChannelFsm::try_from(spec.clone())
                } else {
                    Err(Error::InvalidChannel(violations))
                }
            }
            _ => Err(Error::InvalidArgument(
                "channel needs exactly one of `builder` and `fsm`".into(),
            )),
        }
    }
}

/// `"auto"` or an explicit positive half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HalfWidth {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl Default for HalfWidth {
    fn default() -> Self {
        Self::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub half_width: HalfWidth,
    pub max_half_width: f64,
    pub num_points: usize,
    pub value_cap: f64,
    pub iid_search: IntervalSearch,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            half_width: HalfWidth::default(),
            max_half_width: 200.0,
            num_points: 2001,
            value_cap: DEFAULT_VALUE_CAP,
            iid_search: IntervalSearch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub trials: usize,
    pub seed: u64,
    pub trace_trials: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { trials: 100_000, seed: 1, trace_trials: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantModel,
    pub channel: ChannelSource,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub outputs: OutputSettings,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.plant.validate()?;
        cfg.channel.build()?;
        cfg.grid()?;
        Ok(cfg)
    }

    pub fn fsm(&self) -> Result<ChannelFsm> {
        self.channel.build()
    }

    pub fn grid(&self) -> Result<ErrorGrid> {
        let s = &self.solver;
        match s.half_width {
            HalfWidth::Fixed(w) => ErrorGrid::new(w, s.num_points),
            HalfWidth::Auto(_) => ErrorGrid::auto(&self.plant, s.num_points, s.max_half_width),
        }
    }

    /// SHA-256 over the plant, the resolved channel and the solver settings,
    /// truncated to 16 hex digits.
    pub fn provenance(&self) -> Result<String> {
        provenance_hash(&self.plant, &self.fsm()?, &self.solver)
    }
}

pub fn provenance_hash(plant: &PlantModel, fsm: &ChannelFsm, solver: &SolverSettings) -> Result<String> {
    let doc = serde_json::json!({ "plant": plant, "channel": fsm.spec(), "solver": solver });
    let digest = Sha256::digest(serde_json::to_vec(&doc)?);
    Ok(hex::encode(&digest[..8]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENERGY: &str = r#"{
        "plant": {"a": 1.1, "sigma2": 1.0, "x0": 0.0, "horizon": 20},
        "channel": {"builder": {"name": "energy_harvesting", "capacity": 4, "tx_cost": 2, "p_tx": 0.3}},
        "solver": {"half_width": "auto", "num_points": 2001}
    }"#;

    #[test]
    fn parses_builder_config() {
        let cfg = RunConfig::from_json(ENERGY).unwrap();
        assert_eq!(cfg.fsm().unwrap().num_states(), 5);
        assert_eq!(cfg.grid().unwrap().num_points(), 2001);
        assert_eq!(cfg.sim.trials, 100_000);
        let h = cfg.provenance().unwrap();
        assert_eq!(h.len(), 16);
        assert_eq!(h, RunConfig::from_json(ENERGY).unwrap().provenance().unwrap());
    }

    #[test]
    fn fixed_half_width_and_inline_fsm() {
        let text = r#"{
            "plant": {"a": 0.0, "sigma2": 2.0, "x0": 0.0, "horizon": 3},
            "channel": {"fsm": {"num_states": 1, "transitions": [[0, 0]], "drop_probs": [0.2],
                                "initial_state": 0, "transmit_allowed": [true]}},
            "solver": {"half_width": 12.5, "num_points": 101}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.grid().unwrap().half_width(), 12.5);
    }

    #[test]
    fn rejects_two_channel_sources_and_bad_fsm() {
        let both = r#"{
            "plant": {"a": 1.0, "sigma2": 1.0, "x0": 0.0, "horizon": 3},
            "channel": {"builder": {"name": "memoryless", "p_drop": 0.1},
                        "fsm": {"num_states": 1, "transitions": [[0, 0]], "drop_probs": [0.2],
                                "initial_state": 0, "transmit_allowed": [true]}}
        }"#;
        assert!(RunConfig::from_json(both).is_err());
        let bad = r#"{
            "plant": {"a": 1.0, "sigma2": 1.0, "x0": 0.0, "horizon": 3},
            "channel": {"fsm": {"num_states": 1, "transitions": [[3, 0]], "drop_probs": [1.5],
                                "initial_state": 0, "transmit_allowed": [true]}}
        }"#;
        match RunConfig::from_json(bad) {
            Err(Error::InvalidChannel(v)) => assert_eq!(v.len(), 2),
            other => panic!("expected channel violations, got {other:?}"),
        }
    }

    #[test]
    fn provenance_tracks_inputs() {
        let a = RunConfig::from_json(ENERGY).unwrap();
        let mut b = a.clone();
        b.plant.a = 1.2;
        assert_ne!(a.provenance().unwrap(), b.provenance().unwrap());
        let mut c = a.clone();
        c.sim.seed = 99;
        assert_eq!(a.provenance().unwrap(), c.provenance().unwrap());
    }
}
