//! Use-dependent packet-drop channels.
//!
//! A channel is a finite state machine whose state moves with the encoder's
//! transmit decisions and whose current state sets the probability that an
//! attempted transmission is erased. States are labelled `0..num_states`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder action: stay silent or attempt a transmission.
pub type Action = bool;

/// JSON form of a channel, also used to hold not-yet-validated input.
///
/// `transitions[q] = [target on silence, target on transmit]`; the transmit
/// target is `null` exactly when `transmit_allowed[q]` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmSpec {
    pub num_states: usize,
    pub transitions: Vec<(usize, Option<usize>)>,
    pub drop_probs: Vec<f64>,
    pub initial_state: usize,
    pub transmit_allowed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NoStates,
    LengthMismatch { field: &'static str, len: usize },
    DanglingTransition { action: u8, target: usize },
    MissingTransmitTarget,
    TransmitTargetOnMaskedState,
    ProbabilityOutOfRange(f64),
    MaskedStateMustDrop(f64),
    InitialStateOutOfRange(usize),
}

/// One failed channel invariant, tagged with the offending state when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(q) = self.state {
            write!(f, "state {q}: ")?;
        }
        match &self.kind {
            ViolationKind::NoStates => write!(f, "channel has no states"),
            ViolationKind::LengthMismatch { field, len } => {
                write!(f, "{field} has length {len}, expected num_states")
            }
            ViolationKind::DanglingTransition { action, target } => {
                write!(f, "dangling transition on action {action} to state {target}")
            }
            ViolationKind::MissingTransmitTarget => {
                write!(f, "transmit allowed but no transmit transition")
            }
            ViolationKind::TransmitTargetOnMaskedState => {
                write!(f, "transmit transition given on a masked state")
            }
            ViolationKind::ProbabilityOutOfRange(p) => {
                write!(f, "probability out of range: {p}")
            }
            ViolationKind::MaskedStateMustDrop(p) => {
                write!(f, "masked state must have drop probability 1, found {p}")
            }
            ViolationKind::InitialStateOutOfRange(q) => {
                write!(f, "initial state {q} out of range")
            }
        }
    }
}

/// Checks every channel invariant and returns all violations found.
pub fn validate_fsm(spec: &FsmSpec) -> Vec<Violation> {
    let m = spec.num_states;
    let mut out = Vec::new();
    let whole = |kind| Violation { state: None, kind };
    if m == 0 {
        out.push(whole(ViolationKind::NoStates));
    }
    for (field, len) in [
        ("transitions", spec.transitions.len()),
        ("drop_probs", spec.drop_probs.len()),
        ("transmit_allowed", spec.transmit_allowed.len()),
    ] {
        if len != m {
            out.push(whole(ViolationKind::LengthMismatch { field, len }));
        }
    }
    if spec.initial_state >= m {
        out.push(whole(ViolationKind::InitialStateOutOfRange(spec.initial_state)));
    }

    for (q, &(silent, transmit)) in spec.transitions.iter().enumerate() {
        if silent >= m {
            out.push(Violation {
                state: Some(q),
                kind: ViolationKind::DanglingTransition { action: 0, target: silent },
            });
        }
        let allowed = spec.transmit_allowed.get(q).copied().unwrap_or(true);
        match (transmit, allowed) {
            (Some(t), true) if t >= m => out.push(Violation {
                state: Some(q),
                kind: ViolationKind::DanglingTransition { action: 1, target: t },
            }),
            (None, true) => out.push(Violation {
                state: Some(q),
                kind: ViolationKind::MissingTransmitTarget,
            }),
            (Some(_), false) => out.push(Violation {
                state: Some(q),
                kind: ViolationKind::TransmitTargetOnMaskedState,
            }),
            _ => {}
        }
    }
    for (q, &p) in spec.drop_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            out.push(Violation {
                state: Some(q),
                kind: ViolationKind::ProbabilityOutOfRange(p),
            });
        } else if spec.transmit_allowed.get(q) == Some(&false) && p != 1.0 {
            out.push(Violation {
                state: Some(q),
                kind: ViolationKind::MaskedStateMustDrop(p),
            });
        }
    }
    out
}

/// A validated use-dependent packet-drop channel. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFsm {
    spec: FsmSpec,
}

impl TryFrom<FsmSpec> for ChannelFsm {
    type Error = Error;

    fn try_from(spec: FsmSpec) -> Result<Self> {
        let violations = validate_fsm(&spec);
        if violations.is_empty() {
            Ok(Self { spec })
        } else {
            Err(Error::InvalidChannel(violations))
        }
    }
}

impl ChannelFsm {
    pub fn num_states(&self) -> usize {
        self.spec.num_states
    }

    pub fn initial_state(&self) -> usize {
        self.spec.initial_state
    }

    pub fn drop_prob(&self, q: usize) -> f64 {
        self.spec.drop_probs[q]
    }

    pub fn transmit_allowed(&self, q: usize) -> bool {
        self.spec.transmit_allowed[q]
    }

    pub fn spec(&self) -> &FsmSpec {
        &self.spec
    }

    /// Next state when action `r` is taken in state `q`.
    pub fn step(&self, q: usize, r: Action) -> Result<usize> {
        let (silent, transmit) = *self.spec.transitions.get(q).ok_or(Error::StateOutOfRange {
            state: q,
            num_states: self.num_states(),
        })?;
        if r {
            transmit.ok_or(Error::ForbiddenAction { state: q })
        } else {
            Ok(silent)
        }
    }

    /// Successor on silence.
    pub fn next_silent(&self, q: usize) -> usize {
        self.spec.transitions[q].0
    }

    /// Successor on transmission, `None` at masked states.
    pub fn next_transmit(&self, q: usize) -> Option<usize> {
        self.spec.transitions[q].1
    }

    /// Draws one channel use in state `q`: `true` when a transmission would get through.
    ///
    /// Consumes exactly one uniform draw from `rng`.
    pub fn sample_drop<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> bool {
        let u: f64 = rng.random();
        u >= self.spec.drop_probs[q]
    }

    /// Runs one channel use and reports what the estimator sees.
    pub fn transmit<R: Rng + ?Sized>(
        &self,
        q: usize,
        attempted: Action,
        payload: f64,
        rng: &mut R,
    ) -> Result<(ChannelOutcome, usize)> {
        let next = self.step(q, attempted)?;
        let success = self.sample_drop(q, rng);
        Ok((ChannelOutcome::new(attempted, success, payload), next))
    }

    /// `reach[n][q]` for `n = 0..=horizon`: whether state `q` can be occupied at
    /// stage `n + 1` starting from the initial state under some admissible
    /// action sequence.
    pub fn reachable(&self, horizon: usize) -> Vec<Vec<bool>> {
        let m = self.num_states();
        let mut reach = vec![vec![false; m]; horizon + 1];
        reach[0][self.initial_state()] = true;
        for n in 1..=horizon {
            for q in 0..m {
                if !reach[n - 1][q] {
                    continue;
                }
                reach[n][self.next_silent(q)] = true;
                if let Some(t) = self.next_transmit(q) {
                    reach[n][t] = true;
                }
            }
        }
        reach
    }

    /// Battery-powered link: each silent step harvests one unit up to
    /// `capacity`, a transmission spends `tx_cost` units. States below
    /// `tx_cost` cannot transmit and carry drop probability 1.
    pub fn energy_harvesting(capacity: usize, tx_cost: usize, p_tx: f64) -> Result<Self> {
        if tx_cost == 0 || capacity < tx_cost {
            return Err(Error::InvalidArgument(format!(
                "energy harvesting needs capacity >= tx_cost >= 1, got capacity {capacity}, tx_cost {tx_cost}"
            )));
        }
        let m = capacity + 1;
        let transitions = (0..m)
            .map(|q| ((q + 1).min(capacity), q.checked_sub(tx_cost)))
            .collect();
        let transmit_allowed: Vec<bool> = (0..m).map(|q| q >= tx_cost).collect();
        let drop_probs = transmit_allowed
            .iter()
            .map(|&ok| if ok { p_tx } else { 1.0 })
            .collect();
        Self::try_from(FsmSpec {
            num_states: m,
            transitions,
            drop_probs,
            initial_state: capacity,
            transmit_allowed,
        })
    }

    /// Workload count chain: state `i` counts recent requests out of the last
    /// `window` steps; a request moves up one state, silence moves down one.
    pub fn workload_chain(window: usize, drop_probs: &[f64]) -> Result<Self> {
        if window == 0 {
            return Err(Error::InvalidArgument("workload window must be >= 1".into()));
        }
        if drop_probs.len() != window + 1 {
            return Err(Error::InvalidArgument(format!(
                "workload chain with window {window} needs {} drop probabilities, got {}",
                window + 1,
                drop_probs.len()
            )));
        }
        let m = window + 1;
        Self::try_from(FsmSpec {
            num_states: m,
            transitions: (0..m)
                .map(|i| (i.saturating_sub(1), Some((i + 1).min(window))))
                .collect(),
            drop_probs: drop_probs.to_vec(),
            initial_state: 0,
            transmit_allowed: vec![true; m],
        })
    }

    /// One state, fixed drop probability, transmission always allowed.
    pub fn memoryless(p_drop: f64) -> Result<Self> {
        Self::try_from(FsmSpec {
            num_states: 1,
            transitions: vec![(0, Some(0))],
            drop_probs: vec![p_drop],
            initial_state: 0,
            transmit_allowed: vec![true],
        })
    }
}

/// What one use of the channel produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelOutcome {
    pub attempted: bool,
    pub success: bool,
    pub delivered: bool,
    /// `None` is the erasure symbol.
    pub payload: Option<f64>,
}

impl ChannelOutcome {
    pub fn new(attempted: bool, success: bool, value: f64) -> Self {
        let delivered = attempted && success;
        Self {
            attempted,
            success,
            delivered,
            payload: delivered.then_some(value),
        }
    }
}
