//! Optimal transmission policies for remote estimation of a scalar
//! Gauss-Markov process over a use-dependent packet-drop channel.
//!
//! The encoder sees the estimation error and decides each stage whether to
//! attempt a transmission; the channel is a finite state machine whose state
//! follows those decisions and sets the drop probability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod discrete;
pub mod dp_iid;
pub mod dp_symmetric;
pub mod error;
pub mod policy;
pub mod process;
pub mod quadrature;
pub mod scenarios;
pub mod sim;

#[cfg(test)]
mod testutil;

pub use channel::{validate_fsm, ChannelFsm, ChannelOutcome, FsmSpec, Violation};
pub use config::RunConfig;
pub use discrete::{discrete_dp, exhaustive_policy_search, DiscreteInstance};
pub use dp_iid::{iid_backward_induction, iid_stage_cost, IidValueTable};
pub use dp_symmetric::{backward_induction, solve_and_extract, ValueTable};
pub use error::{Error, Result};
pub use policy::{extract_threshold, Extraction, StageRule, Timing, TransmitPolicy};
pub use process::PlantModel;
pub use quadrature::{gaussian_expectation, is_symmetric_nondecreasing, ErrorGrid, GridFunction};
pub use sim::{simulate, SimConfig, SimSummary};
