//! Desk-scale testbed for distributed downlink power control in a multi-tier
//! heterogeneous network (HetNet).
//!
//! Each access point runs its own dueling deep Q-network and picks a discrete
//! transmit power level from local measurements only; training is fully
//! distributed (no parameter sharing, no central critic). The crate provides:
//!
//! - [`channel`]: topology, path loss + log-normal shadowing, and Jakes-model
//!   time-correlated Rayleigh fading,
//! - [`env`]: the synchronized multi-cell environment (SINR, rates, local
//!   observations and rewards),
//! - [`nn`]: a small dense network engine with dueling value/advantage heads,
//!   exact backprop and Adam,
//! - [`agents`]: replay buffer, epsilon-greedy control and the IQL / PQL / HQL
//!   loss variants,
//! - [`tabular`]: Q-table versions of IQL and PQL plus a cooperative matrix
//!   game used to exercise them,
//! - [`baselines`]: full power, random power and a centralized full-CSI WMMSE
//!   sum-rate solver used as the 100% reference,
//! - [`harness`]: seeded experiment orchestration, metrics and the CLI entry
//!   points.

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod env;
pub mod harness;
pub mod nn;
pub mod tabular;
