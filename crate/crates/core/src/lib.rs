//! Distributed computation of variational generalized Nash equilibria for
//! games with affine coupling constraints over an undirected communication
//! graph.
//!
//! The library provides:
//! - a game model with box strategy sets, affine coupling `A x <= b`,
//!   pseudo-gradient evaluation and KKT residuals ([`game`]);
//! - communication-graph structure with incidence/Laplacian kernels
//!   ([`graph`]);
//! - the preconditioned forward-backward machinery with step-size validation
//!   ([`splitting`]);
//! - the synchronous relaxed fixed-point solver ([`sync`]);
//! - a deterministic simulator of the asynchronous variants, with random
//!   activation, bounded stale reads, and edge- or node-based auxiliaries
//!   ([`asynchronous`]);
//! - a brute-force KKT oracle for tiny instances ([`oracle`]);
//! - a seeded networked-competition benchmark generator and convergence
//!   metrics ([`cournot`]);
//! - JSON wire formats for games, graphs and schedules ([`json`]).
//!
//! Everything is deterministic given explicit seeds: identical inputs produce
//! bit-identical traces.

pub mod asynchronous;
pub mod cournot;
pub mod error;
pub mod game;
pub mod graph;
pub mod json;
pub mod oracle;
pub mod splitting;
pub mod sync;
pub mod trace;

pub use error::{Error, Result};
pub use game::{CostModel, GameModel, MonotonicityConstants, PlayerSpec, PriceModel};
pub use graph::CommGraph;
pub use splitting::{
    sweep_edge, sweep_node, EdgeState, NodeState, Preconditioner, SolverParams, StepSizeReport,
};
pub use sync::{run_sync, sd_geno_step, StopRule};
pub use trace::{StopReason, Trace, TraceRecord};
