//! Simulator and online-optimization library for allocating ML model replicas
//! across a network of compute nodes (an "inference delivery network").
//!
//! Requests for inference tasks travel along fixed paths from edge nodes
//! towards a repository node that can always serve them. Every intermediate
//! node may host model variants of different size, accuracy and throughput;
//! the library decides which variants to host where.
//!
//! The main pieces:
//!
//! * [`topology`] — the node/edge graph, tiered hierarchies and routing paths.
//! * [`catalog`] — tasks, model variants and per-node size/delay/capacity data.
//! * [`instance`] — a resolved world: topology + catalog + request types +
//!   cost rankings, shared immutably by everything below.
//! * [`workload`] — Zipf request generators (fixed and sliding popularity) and
//!   trace files.
//! * [`serving`] — the cost model, per-slot scheduling, aggregate cost, the
//!   allocation gain and its bounds.
//! * [`infida`] — the INFIDA online policy: subgradients (central and
//!   message-based), mirror ascent with a weighted negative-entropy map,
//!   Bregman projection onto the weighted capped simplex, and DepRound.
//! * [`baselines`] — static cost-benefit greedy (SG) and the online
//!   load-aware greedy (OLAG).
//! * [`harness`] — configuration, the simulation loop, metrics, brute-force
//!   oracles and the structural check suite.

pub mod baselines;
pub mod catalog;
pub mod harness;
pub mod infida;
pub mod instance;
pub mod serving;
pub mod topology;
pub mod workload;

pub use instance::{Allocation, Instance};

// The guide chapters under book/src double as doc-tests: every fenced Rust
// block below is compiled and run by `cargo test --doc`.
#[doc = include_str!("../../../book/src/network-model.md")]
mod _book_network_model {}
#[doc = include_str!("../../../book/src/demand-and-scheduling.md")]
mod _book_demand_and_scheduling {}
#[doc = include_str!("../../../book/src/online-allocation.md")]
mod _book_online_allocation {}
#[doc = include_str!("../../../book/src/rounding.md")]
mod _book_rounding {}
#[doc = include_str!("../../../book/src/baselines-and-metrics.md")]
mod _book_baselines_and_metrics {}
#[doc = include_str!("../../../book/src/harness.md")]
mod _book_harness {}
