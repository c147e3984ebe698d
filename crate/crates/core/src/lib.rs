//! Deterministic discrete-time simulator of a multi-tenant DNN
//! accelerator SoC.
//!
//! The stack, bottom up:
//!
//! - [`workload`]: networks, layers, SoC configuration, and the seeded
//!   generator of multi-tenant inference scenarios.
//! - [`estimator`]: analytical per-layer latency and traffic prediction.
//! - [`hw`]: the per-tile access-monitoring/throttling engine and the
//!   proportional-share shared memory system.
//! - [`runtime`]: per-layer contention detection and weighted DRAM
//!   bandwidth repartitioning.
//! - [`scheduler`]: the priority/memory-aware group scheduler and three
//!   baseline policies.
//! - [`sim`]: the epoch-driven engine tying the above together.
//! - [`metrics`]: SLA satisfaction, system throughput, fairness.
//! - [`experiment`]: the policy x workload x QoS x seed matrix runner
//!   and its CSV outputs.

pub mod error;
pub mod estimator;
pub mod experiment;
pub mod hw;
pub mod metrics;
pub mod runtime;
pub mod scheduler;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
