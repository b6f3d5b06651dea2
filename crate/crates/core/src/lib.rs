//! Compact allocation plans for guaranteed-delivery display advertising.
//!
//! Given a weighted bipartite graph of forecast impressions (supply) and
//! contracts (demand), the allocators compute two numbers per contract
//! (`alpha_j`, `zeta_j`) plus an allocation order. Those plans drive
//! per-impression serving without any online state. A small reference QP
//! solver and KKT checker validate optimality on small instances.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pwl;
pub mod serving;

pub use alloc::{
    allocation_order, hwm, shale, Allocation, AllocationPlan, DualState, PlanEntry, ShaleOptions,
    Solution, Variant,
};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{DemandNode, Instance, SupplyNode};
pub use pwl::{GTerm, PwlSolution, Tolerances};
