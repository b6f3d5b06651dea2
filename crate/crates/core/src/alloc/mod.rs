//! Offline allocators: the greedy high-water-mark heuristic and the
//! two-stage dual method, both producing compact per-contract plans.

mod hwm;
mod plan_io;
mod shale;

use std::cmp::Ordering;
use std::collections::HashMap;

pub use hwm::hwm;
pub use plan_io::{parse_plan, read_plan, write_plan, PLAN_HEADER};
pub use shale::{
    compute_beta, is_epsilon_approximate, projected_delivery, shale, stage_one, stage_two,
    IterationReport, ShaleOptions, ShaleRun, StageOneOptions, StageOneOutcome, StopReason,
    StopRule, stage_one_observed,
};

use crate::error::{Error, NodeKind, Result};
use crate::model::Instance;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Dual variables: one `alpha` per contract and one `beta` per supply node.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Number of completed iterations that produced `alpha`.
    pub iteration: usize,
}

impl DualState {
    /// All duals zero.
    pub fn cold(instance: &Instance) -> Self {
        DualState {
            alpha: vec![0.0; instance.n_demand()],
            beta: vec![0.0; instance.n_supply()],
            iteration: 0,
        }
    }

    /// `alpha` taken from a previous plan by contract id and clamped into
    /// `[0, p_j]`; contracts the plan does not know start at zero.
    pub fn warm(instance: &Instance, plan: &AllocationPlan) -> Self {
        let index = plan.index();
        let alpha = instance
            .demand()
            .iter()
            .map(|d| {
                index
                    .get(d.id.as_str())
                    .map(|&k| plan.entries[k].alpha.clamp(0.0, d.penalty))
                    .unwrap_or(0.0)
            })
            .collect();
        DualState {
            alpha,
            beta: vec![0.0; instance.n_supply()],
            iteration: 0,
        }
    }
}

/// Which allocator produced a plan; serving reads `zeta` differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Hwm,
    Shale,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hwm => "HWM",
            Variant::Shale => "SHALE",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "HWM" => Ok(Variant::Hwm),
            "SHALE" => Ok(Variant::Shale),
            other => Err(format!("unknown plan variant `{other}`")),
        }
    }
}

/// Serving state for one contract.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub id: String,
    pub alpha: f64,
    /// Serving fraction; `+inf` takes whatever inventory is left.
    pub zeta: f64,
    /// Position in the allocation order.
    pub order_index: usize,
    /// Pass of the sequential allocation that last allocated for this
    /// contract (1, or 2 for the leftover pass).
    pub pass: u8,
}

/// The offline-to-online handoff: two numbers per contract plus order.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub variant: Variant,
    pub entries: Vec<PlanEntry>,
}

impl AllocationPlan {
    pub fn index(&self) -> HashMap<&str, usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(k, e)| (e.id.as_str(), k))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entry indices sorted by allocation order.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by_key(|&k| self.entries[k].order_index);
        idx
    }

    /// Checks that the order is a permutation and the values are in range.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.entries.len();
        let mut seen = vec![false; n];
        for e in &self.entries {
            if e.order_index >= n || std::mem::replace(&mut seen[e.order_index], true) {
                return Err(format!("order index {} of `{}` is not a permutation", e.order_index, e.id));
            }
            if !e.alpha.is_finite() || e.alpha < 0.0 {
                return Err(format!("alpha of `{}` out of range", e.id));
            }
            if e.zeta.is_nan() || e.zeta < 0.0 {
                return Err(format!("zeta of `{}` out of range", e.id));
            }
            if e.pass != 1 && e.pass != 2 {
                return Err(format!("pass tag of `{}` must be 1 or 2", e.id));
            }
        }
        Ok(())
    }
}

/// Primal solution. `x` is indexed by arc position in demand-grouped order
/// (see [`crate::model::ArcStore::demand_arc_range`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub x: Vec<f64>,
    pub under_delivery: Vec<f64>,
}

impl Allocation {
    /// Allocation fractions of contract `j`, aligned with its supply
    /// neighbors.
    pub fn contract<'a>(&'a self, instance: &Instance, j: usize) -> &'a [f64] {
        &self.x[instance.arcs().demand_arc_range(j)]
    }

    /// Builds the allocation with `u_j = max{0, d_j - sum_i s_i x_ij}`.
    pub fn with_implied_under_delivery(instance: &Instance, x: Vec<f64>) -> Result<Self> {
        let delivered = delivered(instance, &x)?;
        let under_delivery = instance
            .demand()
            .iter()
            .zip(&delivered)
            .map(|(d, got)| (d.demand - got).max(0.0))
            .collect();
        Ok(Allocation { x, under_delivery })
    }

    pub fn delivered(&self, instance: &Instance) -> Result<Vec<f64>> {
        delivered(instance, &self.x)
    }

    /// Largest supply overrun `sum_j x_ij - 1` (negative when slack).
    pub fn max_supply_excess(&self, instance: &Instance) -> Result<f64> {
        let mut used = vec![0.0; instance.n_supply()];
        let mut buf = Vec::new();
        for j in 0..instance.n_demand() {
            let sup = instance.arcs().demand_neighbors(j, &mut buf)?;
            for (&i, &x) in sup.iter().zip(self.contract(instance, j)) {
                used[i as usize] += x;
            }
        }
        Ok(used.iter().map(|u| u - 1.0).fold(f64::NEG_INFINITY, f64::max))
    }
}

fn delivered(instance: &Instance, x: &[f64]) -> Result<Vec<f64>> {
    let supply = instance.supply();
    let mut out = vec![0.0; instance.n_demand()];
    instance.arcs().scan(crate::model::Side::Demand, |batch| {
        for (j, start, sup) in batch.iter() {
            let start = start as usize;
            out[j] = sup
                .iter()
                .zip(&x[start..start + sup.len()])
                .map(|(&i, &xi)| supply[i as usize].weight * xi)
                .sum();
        }
        Ok(())
    })?;
    Ok(out)
}

/// Everything an allocator run produces.
#[derive(Debug, Clone)]
pub struct Solution {
    pub plan: AllocationPlan,
    pub duals: DualState,
    /// Impressions delivered to each contract by the plan's allocation.
    pub delivered: Vec<f64>,
    pub under_delivery: Vec<f64>,
    /// Dense per-arc fractions, when requested.
    pub allocation: Option<Allocation>,
}

/// Contracts in decreasing contention `d_j / S_j`, ties by ascending id.
pub fn allocation_order(instance: &Instance) -> Vec<usize> {
    let theta = instance.thetas();
    let demand = instance.demand();
    let mut order: Vec<usize> = (0..instance.n_demand()).collect();
    order.sort_by(|&a, &b| match theta[b].total_cmp(&theta[a]) {
        Ordering::Equal => demand[a].id.cmp(&demand[b].id),
        other => other,
    });
    order
}

pub(crate) fn unknown_demand(id: &str) -> Error {
    Error::UnknownNode {
        kind: NodeKind::Demand,
        id: id.to_string(),
    }
}

/// Optional worker pool for the independent per-node solves.
pub(crate) struct Workers {
    pool: Option<ThreadPool>,
}

impl Workers {
    pub(crate) fn new(threads: usize) -> Result<Self> {
        let pool = if threads > 1 {
            Some(
                ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Workers { pool })
    }

    /// Maps `f` over `0..n`, in parallel when a pool is configured.
    pub(crate) fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| (0..n).into_par_iter().map(f).collect())
            }
        }
    }
}
