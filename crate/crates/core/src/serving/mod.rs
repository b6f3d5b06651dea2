//! Online serving from a plan, and a replay simulator that periodically
//! re-optimizes against the remaining forecast.

mod log;
mod replay;

use std::collections::HashMap;

use rand::Rng;

pub use log::{parse_log, read_log, synthesize_log, thin_log, write_log, ImpressionEvent, LOG_HEADER};
pub use replay::{
    replay, write_stats, AlphaSnapshot, Checkpoint, DeliveryStats, Forecast, ForecastClass, ReplayOptions,
    ReplayOutcome, STATS_HEADER,
};

use crate::alloc::{unknown_demand, Allocation, AllocationPlan, Variant};
use crate::error::Result;
use crate::model::{Instance, Side};
use crate::pwl::{g, solve_beta, GTerm};

/// Per-contract serving parameters: plan values plus the contract's
/// proportional target and priority.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedContract {
    pub id: String,
    pub theta: f64,
    pub priority: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub order_index: usize,
    pub pass: u8,
}

/// A plan prepared for per-event lookups.
#[derive(Debug, Clone)]
pub struct ServingTable {
    variant: Variant,
    contracts: Vec<ServedContract>,
    index: HashMap<String, usize>,
}

/// Event counters kept alongside serving; selection never reads them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServeCounters {
    pub events: u64,
    /// Events where no contract was selected.
    pub none: u64,
    /// Eligible ids that the plan does not know.
    pub skipped_ids: u64,
    /// Events with an empty eligible list.
    pub empty_events: u64,
}

impl ServingTable {
    /// Joins `plan` with the targets of `instance`; every plan contract must
    /// exist in the instance.
    pub fn new(plan: &AllocationPlan, instance: &Instance) -> Result<Self> {
        let theta = instance.thetas();
        let demand = instance.demand();
        let mut contracts = Vec::with_capacity(plan.entries.len());
        for e in &plan.entries {
            let j = instance
                .demand_index(&e.id)
                .ok_or_else(|| unknown_demand(&e.id))?;
            contracts.push(ServedContract {
                id: e.id.clone(),
                theta: theta[j],
                priority: demand[j].priority,
                alpha: e.alpha,
                zeta: e.zeta,
                order_index: e.order_index,
                pass: e.pass,
            });
        }
        let index = contracts
            .iter()
            .enumerate()
            .map(|(k, c)| (c.id.clone(), k))
            .collect();
        Ok(ServingTable {
            variant: plan.variant,
            contracts,
            index,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn contracts(&self) -> &[ServedContract] {
        &self.contracts
    }

    pub fn slot(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Supply dual of an impression eligible for `slots`.
    pub fn beta(&self, slots: &[usize]) -> f64 {
        if slots.is_empty() || self.variant == Variant::Hwm {
            return 0.0;
        }
        let terms: Vec<GTerm> = slots
            .iter()
            .map(|&k| {
                let c = &self.contracts[k];
                GTerm::for_beta(c.theta, c.priority, c.alpha)
            })
            .collect();
        solve_beta(&terms)
            .expect("non-empty terms")
            .value()
            .unwrap_or(0.0)
    }

    /// Selection probabilities for an impression eligible for `slots`,
    /// returned as `(slot, x)` in allocation order. Their sum is at most 1.
    pub fn allocation(&self, slots: &[usize]) -> Vec<(usize, f64)> {
        let mut ordered: Vec<usize> = slots.to_vec();
        ordered.sort_unstable_by_key(|&k| self.contracts[k].order_index);
        ordered.dedup();
        let mut out: Vec<(usize, f64)> = ordered.iter().map(|&k| (k, 0.0)).collect();
        let mut left = 1.0f64;
        match self.variant {
            Variant::Hwm => {
                for (k, x) in out.iter_mut() {
                    let take = left.min(self.contracts[*k].zeta);
                    *x = take;
                    left = (left - take).max(0.0);
                }
            }
            Variant::Shale => {
                let beta = self.beta(&ordered);
                // Pass one: contracts that needed the leftover pass were
                // bounded by alpha the first time round.
                for (k, x) in out.iter_mut() {
                    let c = &self.contracts[*k];
                    let zeta = if c.pass == 2 { c.alpha } else { c.zeta };
                    let take = left.min(g(c.theta, c.priority, zeta - beta));
                    *x = take;
                    left = (left - take).max(0.0);
                }
                for (k, x) in out.iter_mut() {
                    let c = &self.contracts[*k];
                    if c.pass == 2 {
                        let take = left.min(g(c.theta, c.priority, c.zeta - beta));
                        *x += take;
                        left = (left - take).max(0.0);
                    }
                }
            }
        }
        out
    }

    /// Samples a slot (or none) for an impression eligible for `slots`.
    pub fn select(&self, slots: &[usize], rng: &mut impl Rng) -> Option<usize> {
        let probs = self.allocation(slots);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, x) in probs {
            acc += x;
            if u < acc {
                return Some(k);
            }
        }
        None
    }
}

/// Serves one impression: resolves its eligible ids against the plan and
/// samples a contract. Returns the chosen contract id.
pub fn serve_impression<'a>(
    event: &ImpressionEvent,
    table: &'a ServingTable,
    rng: &mut impl Rng,
    counters: &mut ServeCounters,
) -> Option<&'a str> {
    counters.events += 1;
    if event.eligible.is_empty() {
        counters.empty_events += 1;
        counters.none += 1;
        return None;
    }
    let mut slots = Vec::with_capacity(event.eligible.len());
    for id in &event.eligible {
        match table.slot(id) {
            Some(k) => slots.push(k),
            None => counters.skipped_ids += 1,
        }
    }
    match table.select(&slots, rng) {
        Some(k) => Some(table.contracts[k].id.as_str()),
        None => {
            counters.none += 1;
            None
        }
    }
}

/// The allocation that serving `table` induces in expectation when each
/// supply node of `instance` arrives as its own impression class.
pub fn expected_allocation(table: &ServingTable, instance: &Instance) -> Result<Allocation> {
    let demand = instance.demand();
    let slot_of: Vec<Option<usize>> = demand.iter().map(|d| table.slot(&d.id)).collect();
    let mut by_supply: Vec<Vec<(usize, f64)>> = vec![Vec::new(); instance.n_supply()];
    instance.arcs().scan(Side::Supply, |batch| {
        for (i, _, dem) in batch.iter() {
            let slots: Vec<usize> = dem.iter().filter_map(|&j| slot_of[j as usize]).collect();
            by_supply[i] = table.allocation(&slots);
        }
        Ok(())
    })?;
    let mut x = vec![0.0; instance.n_arcs()];
    let mut buf = Vec::new();
    for (j, slot) in slot_of.iter().enumerate() {
        let Some(slot) = *slot else { continue };
        let start = instance.arcs().demand_arc_start(j);
        for (k, &i) in instance.arcs().demand_neighbors(j, &mut buf)?.iter().enumerate() {
            if let Some(&(_, v)) = by_supply[i as usize].iter().find(|(s, _)| *s == slot) {
                x[start + k] = v;
            }
        }
    }
    Allocation::with_implied_under_delivery(instance, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::{hwm, shale, ShaleOptions, StopRule};
    use crate::model::{synth, DemandNode, SupplyNode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn contended_pair() -> Instance {
        Instance::from_parts(
            vec![SupplyNode::new("s", 100.0)],
            vec![
                DemandNode::new("a", 60.0, 10.0, 1.0),
                DemandNode::new("b", 60.0, 10.0, 1.0),
            ],
            [(0, 0), (0, 1)],
        )
        .unwrap()
    }

    fn converged(instance: &Instance, two_pass: bool) -> AllocationPlan {
        let opts = ShaleOptions::iterations(10_000)
            .two_pass(two_pass)
            .stop(StopRule {
                alpha_change: Some(1e-12),
                epsilon: None,
            });
        shale(instance, &opts, None).unwrap().solution.plan
    }

    #[test]
    fn infinite_zeta_always_selected() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("s", 1.0)],
            vec![DemandNode::new("a", 0.5, 1.0, 1.0)],
            [(0, 0)],
        )
        .unwrap();
        let plan = AllocationPlan {
            variant: Variant::Shale,
            entries: vec![crate::alloc::PlanEntry {
                id: "a".into(),
                alpha: 0.0,
                zeta: f64::INFINITY,
                order_index: 0,
                pass: 1,
            }],
        };
        let table = ServingTable::new(&plan, &inst).unwrap();
        assert_eq!(table.allocation(&[0]), vec![(0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(table.select(&[0], &mut rng), Some(0));
        }
    }

    fn frequencies_match(table: &ServingTable, slots: &[usize], seed: u64) {
        let probs = table.allocation(slots);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 100_000;
        let mut hits = vec![0usize; table.contracts().len()];
        for _ in 0..n {
            if let Some(k) = table.select(slots, &mut rng) {
                hits[k] += 1;
            }
        }
        for (k, x) in probs {
            let freq = hits[k] as f64 / n as f64;
            assert!((freq - x).abs() < 0.01, "slot {k}: {freq} vs {x}");
        }
    }

    #[test]
    fn contended_pair_after_one_iteration() {
        let inst = contended_pair();
        let plan = shale(&inst, &ShaleOptions::iterations(1), None)
            .unwrap()
            .solution
            .plan;
        // 100 * 0.6 (1 + a - 1/6) = 60
        assert!(plan.entries.iter().all(|e| (e.alpha - 1.0 / 6.0).abs() < 1e-12));
        let table = ServingTable::new(&plan, &inst).unwrap();
        // 0.6 (1 + 1/6 - b) summed twice equals 1.
        assert!((table.beta(&[0, 1]) - 1.0 / 3.0).abs() < 1e-12);
        let probs = table.allocation(&[0, 1]);
        assert!((probs[0].1 - 0.5).abs() < 1e-12);
        assert!((probs[1].1 - 0.5).abs() < 1e-12);
        frequencies_match(&table, &[0, 1], 7);
    }

    #[test]
    fn greedy_plan_split_and_frequencies() {
        let inst = contended_pair();
        let table = ServingTable::new(&hwm(&inst, false).unwrap().plan, &inst).unwrap();
        let probs = table.allocation(&[1, 0]);
        // First in order takes its share, the second what is left.
        assert_eq!(probs[0].0, 0);
        assert!((probs[0].1 - 0.6).abs() < 1e-12);
        assert!((probs[1].1 - 0.4).abs() < 1e-12);
        frequencies_match(&table, &[0, 1], 8);
    }

    #[test]
    fn converged_pair_is_saturated() {
        let inst = contended_pair();
        let table = ServingTable::new(&converged(&inst, false), &inst).unwrap();
        let total: f64 = table.allocation(&[0, 1]).iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_ids_are_skipped_and_counted() {
        let inst = contended_pair();
        let table = ServingTable::new(&converged(&inst, false), &inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counters = ServeCounters::default();
        let ev = ImpressionEvent {
            timestamp: 0.0,
            weight: 1.0,
            eligible: vec!["zzz".into()],
        };
        assert_eq!(serve_impression(&ev, &table, &mut rng, &mut counters), None);
        let empty = ImpressionEvent {
            eligible: vec![],
            ..ev
        };
        assert_eq!(serve_impression(&empty, &table, &mut rng, &mut counters), None);
        assert_eq!(
            counters,
            ServeCounters {
                events: 2,
                none: 2,
                skipped_ids: 1,
                empty_events: 1
            }
        );
    }

    #[test]
    fn expectation_matches_offline_allocation() {
        let inst = synth::generate_synthetic(12, 6, 1.5, 3).unwrap();
        for two_pass in [false, true] {
            let plan_run = shale(&inst, &ShaleOptions::iterations(7).two_pass(two_pass), None).unwrap();
            let table = ServingTable::new(&plan_run.solution.plan, &inst).unwrap();
            let served = expected_allocation(&table, &inst).unwrap();
            let offline = plan_run.solution.allocation.unwrap();
            for (a, b) in served.x.iter().zip(&offline.x) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b} (two_pass {two_pass})");
            }
        }
        let h = hwm(&inst, true).unwrap();
        let table = ServingTable::new(&h.plan, &inst).unwrap();
        let served = expected_allocation(&table, &inst).unwrap();
        for (a, b) in served.x.iter().zip(&h.allocation.unwrap().x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn plan_with_unknown_contract_is_rejected() {
        let inst = contended_pair();
        let mut plan = converged(&inst, false);
        plan.entries[0].id = "nope".into();
        assert!(ServingTable::new(&plan, &inst).is_err());
    }
}
