use super::{allocation_order, Allocation, AllocationPlan, DualState, PlanEntry, Solution, Variant};
use crate::error::Result;
use crate::model::Instance;
use crate::pwl::solve_zeta_hwm;

/// Greedy high-water-mark allocation.
///
/// Contracts are visited in allocation order; each takes the same fraction
/// `zeta_j` of every eligible impression, limited by what earlier contracts
/// left (`residual_i`, in impressions). Linear in the number of arcs apart
/// from the per-contract breakpoint sort.
pub fn hwm(instance: &Instance, materialize: bool) -> Result<Solution> {
    let supply = instance.supply();
    let demand = instance.demand();
    let order = allocation_order(instance);

    let mut residual: Vec<f64> = supply.iter().map(|s| s.weight).collect();
    let mut delivered = vec![0.0; instance.n_demand()];
    let mut zeta = vec![0.0; instance.n_demand()];
    let mut x = materialize.then(|| vec![0.0; instance.n_arcs()]);

    let mut buf = Vec::new();
    let mut weights = Vec::new();
    for &j in &order {
        let neighbors = instance.arcs().demand_neighbors(j, &mut buf)?;
        weights.clear();
        weights.extend(
            neighbors
                .iter()
                .map(|&i| (supply[i as usize].weight, residual[i as usize])),
        );
        let z = solve_zeta_hwm(&weights, demand[j].demand)?
            .or_infinity()
            .max(0.0);
        zeta[j] = z;
        let start = instance.arcs().demand_arc_start(j);
        for (k, &i) in neighbors.iter().enumerate() {
            let i = i as usize;
            let s = supply[i].weight;
            let take = if z.is_infinite() {
                residual[i]
            } else {
                residual[i].min(z * s)
            };
            residual[i] = (residual[i] - take).max(0.0);
            delivered[j] += take;
            if let Some(x) = x.as_mut() {
                x[start + k] = if s > 0.0 { take / s } else { 0.0 };
            }
        }
    }

    let under_delivery: Vec<f64> = demand
        .iter()
        .zip(&delivered)
        .map(|(d, got)| (d.demand - got).max(0.0))
        .collect();
    let mut entries: Vec<PlanEntry> = demand
        .iter()
        .enumerate()
        .map(|(j, d)| PlanEntry {
            id: d.id.clone(),
            alpha: 0.0,
            zeta: zeta[j],
            order_index: 0,
            pass: 1,
        })
        .collect();
    for (pos, &j) in order.iter().enumerate() {
        entries[j].order_index = pos;
    }
    let allocation = x.map(|x| Allocation {
        x,
        under_delivery: under_delivery.clone(),
    });
    Ok(Solution {
        plan: AllocationPlan {
            variant: Variant::Hwm,
            entries,
        },
        duals: DualState::cold(instance),
        delivered,
        under_delivery,
        allocation,
    })
}
