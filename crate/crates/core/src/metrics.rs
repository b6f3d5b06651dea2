//! Evaluation quantities for allocations, plans and serving runs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alloc::{Allocation, Solution};
use crate::error::Result;
use crate::model::{Instance, Side};
use crate::serving::DeliveryStats;

/// Default pacing band around the linear goal.
pub const DEFAULT_PACING_BAND: f64 = 0.12;
/// Default fraction of checkpoints that must be inside the band.
pub const DEFAULT_PACING_QUOTA: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub under_delivery_rate: f64,
    pub penalty_cost: f64,
    /// Absent when no per-arc allocation was materialized.
    pub l2_distance: Option<f64>,
    pub asc: f64,
    /// Present only for serving runs.
    pub pacing: Option<f64>,
    pub objective: Option<f64>,
}

impl MetricsReport {
    /// Metrics from an under-delivery vector alone.
    pub fn from_under_delivery(instance: &Instance, under: &[f64]) -> Self {
        MetricsReport {
            under_delivery_rate: under_delivery_rate(instance, under),
            penalty_cost: penalty_cost(instance, under),
            l2_distance: None,
            asc: asc(instance),
            pacing: None,
            objective: None,
        }
    }

    pub fn from_allocation(instance: &Instance, allocation: &Allocation) -> Result<Self> {
        let mut report = Self::from_under_delivery(instance, &allocation.under_delivery);
        let l2 = l2_distance(instance, &allocation.x)?;
        report.l2_distance = Some(l2);
        report.objective = Some(l2 + report.penalty_cost);
        Ok(report)
    }

    pub fn from_solution(instance: &Instance, solution: &Solution) -> Result<Self> {
        match &solution.allocation {
            Some(a) => Self::from_allocation(instance, a),
            None => Ok(Self::from_under_delivery(instance, &solution.under_delivery)),
        }
    }

    /// Flat `key=value` lines; absent fields are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}={v}");
            }
        };
        line("under_delivery_rate", Some(self.under_delivery_rate));
        line("penalty_cost", Some(self.penalty_cost));
        line("l2_distance", self.l2_distance);
        line("objective", self.objective);
        line("asc", Some(self.asc));
        line("pacing", self.pacing);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// `sum_j u_j / sum_j d_j`.
pub fn under_delivery_rate(instance: &Instance, under: &[f64]) -> f64 {
    under.iter().sum::<f64>() / instance.total_demand()
}

/// `sum_j p_j u_j`.
pub fn penalty_cost(instance: &Instance, under: &[f64]) -> f64 {
    instance
        .demand()
        .iter()
        .zip(under)
        .map(|(d, u)| d.penalty * u)
        .sum()
}

/// Weighted squared distance of `x` (demand-grouped arc order) from the
/// proportional targets.
pub fn l2_distance(instance: &Instance, x: &[f64]) -> Result<f64> {
    let supply = instance.supply();
    let demand = instance.demand();
    let theta = instance.thetas();
    let mut total = 0.0;
    instance.arcs().scan(Side::Demand, |batch| {
        for (j, start, sup) in batch.iter() {
            let start = start as usize;
            let w = demand[j].priority / theta[j];
            for (&i, &xij) in sup.iter().zip(&x[start..start + sup.len()]) {
                let dev = xij - theta[j];
                total += 0.5 * supply[i as usize].weight * w * dev * dev;
            }
        }
        Ok(())
    })?;
    Ok(total)
}

/// Objective of the allocation problem: L2 distance plus penalty cost.
pub fn objective(instance: &Instance, allocation: &Allocation) -> Result<f64> {
    Ok(l2_distance(instance, &allocation.x)? + penalty_cost(instance, &allocation.under_delivery))
}

/// Average supply contention: supply-weighted mean over supply nodes of
/// `sum_{j in Γ(i)} d_j / S_j`.
pub fn asc(instance: &Instance) -> f64 {
    let total = instance.total_supply();
    if total <= 0.0 {
        return 0.0;
    }
    let supply = instance.supply();
    let theta = instance.thetas();
    let mut weighted = 0.0;
    let scanned = instance.arcs().scan(Side::Demand, |batch| {
        for (j, _, sup) in batch.iter() {
            let s: f64 = sup.iter().map(|&i| supply[i as usize].weight).sum();
            weighted += theta[j] * s;
        }
        Ok(())
    });
    match scanned {
        Ok(()) => weighted / total,
        // The disk store was readable when the instance was built; fall back
        // to the closed form, which holds since every contract has arcs.
        Err(_) => instance.total_demand() / total,
    }
}

/// The interval over which a contract is expected to deliver linearly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveWindow {
    pub start: f64,
    pub end: f64,
}

impl ActiveWindow {
    /// Linear delivery goal at time `t`, clamped to `[0, demand]`.
    pub fn linear_goal(&self, demand: f64, t: f64) -> f64 {
        let frac = ((t - self.start) / (self.end - self.start)).clamp(0.0, 1.0);
        demand * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingOutcome {
    /// Fraction of evaluated contracts that paced well; `None` if no
    /// contract could be evaluated.
    pub fraction: Option<f64>,
    pub evaluated: usize,
    /// Contracts skipped for a zero-length window or no checkpoint inside it.
    pub excluded: usize,
}

/// Fraction of contracts whose delivery stays within `band` of the linear
/// goal at no fewer than `quota` of the checkpoints inside their window.
pub fn pacing(
    stats: &DeliveryStats,
    demands: &[f64],
    windows: &[ActiveWindow],
    band: f64,
    quota: f64,
) -> PacingOutcome {
    let mut evaluated = 0;
    let mut excluded = 0;
    let mut good = 0;
    for (j, (&d, w)) in demands.iter().zip(windows).enumerate() {
        if !(w.end > w.start) {
            excluded += 1;
            continue;
        }
        let mut inside = 0usize;
        let mut total = 0usize;
        for cp in &stats.checkpoints {
            if cp.time <= w.start || cp.time > w.end {
                continue;
            }
            total += 1;
            let goal = w.linear_goal(d, cp.time);
            if (cp.delivered[j] - goal).abs() <= band * goal {
                inside += 1;
            }
        }
        if total == 0 {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        if inside as f64 >= quota * total as f64 - 1e-12 {
            good += 1;
        }
    }
    PacingOutcome {
        fraction: (evaluated > 0).then(|| good as f64 / evaluated as f64),
        evaluated,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemandNode, SupplyNode};
    use crate::serving::Checkpoint;

    fn pair() -> Instance {
        Instance::from_parts(
            vec![SupplyNode::new("a", 20.0)],
            vec![
                DemandNode::new("x", 10.0, 1.0, 1.0),
                DemandNode::new("y", 10.0, 0.015, 1.0),
            ],
            [(0, 0), (0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn rate_and_penalty() {
        let inst = pair();
        assert_eq!(under_delivery_rate(&inst, &[0.0, 5.0]), 0.25);
        assert_eq!(under_delivery_rate(&inst, &[0.0, 0.0]), 0.0);
        assert_eq!(under_delivery_rate(&inst, &[10.0, 10.0]), 1.0);
        assert!((penalty_cost(&inst, &[0.0, 5.0]) - 0.075).abs() < 1e-15);
    }

    #[test]
    fn l2_single_arc() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("a", 100.0)],
            vec![DemandNode::new("x", 25.0, 1.0, 1.0)],
            [(0, 0)],
        )
        .unwrap();
        assert!((l2_distance(&inst, &[0.5]).unwrap() - 12.5).abs() < 1e-12);
        assert_eq!(l2_distance(&inst, &[0.25]).unwrap(), 0.0);
        let double = Instance::from_parts(
            vec![SupplyNode::new("a", 100.0)],
            vec![DemandNode::new("x", 25.0, 1.0, 2.0)],
            [(0, 0)],
        )
        .unwrap();
        assert!((l2_distance(&double, &[0.5]).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn objective_sums_components() {
        let inst = pair();
        let alloc = Allocation {
            x: vec![0.5, 0.25],
            under_delivery: vec![0.0, 5.0],
        };
        let l2 = l2_distance(&inst, &alloc.x).unwrap();
        let p = penalty_cost(&inst, &alloc.under_delivery);
        assert_eq!(objective(&inst, &alloc).unwrap(), l2 + p);
        let report = MetricsReport::from_allocation(&inst, &alloc).unwrap();
        assert_eq!(report.objective, Some(l2 + p));
        assert!(report.to_text().contains("under_delivery_rate=0.25\n"));
        let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn asc_examples() {
        let one = Instance::from_parts(
            vec![SupplyNode::new("a", 10.0)],
            vec![DemandNode::new("x", 5.0, 1.0, 1.0)],
            [(0, 0)],
        )
        .unwrap();
        assert_eq!(asc(&one), 0.5);
        let inst = pair();
        let halved = inst
            .with_scaled_supply(0.5, crate::model::ArcStorage::Memory)
            .unwrap();
        assert!((asc(&halved) - 2.0 * asc(&inst)).abs() < 1e-12);
    }

    fn stats(points: &[(f64, f64)]) -> DeliveryStats {
        DeliveryStats {
            checkpoints: points
                .iter()
                .map(|&(time, got)| Checkpoint {
                    time,
                    delivered: vec![got],
                })
                .collect(),
            ..DeliveryStats::default()
        }
    }

    #[test]
    fn linear_goal_midweek() {
        let w = ActiveWindow { start: 0.0, end: 7.0 };
        assert!((w.linear_goal(14.0, 3.0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn pacing_smooth_and_late() {
        let w = [ActiveWindow { start: 0.0, end: 10.0 }];
        let smooth: Vec<_> = (1..=10).map(|t| (t as f64, 10.0 * t as f64)).collect();
        let out = pacing(&stats(&smooth), &[100.0], &w, 0.12, 0.8);
        assert_eq!(out.fraction, Some(1.0));
        let late: Vec<_> = (1..=10)
            .map(|t| (t as f64, if t == 10 { 100.0 } else { 0.0 }))
            .collect();
        let out = pacing(&stats(&late), &[100.0], &w, 0.12, 0.8);
        assert_eq!(out.fraction, Some(0.0));
    }

    #[test]
    fn pacing_excludes_degenerate_windows() {
        let out = pacing(
            &stats(&[(1.0, 1.0)]),
            &[1.0],
            &[ActiveWindow { start: 2.0, end: 2.0 }],
            0.12,
            0.8,
        );
        assert_eq!((out.fraction, out.excluded), (None, 1));
    }
}
