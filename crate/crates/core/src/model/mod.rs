//! Bipartite instance model: supply and demand nodes, eligibility arcs and
//! the per-contract quantities derived from them.

mod arcs;
pub(crate) mod io;
pub mod synth;

use std::collections::HashMap;

pub use arcs::{ArcStorage, ArcStore, ArcStoreBuilder, Neighborhoods, Side, DEFAULT_BATCH_ARCS};
pub use io::{read_instance, write_instance, InstanceFormat};

use crate::error::{Error, NodeKind, Result};

/// A sampled impression class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyNode {
    pub id: String,
    /// Number of impressions this node stands for.
    pub weight: f64,
}

/// A guaranteed-delivery contract.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandNode {
    pub id: String,
    /// Impressions guaranteed.
    pub demand: f64,
    /// Cost per under-delivered impression.
    pub penalty: f64,
    /// Weight of representativeness relative to other contracts.
    pub priority: f64,
    /// Revenue per delivered impression; only used to derive penalties.
    pub revenue_per_impression: f64,
}

impl DemandNode {
    pub fn new(id: impl Into<String>, demand: f64, penalty: f64, priority: f64) -> Self {
        DemandNode {
            id: id.into(),
            demand,
            penalty,
            priority,
            revenue_per_impression: 0.0,
        }
    }
}

impl SupplyNode {
    pub fn new(id: impl Into<String>, weight: f64) -> Self {
        SupplyNode {
            id: id.into(),
            weight,
        }
    }
}

pub(crate) fn validate_supply(node: &SupplyNode) -> std::result::Result<(), String> {
    if !(node.weight >= 0.0) || !node.weight.is_finite() {
        return Err(format!(
            "supply `{}` has invalid weight {}",
            node.id, node.weight
        ));
    }
    Ok(())
}

pub(crate) fn validate_demand(node: &DemandNode) -> std::result::Result<(), String> {
    let ok = |v: f64| v > 0.0 && v.is_finite();
    if !ok(node.demand) {
        return Err(format!("demand `{}` has invalid demand {}", node.id, node.demand));
    }
    if !ok(node.penalty) {
        return Err(format!("demand `{}` has invalid penalty {}", node.id, node.penalty));
    }
    if !ok(node.priority) {
        return Err(format!(
            "demand `{}` has invalid priority {}",
            node.id, node.priority
        ));
    }
    Ok(())
}

/// The weighted bipartite allocation instance.
///
/// Immutable once built. `theta[j] = demand[j] / eligible_supply[j]` is the
/// representativeness target shared by every arc of contract `j`.
#[derive(Debug)]
pub struct Instance {
    supply: Vec<SupplyNode>,
    demand: Vec<DemandNode>,
    eligible_supply: Vec<f64>,
    theta: Vec<f64>,
    arcs: ArcStore,
    supply_index: HashMap<String, u32>,
    demand_index: HashMap<String, u32>,
}

/// Incremental construction with validation, used by the loaders and the
/// generator. Nodes must be added before the arcs that reference them.
pub struct InstanceBuilder {
    supply: Vec<SupplyNode>,
    demand: Vec<DemandNode>,
    supply_index: HashMap<String, u32>,
    demand_index: HashMap<String, u32>,
    storage: ArcStorage,
    arcs: Option<ArcStoreBuilder>,
    eligible_supply: Vec<f64>,
    batch_arcs: usize,
}

impl InstanceBuilder {
    pub fn new(storage: ArcStorage) -> Self {
        InstanceBuilder {
            supply: Vec::new(),
            demand: Vec::new(),
            supply_index: HashMap::new(),
            demand_index: HashMap::new(),
            storage,
            arcs: None,
            eligible_supply: Vec::new(),
            batch_arcs: DEFAULT_BATCH_ARCS,
        }
    }

    pub fn batch_arcs(mut self, batch_arcs: usize) -> Self {
        self.batch_arcs = batch_arcs;
        self
    }

    fn nodes_frozen(&self) -> bool {
        self.arcs.is_some()
    }

    pub fn add_supply(&mut self, node: SupplyNode) -> Result<u32> {
        validate_supply(&node).map_err(Error::InvalidParameter)?;
        if self.nodes_frozen() {
            return Err(Error::InvalidParameter(format!(
                "supply `{}` declared after the first arc",
                node.id
            )));
        }
        let idx = self.supply.len() as u32;
        if self.supply_index.insert(node.id.clone(), idx).is_some() {
            return Err(Error::DuplicateNode {
                kind: NodeKind::Supply,
                id: node.id,
            });
        }
        self.supply.push(node);
        Ok(idx)
    }

    pub fn add_demand(&mut self, node: DemandNode) -> Result<u32> {
        validate_demand(&node).map_err(Error::InvalidParameter)?;
        if self.nodes_frozen() {
            return Err(Error::InvalidParameter(format!(
                "demand `{}` declared after the first arc",
                node.id
            )));
        }
        let idx = self.demand.len() as u32;
        if self.demand_index.insert(node.id.clone(), idx).is_some() {
            return Err(Error::DuplicateNode {
                kind: NodeKind::Demand,
                id: node.id,
            });
        }
        self.demand.push(node);
        Ok(idx)
    }

    pub fn supply_index(&self, id: &str) -> Option<u32> {
        self.supply_index.get(id).copied()
    }

    pub fn demand_index(&self, id: &str) -> Option<u32> {
        self.demand_index.get(id).copied()
    }

    /// Adds the arc between two already-declared nodes, by index.
    pub fn add_arc(&mut self, supply: u32, demand: u32) -> Result<()> {
        if (supply as usize) >= self.supply.len() || (demand as usize) >= self.demand.len() {
            return Err(Error::InvalidParameter(format!(
                "arc ({supply}, {demand}) out of range"
            )));
        }
        if self.arcs.is_none() {
            self.arcs = Some(
                ArcStoreBuilder::new(self.supply.len(), self.demand.len(), &self.storage)?
                    .batch_arcs(self.batch_arcs),
            );
            self.eligible_supply = vec![0.0; self.demand.len()];
        }
        self.arcs.as_mut().unwrap().push(supply, demand)?;
        self.eligible_supply[demand as usize] += self.supply[supply as usize].weight;
        Ok(())
    }

    /// Finalizes the instance, rejecting contracts without eligible supply.
    pub fn finish(self) -> Result<Instance> {
        let arcs = match self.arcs {
            Some(a) => a,
            None => ArcStoreBuilder::new(self.supply.len(), self.demand.len(), &self.storage)?,
        };
        let mut eligible_supply = self.eligible_supply;
        eligible_supply.resize(self.demand.len(), 0.0);
        let degrees = arcs.demand_degrees();
        for (j, node) in self.demand.iter().enumerate() {
            if degrees[j] == 0 || !(eligible_supply[j] > 0.0) {
                return Err(Error::NoEligibleSupply {
                    id: node.id.clone(),
                });
            }
        }
        let theta = self
            .demand
            .iter()
            .zip(&eligible_supply)
            .map(|(d, s)| d.demand / s)
            .collect();
        Ok(Instance {
            supply: self.supply,
            demand: self.demand,
            eligible_supply,
            theta,
            arcs: arcs.finish()?,
            supply_index: self.supply_index,
            demand_index: self.demand_index,
        })
    }
}

impl Instance {
    /// Builds an in-memory instance from node lists and arcs given by index.
    pub fn from_parts(
        supply: Vec<SupplyNode>,
        demand: Vec<DemandNode>,
        arcs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Instance> {
        Self::from_parts_with(supply, demand, arcs, ArcStorage::Memory)
    }

    pub fn from_parts_with(
        supply: Vec<SupplyNode>,
        demand: Vec<DemandNode>,
        arcs: impl IntoIterator<Item = (usize, usize)>,
        storage: ArcStorage,
    ) -> Result<Instance> {
        let mut b = InstanceBuilder::new(storage);
        for s in supply {
            b.add_supply(s)?;
        }
        for d in demand {
            b.add_demand(d)?;
        }
        for (i, j) in arcs {
            b.add_arc(i as u32, j as u32)?;
        }
        b.finish()
    }

    pub fn supply(&self) -> &[SupplyNode] {
        &self.supply
    }

    pub fn demand(&self) -> &[DemandNode] {
        &self.demand
    }

    pub fn n_supply(&self) -> usize {
        self.supply.len()
    }

    pub fn n_demand(&self) -> usize {
        self.demand.len()
    }

    pub fn n_arcs(&self) -> usize {
        self.arcs.n_arcs()
    }

    pub fn arcs(&self) -> &ArcStore {
        &self.arcs
    }

    /// `S_j` for every contract, by index.
    pub fn eligible_supplies(&self) -> &[f64] {
        &self.eligible_supply
    }

    /// `theta_j = d_j / S_j` for every contract, by index.
    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn supply_index(&self, id: &str) -> Option<usize> {
        self.supply_index.get(id).map(|&i| i as usize)
    }

    pub fn demand_index(&self, id: &str) -> Option<usize> {
        self.demand_index.get(id).map(|&i| i as usize)
    }

    /// Total eligible supply of the contract named `id`.
    pub fn eligible_supply(&self, id: &str) -> Result<f64> {
        self.demand_index(id)
            .map(|j| self.eligible_supply[j])
            .ok_or_else(|| Error::UnknownNode {
                kind: NodeKind::Demand,
                id: id.to_string(),
            })
    }

    pub fn total_supply(&self) -> f64 {
        self.supply.iter().map(|s| s.weight).sum()
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().map(|d| d.demand).sum()
    }

    /// Materializes all arcs as `(supply, demand)` index pairs in
    /// demand-grouped order. Only meant for small instances.
    pub fn arc_list(&self) -> Result<Vec<(usize, usize)>> {
        let mut out = Vec::with_capacity(self.n_arcs());
        self.arcs.scan(Side::Demand, |batch| {
            for (j, _, sup) in batch.iter() {
                out.extend(sup.iter().map(|&i| (i as usize, j)));
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Same nodes and arcs with every supply weight multiplied by `factor`.
    pub fn with_scaled_supply(&self, factor: f64, storage: ArcStorage) -> Result<Instance> {
        let supply: Vec<SupplyNode> = self
            .supply
            .iter()
            .map(|s| SupplyNode::new(s.id.clone(), s.weight * factor))
            .collect();
        let mut b = InstanceBuilder::new(storage);
        for s in supply {
            b.add_supply(s)?;
        }
        for d in &self.demand {
            b.add_demand(d.clone())?;
        }
        self.arcs.for_each_original(|s, d| b.add_arc(s, d))?;
        b.finish()
    }
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        if self.supply != other.supply
            || self.demand != other.demand
            || self.eligible_supply != other.eligible_supply
            || self.theta != other.theta
            || self.n_arcs() != other.n_arcs()
        {
            return false;
        }
        let collect = |inst: &Instance| {
            let mut v = Vec::with_capacity(inst.n_arcs());
            inst.arcs
                .for_each_original(|s, d| {
                    v.push((s, d));
                    Ok(())
                })
                .map(|_| v)
        };
        match (collect(self), collect(other)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("a", 60.0), SupplyNode::new("b", 40.0)],
            vec![DemandNode::new("c", 50.0, 1.0, 1.0)],
            [(0, 0), (1, 0)],
        )
        .unwrap();
        assert_eq!(inst.eligible_supply("c").unwrap(), 100.0);
        assert_eq!(inst.thetas(), &[0.5]);
        assert!(matches!(
            inst.eligible_supply("zz"),
            Err(Error::UnknownNode { .. })
        ));
    }

    #[test]
    fn rejects_contract_without_supply() {
        let err = Instance::from_parts(
            vec![SupplyNode::new("a", 10.0)],
            vec![
                DemandNode::new("c", 5.0, 1.0, 1.0),
                DemandNode::new("lonely", 5.0, 1.0, 1.0),
            ],
            [(0, 0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoEligibleSupply { ref id } if id == "lonely"));
    }

    #[test]
    fn rejects_zero_weight_only_supply() {
        let err = Instance::from_parts(
            vec![SupplyNode::new("a", 0.0)],
            vec![DemandNode::new("c", 5.0, 1.0, 1.0)],
            [(0, 0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoEligibleSupply { .. }));
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        let mut b = InstanceBuilder::new(ArcStorage::Memory);
        b.add_supply(SupplyNode::new("a", 1.0)).unwrap();
        assert!(matches!(
            b.add_supply(SupplyNode::new("a", 2.0)),
            Err(Error::DuplicateNode { .. })
        ));
        assert!(b.add_supply(SupplyNode::new("neg", -1.0)).is_err());
        assert!(b.add_demand(DemandNode::new("d", 0.0, 1.0, 1.0)).is_err());
        assert!(b.add_demand(DemandNode::new("d", 1.0, 0.0, 1.0)).is_err());
        assert!(b.add_demand(DemandNode::new("d", 1.0, 1.0, -2.0)).is_err());
    }

    #[test]
    fn scaled_supply_keeps_graph() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("a", 10.0), SupplyNode::new("b", 30.0)],
            vec![DemandNode::new("c", 5.0, 1.0, 1.0)],
            [(1, 0), (0, 0)],
        )
        .unwrap();
        let half = inst.with_scaled_supply(0.5, ArcStorage::Memory).unwrap();
        assert_eq!(half.eligible_supplies(), &[20.0]);
        assert_eq!(half.thetas(), &[0.25]);
        assert_eq!(half.arc_list().unwrap(), inst.arc_list().unwrap());
    }
}
