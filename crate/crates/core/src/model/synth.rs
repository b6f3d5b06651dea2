//! Synthetic instance generators.
//!
//! The topology model is our own: every contract samples a fixed number of
//! distinct supply nodes, with low-numbered supply nodes more popular
//! (`index = floor(n * u^k)` for uniform `u` and popularity exponent `k`),
//! so contracts overlap on a shared head of inventory. Supply weights are
//! scaled at the end so the average supply contention hits the requested
//! value; since `sum_i s_i sum_{j in Γ(i)} d_j / S_j = sum_j d_j`, that
//! scaling is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArcStorage, DemandNode, Instance, InstanceBuilder, SupplyNode};
use crate::error::{Error, Result};

/// How a contract's under-delivery penalty is derived from its revenue per
/// impression `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyPreset {
    /// `p = 0.005 + q`, used for static plan comparisons.
    #[default]
    Planning,
    /// `p = 0.002 + 4 q`, used for serving simulations.
    Serving,
}

impl PenaltyPreset {
    pub fn penalty(self, revenue_per_impression: f64) -> f64 {
        match self {
            PenaltyPreset::Planning => 0.005 + revenue_per_impression,
            PenaltyPreset::Serving => 0.002 + 4.0 * revenue_per_impression,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_contracts: usize,
    pub samples_per_contract: usize,
    /// Target average supply contention.
    pub contention: f64,
    pub seed: u64,
    /// Number of supply nodes; defaults to `max(samples, n * samples / 2)`.
    pub n_supply: Option<usize>,
    pub popularity_exponent: f64,
    pub penalty: PenaltyPreset,
    pub revenue_range: (f64, f64),
    pub priority_range: (f64, f64),
    pub demand_range: (f64, f64),
    pub storage: ArcStorage,
}

impl SyntheticConfig {
    pub fn new(n_contracts: usize, samples_per_contract: usize, contention: f64, seed: u64) -> Self {
        SyntheticConfig {
            n_contracts,
            samples_per_contract,
            contention,
            seed,
            n_supply: None,
            popularity_exponent: 1.5,
            penalty: PenaltyPreset::Planning,
            revenue_range: (0.0005, 0.005),
            priority_range: (0.005, 0.02),
            demand_range: (1_000.0, 10_000.0),
            storage: ArcStorage::Memory,
        }
    }

    fn supply_count(&self) -> usize {
        self.n_supply.unwrap_or_else(|| {
            self.samples_per_contract
                .max(self.n_contracts * self.samples_per_contract / 2)
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_contracts == 0 {
            return bad("n_contracts must be positive");
        }
        if self.samples_per_contract == 0 {
            return bad("samples_per_contract must be positive");
        }
        if !(self.contention > 0.0) || !self.contention.is_finite() {
            return bad("contention must be positive");
        }
        if self.supply_count() < self.samples_per_contract {
            return bad("n_supply must be at least samples_per_contract");
        }
        if self.supply_count() > u32::MAX as usize || self.n_contracts > u32::MAX as usize {
            return bad("too many nodes");
        }
        if !(self.popularity_exponent >= 1.0) {
            return bad("popularity_exponent must be at least 1");
        }
        for (name, (lo, hi)) in [
            ("revenue_range", self.revenue_range),
            ("priority_range", self.priority_range),
            ("demand_range", self.demand_range),
        ] {
            if !(lo <= hi) || lo < 0.0 {
                return bad(&format!("{name} is not a valid range"));
            }
        }
        if !(self.priority_range.0 > 0.0) || !(self.demand_range.0 > 0.0) {
            return bad("priorities and demands must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Generates an instance with the default topology and value ranges.
pub fn generate_synthetic(
    n_contracts: usize,
    samples_per_contract: usize,
    contention: f64,
    seed: u64,
) -> Result<Instance> {
    generate(&SyntheticConfig::new(
        n_contracts,
        samples_per_contract,
        contention,
        seed,
    ))
}

/// Generates an instance; arcs are streamed into the configured storage so
/// large instances never materialize their arc list in memory.
pub fn generate(config: &SyntheticConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_supply = config.supply_count();

    let demand: Vec<DemandNode> = (0..config.n_contracts)
        .map(|j| {
            let q = uniform(&mut rng, config.revenue_range);
            DemandNode {
                id: format!("c{j}"),
                demand: uniform(&mut rng, config.demand_range).round().max(1.0),
                penalty: config.penalty.penalty(q),
                priority: uniform(&mut rng, config.priority_range),
                revenue_per_impression: q,
            }
        })
        .collect();
    let raw: Vec<f64> = (0..n_supply).map(|_| rng.gen_range(1.0..10.0)).collect();
    let total_demand: f64 = demand.iter().map(|d| d.demand).sum();
    let scale = total_demand / config.contention / raw.iter().sum::<f64>();

    let mut b = InstanceBuilder::new(config.storage.clone());
    for (k, w) in raw.iter().enumerate() {
        b.add_supply(SupplyNode::new(format!("s{k}"), w * scale))?;
    }
    for d in demand {
        b.add_demand(d)?;
    }

    let samples = config.samples_per_contract;
    let mut stamp = vec![u32::MAX; n_supply];
    let mut picked = Vec::with_capacity(samples);
    for j in 0..config.n_contracts {
        picked.clear();
        let mut attempts = 0usize;
        while picked.len() < samples && attempts < 8 * samples {
            attempts += 1;
            let u: f64 = rng.gen();
            let k = ((n_supply as f64) * u.powf(config.popularity_exponent)) as usize;
            let k = k.min(n_supply - 1);
            if stamp[k] != j as u32 {
                stamp[k] = j as u32;
                picked.push(k as u32);
            }
        }
        // Heavy skew can starve the sampler; fill from a random offset.
        let mut k = rng.gen_range(0..n_supply);
        while picked.len() < samples {
            if stamp[k] != j as u32 {
                stamp[k] = j as u32;
                picked.push(k as u32);
            }
            k = (k + 1) % n_supply;
        }
        for &i in &picked {
            b.add_arc(i, j as u32)?;
        }
    }
    b.finish()
}

/// Shape of the small random instances used by the reference comparisons.
#[derive(Debug, Clone, Copy)]
pub struct SmallConfig {
    pub max_supply: usize,
    pub max_demand: usize,
    pub penalty_range: (f64, f64),
    pub priority_range: (f64, f64),
}

impl Default for SmallConfig {
    fn default() -> Self {
        SmallConfig {
            max_supply: 10,
            max_demand: 5,
            penalty_range: (0.5, 5.0),
            priority_range: (0.5, 2.0),
        }
    }
}

/// A small random instance with mixed contention: each contract asks for a
/// random fraction of its eligible supply, so some supply nodes are
/// oversubscribed and others are not.
pub fn random_small(seed: u64, config: &SmallConfig) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_supply = rng.gen_range(2..=config.max_supply.max(2));
    let n_demand = rng.gen_range(1..=config.max_demand.max(1));
    let supply: Vec<SupplyNode> = (0..n_supply)
        .map(|i| SupplyNode::new(format!("s{i}"), rng.gen_range(1.0..100.0)))
        .collect();
    let mut arcs = Vec::new();
    let mut demand = Vec::new();
    for j in 0..n_demand {
        let mut eligible = 0.0;
        let start = arcs.len();
        for (i, s) in supply.iter().enumerate() {
            if rng.gen_bool(0.5) {
                arcs.push((i, j));
                eligible += s.weight;
            }
        }
        if arcs.len() == start {
            let i = rng.gen_range(0..n_supply);
            arcs.push((i, j));
            eligible += supply[i].weight;
        }
        let fraction = rng.gen_range(0.1..0.9);
        demand.push(DemandNode::new(
            format!("d{j}"),
            fraction * eligible,
            uniform(&mut rng, config.penalty_range),
            uniform(&mut rng, config.priority_range),
        ));
    }
    Instance::from_parts(supply, demand, arcs)
}
