//! Replay of an impression log with periodic re-optimization.
//!
//! At each re-optimization time `t` the remaining demand is
//! `max{0, d_j - delivered_j}`, the remaining supply is whatever the
//! forecast still expects after `t`, and the dual method is re-run on that
//! residual instance, warm-started from the plan in force.

use std::collections::HashMap;
use std::io::{BufWriter, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ImpressionEvent, ServeCounters, ServingTable};
use crate::alloc::{shale, AllocationPlan, ShaleOptions, Variant};
use crate::error::{Error, Result};
use crate::metrics::{pacing, ActiveWindow, MetricsReport, PacingOutcome, DEFAULT_PACING_BAND, DEFAULT_PACING_QUOTA};
use crate::model::{ArcStorage, DemandNode, Instance, InstanceBuilder, Side, SupplyNode};

pub const STATS_HEADER: &str = "STATS v1";

/// A slice of forecast supply: `weight` impressions eligible for the given
/// contracts (indices into the instance's demand nodes), spread uniformly
/// over `[start, end]`, or arriving at once when `start == end`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastClass {
    pub eligible: Vec<u32>,
    pub weight: f64,
    pub start: f64,
    pub end: f64,
}

impl ForecastClass {
    /// Forecast impressions of this class arriving at or after `t`.
    pub fn remaining(&self, t: f64) -> f64 {
        if self.end > self.start {
            self.weight * ((self.end - t) / (self.end - self.start)).clamp(0.0, 1.0)
        } else if self.start >= t {
            self.weight
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Forecast {
    pub classes: Vec<ForecastClass>,
}

impl Forecast {
    /// Every supply node of `instance` arrives at a constant rate over
    /// `[start, end]`.
    pub fn stationary(instance: &Instance, start: f64, end: f64) -> Result<Self> {
        if !(end >= start) {
            return Err(Error::InvalidParameter("forecast window is empty".into()));
        }
        let supply = instance.supply();
        let mut classes = Vec::with_capacity(instance.n_supply());
        instance.arcs().scan(Side::Supply, |batch| {
            for (i, _, dem) in batch.iter() {
                classes.push(ForecastClass {
                    eligible: dem.to_vec(),
                    weight: supply[i].weight,
                    start,
                    end,
                });
            }
            Ok(())
        })?;
        Ok(Forecast { classes })
    }

    /// One point class per forecast event; ids unknown to `instance` are
    /// dropped.
    pub fn from_events(instance: &Instance, events: &[ImpressionEvent]) -> Self {
        let classes = events
            .iter()
            .map(|e| ForecastClass {
                eligible: e
                    .eligible
                    .iter()
                    .filter_map(|id| instance.demand_index(id).map(|j| j as u32))
                    .collect(),
                weight: e.weight,
                start: e.timestamp,
                end: e.timestamp,
            })
            .collect();
        Forecast { classes }
    }

    /// The residual problem at time `t`: contracts with outstanding demand
    /// and some remaining eligible supply, against the remaining forecast
    /// (classes with identical eligible sets merged). `None` when no
    /// contract qualifies.
    pub fn remaining_instance(
        &self,
        instance: &Instance,
        t: f64,
        remaining_demand: &[f64],
        tolerance: f64,
    ) -> Result<Option<Instance>> {
        let demand = instance.demand();
        let wants: Vec<bool> = demand
            .iter()
            .zip(remaining_demand)
            .map(|(d, r)| *r > tolerance * d.demand)
            .collect();
        let mut groups: Vec<(Vec<u32>, f64)> = Vec::new();
        let mut lookup: HashMap<Vec<u32>, usize> = HashMap::new();
        for class in &self.classes {
            let w = class.remaining(t);
            if w <= 0.0 {
                continue;
            }
            let mut key: Vec<u32> = class
                .eligible
                .iter()
                .copied()
                .filter(|&j| wants[j as usize])
                .collect();
            if key.is_empty() {
                continue;
            }
            key.sort_unstable();
            key.dedup();
            match lookup.get(&key) {
                Some(&k) => groups[k].1 += w,
                None => {
                    lookup.insert(key.clone(), groups.len());
                    groups.push((key, w));
                }
            }
        }
        let mut has_supply = vec![false; demand.len()];
        for (key, _) in &groups {
            for &j in key {
                has_supply[j as usize] = true;
            }
        }
        let mut new_index = vec![u32::MAX; demand.len()];
        let mut b = InstanceBuilder::new(ArcStorage::Memory);
        for (k, (_, w)) in groups.iter().enumerate() {
            b.add_supply(SupplyNode::new(format!("r{k}"), *w))?;
        }
        let mut any = false;
        for (j, d) in demand.iter().enumerate() {
            if has_supply[j] {
                new_index[j] = b.add_demand(DemandNode {
                    demand: remaining_demand[j],
                    ..d.clone()
                })?;
                any = true;
            }
        }
        if !any {
            return Ok(None);
        }
        for (k, (key, _)) in groups.iter().enumerate() {
            for &j in key {
                b.add_arc(k as u32, new_index[j as usize])?;
            }
        }
        b.finish().map(Some)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Time between re-optimizations; infinite serves one static plan.
    pub reopt_period: f64,
    /// Stage One iterations per re-optimization.
    pub iterations: usize,
    pub seed: u64,
    pub two_pass: bool,
    /// Time between delivery snapshots. Defaults to the re-optimization
    /// period when it is shorter than the log, else a tenth of the log.
    pub checkpoint_period: Option<f64>,
    pub pacing_band: f64,
    pub pacing_quota: f64,
    pub threads: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            reopt_period: f64::INFINITY,
            iterations: 20,
            seed: 0,
            two_pass: false,
            checkpoint_period: None,
            pacing_band: DEFAULT_PACING_BAND,
            pacing_quota: DEFAULT_PACING_QUOTA,
            threads: 1,
        }
    }
}

/// Cumulative delivery at a point in time, per instance contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub delivered: Vec<f64>,
}

/// Plan duals in force from `time` on; `None` for contracts the plan left
/// out.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSnapshot {
    pub time: f64,
    pub alpha: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryStats {
    pub ids: Vec<String>,
    pub delivered: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
    pub alpha_history: Vec<AlphaSnapshot>,
    pub counters: ServeCounters,
    pub reoptimizations: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub stats: DeliveryStats,
    pub metrics: MetricsReport,
    pub pacing: PacingOutcome,
    /// The plan in force at the end of the log.
    pub final_plan: Option<AllocationPlan>,
}

/// Serves `log` (sorted by timestamp) starting from `initial_plan`,
/// re-optimizing against `forecast` every `options.reopt_period`.
pub fn replay(
    log: &[ImpressionEvent],
    instance: &Instance,
    forecast: &Forecast,
    initial_plan: &AllocationPlan,
    options: &ReplayOptions,
) -> Result<ReplayOutcome> {
    if log.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::InvalidParameter("log is not sorted by timestamp".into()));
    }
    if !(options.reopt_period > 0.0) {
        return Err(Error::InvalidParameter("reopt period must be positive".into()));
    }
    let demand = instance.demand();
    let n = demand.len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut stats = DeliveryStats {
        ids: demand.iter().map(|d| d.id.clone()).collect(),
        delivered: vec![0.0; n],
        ..DeliveryStats::default()
    };

    // Resolve ids once; unknown ids are counted on every serve.
    let mut unknown = vec![0u64; log.len()];
    let resolved: Vec<Vec<u32>> = log
        .iter()
        .zip(unknown.iter_mut())
        .map(|(e, miss)| {
            e.eligible
                .iter()
                .filter_map(|id| {
                    let j = instance.demand_index(id).map(|j| j as u32);
                    if j.is_none() {
                        *miss += 1;
                    }
                    j
                })
                .collect()
        })
        .collect();

    let mut plan = Some(initial_plan.clone());
    let mut table = ServingTable::new(initial_plan, instance)?;
    let mut slot_of = slots_for(&table, instance);
    let (t0, t_end) = match (log.first(), log.last()) {
        (Some(a), Some(b)) => (a.timestamp, b.timestamp),
        _ => (0.0, 0.0),
    };
    stats.alpha_history.push(alpha_snapshot(t0, &table, instance));

    let boundaries = schedule(t0, t_end, options);
    let mut next = 0usize;
    let mut slots = Vec::new();
    let mut serve_until = |limit: f64,
                           inclusive: bool,
                           next: &mut usize,
                           table: &ServingTable,
                           slot_of: &[Option<usize>],
                           stats: &mut DeliveryStats,
                           rng: &mut ChaCha8Rng| {
        while *next < log.len() {
            let e = &log[*next];
            if e.timestamp > limit || (!inclusive && e.timestamp == limit) {
                break;
            }
            let c = &mut stats.counters;
            c.events += 1;
            c.skipped_ids += unknown[*next];
            if e.eligible.is_empty() {
                c.empty_events += 1;
                c.none += 1;
                *next += 1;
                continue;
            }
            slots.clear();
            for &j in &resolved[*next] {
                match slot_of[j as usize] {
                    Some(k) => slots.push(k),
                    None => c.skipped_ids += 1,
                }
            }
            match table.select(&slots, rng) {
                Some(k) => {
                    let j = instance
                        .demand_index(&table.contracts()[k].id)
                        .expect("table built from instance ids");
                    stats.delivered[j] += e.weight;
                }
                None => stats.counters.none += 1,
            }
            *next += 1;
        }
    };

    for &(time, reopt) in &boundaries {
        serve_until(time, false, &mut next, &table, &slot_of, &mut stats, &mut rng);
        stats.checkpoints.push(Checkpoint {
            time,
            delivered: stats.delivered.clone(),
        });
        if !reopt {
            continue;
        }
        let remaining: Vec<f64> = demand
            .iter()
            .zip(&stats.delivered)
            .map(|(d, got)| (d.demand - got).max(0.0))
            .collect();
        stats.reoptimizations += 1;
        match forecast.remaining_instance(instance, time, &remaining, 1e-6)? {
            Some(residual) => {
                let opts = ShaleOptions {
                    threads: options.threads,
                    ..ShaleOptions::iterations(options.iterations)
                        .two_pass(options.two_pass)
                        .materialize(false)
                };
                let run = shale(&residual, &opts, plan.as_ref())?;
                table = ServingTable::new(&run.solution.plan, &residual)?;
                plan = Some(run.solution.plan);
            }
            None => {
                let empty = AllocationPlan {
                    variant: Variant::Shale,
                    entries: Vec::new(),
                };
                table = ServingTable::new(&empty, instance)?;
                plan = None;
            }
        }
        slot_of = slots_for(&table, instance);
        stats.alpha_history.push(alpha_snapshot(time, &table, instance));
    }
    serve_until(f64::INFINITY, true, &mut next, &table, &slot_of, &mut stats, &mut rng);
    if !log.is_empty() {
        stats.checkpoints.push(Checkpoint {
            time: t_end,
            delivered: stats.delivered.clone(),
        });
    }

    let under: Vec<f64> = demand
        .iter()
        .zip(&stats.delivered)
        .map(|(d, got)| (d.demand - got).max(0.0))
        .collect();
    let windows = active_windows(n, log, &resolved);
    let demands: Vec<f64> = demand.iter().map(|d| d.demand).collect();
    let pacing = pacing(
        &stats,
        &demands,
        &windows,
        options.pacing_band,
        options.pacing_quota,
    );
    let mut metrics = MetricsReport::from_under_delivery(instance, &under);
    metrics.pacing = pacing.fraction;
    Ok(ReplayOutcome {
        stats,
        metrics,
        pacing,
        final_plan: plan,
    })
}

fn slots_for(table: &ServingTable, instance: &Instance) -> Vec<Option<usize>> {
    instance.demand().iter().map(|d| table.slot(&d.id)).collect()
}

fn alpha_snapshot(time: f64, table: &ServingTable, instance: &Instance) -> AlphaSnapshot {
    AlphaSnapshot {
        time,
        alpha: slots_for(table, instance)
            .into_iter()
            .map(|k| k.map(|k| table.contracts()[k].alpha))
            .collect(),
    }
}

/// Snapshot and re-optimization times strictly inside `(t0, t_end)`, each
/// flagged with whether it re-optimizes.
fn schedule(t0: f64, t_end: f64, options: &ReplayOptions) -> Vec<(f64, bool)> {
    let horizon = t_end - t0;
    if !(horizon > 0.0) {
        return Vec::new();
    }
    let reopt = options.reopt_period;
    let snap = options.checkpoint_period.unwrap_or(if reopt < horizon {
        reopt
    } else {
        horizon / 10.0
    });
    let ticks = |period: f64| -> Vec<f64> {
        if !(period > 0.0) || !period.is_finite() {
            return Vec::new();
        }
        (1..)
            .map(|k| t0 + k as f64 * period)
            .take_while(|&t| t < t_end)
            .collect()
    };
    let mut out: Vec<(f64, bool)> = ticks(snap).into_iter().map(|t| (t, false)).collect();
    out.extend(ticks(reopt).into_iter().map(|t| (t, true)));
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let eps = 1e-9 * horizon;
    let mut merged: Vec<(f64, bool)> = Vec::with_capacity(out.len());
    for (t, r) in out {
        match merged.last_mut() {
            Some(last) if (t - last.0).abs() <= eps => last.1 |= r,
            _ => merged.push((t, r)),
        }
    }
    merged
}

/// Each contract's window spans the first to last log event it is
/// eligible for.
fn active_windows(n: usize, log: &[ImpressionEvent], resolved: &[Vec<u32>]) -> Vec<ActiveWindow> {
    let mut windows = vec![
        ActiveWindow {
            start: f64::INFINITY,
            end: f64::NEG_INFINITY,
        };
        n
    ];
    for (e, js) in log.iter().zip(resolved) {
        for &j in js {
            let w = &mut windows[j as usize];
            w.start = w.start.min(e.timestamp);
            w.end = w.end.max(e.timestamp);
        }
    }
    for w in &mut windows {
        if w.start > w.end {
            *w = ActiveWindow { start: 0.0, end: 0.0 };
        }
    }
    windows
}

/// Writes the delivery time series in the `STATS v1` text format.
pub fn write_stats(stats: &DeliveryStats, instance: &Instance, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{STATS_HEADER}")?;
    let c = &stats.counters;
    writeln!(
        w,
        "N {} {} {} {} {}",
        c.events, c.none, c.skipped_ids, c.empty_events, stats.reoptimizations
    )?;
    for cp in &stats.checkpoints {
        for (id, got) in stats.ids.iter().zip(&cp.delivered) {
            writeln!(w, "C {} {} {}", cp.time, id, got)?;
        }
    }
    for snap in &stats.alpha_history {
        for (id, a) in stats.ids.iter().zip(&snap.alpha) {
            match a {
                Some(a) => writeln!(w, "A {} {} {}", snap.time, id, a)?,
                None => writeln!(w, "A {} {} -", snap.time, id)?,
            }
        }
    }
    for (d, got) in instance.demand().iter().zip(&stats.delivered) {
        writeln!(w, "F {} {} {}", d.id, got, (d.demand - got).max(0.0))?;
    }
    w.flush()?;
    Ok(())
}
