//! Two-stage dual allocator.
//!
//! Stage One alternates a supply half-pass (solve every `beta_i` given
//! `alpha`) and a demand half-pass (solve every `alpha_j` given `beta`),
//! streaming the arcs in the matching order each time. Stage Two turns any
//! `alpha` into a feasible primal allocation with a high-water-mark style
//! sequential pass that respects what earlier contracts already took.

use std::time::{Duration, Instant};

use super::{
    allocation_order, Allocation, AllocationPlan, DualState, PlanEntry, Solution, Variant, Workers,
};
use crate::error::Result;
use crate::model::{Instance, Side};
use crate::pwl::{g, solve_alpha, solve_beta, solve_zeta_capped, GTerm, PwlSolution, Tolerances};

/// Early-exit conditions for Stage One; the iteration limit always applies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StopRule {
    /// Stop once `max_j |Δalpha_j| / max(alpha_j, p_j)` falls to this value.
    pub alpha_change: Option<f64>,
    /// Stop once the iterate gives an epsilon-approximate delivery.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct StageOneOptions {
    pub max_iterations: usize,
    pub time_budget: Option<Duration>,
    pub stop: StopRule,
    /// Track the first iteration whose `alpha` is epsilon-approximate.
    pub track_epsilon: Option<f64>,
    pub threads: usize,
}

impl StageOneOptions {
    pub fn iterations(max_iterations: usize) -> Self {
        StageOneOptions {
            max_iterations,
            time_budget: None,
            stop: StopRule::default(),
            track_epsilon: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    IterationLimit,
    TimeBudget,
    Converged,
    EpsilonApproximate,
}

#[derive(Debug, Clone)]
pub struct StageOneOutcome {
    pub state: DualState,
    pub iterations_run: usize,
    pub reason: StopReason,
    /// Iteration count `t` of the first epsilon-approximate `alpha^t`, when
    /// tracking was requested and it was reached.
    pub first_epsilon_iteration: Option<usize>,
    pub last_alpha_change: f64,
}

/// What one Stage One iteration saw and produced.
#[derive(Debug)]
pub struct IterationReport<'a> {
    /// Index `t + 1` of the new iterate.
    pub iteration: usize,
    pub alpha_before: &'a [f64],
    pub alpha_after: &'a [f64],
    /// Supply duals computed from `alpha_before`.
    pub beta: &'a [f64],
    /// Projected delivery `d_j(alpha_before)`.
    pub projected_before: &'a [f64],
    /// Whether the `p_j` clamp produced `alpha_after[j]`.
    pub capped: &'a [bool],
}

fn beta_terms(instance: &Instance, alpha: &[f64], demand_ids: &[u32]) -> Vec<GTerm> {
    let theta = instance.thetas();
    let demand = instance.demand();
    demand_ids
        .iter()
        .map(|&j| {
            let j = j as usize;
            GTerm::for_beta(theta[j], demand[j].priority, alpha[j])
        })
        .collect()
}

fn beta_for(instance: &Instance, alpha: &[f64], demand_ids: &[u32]) -> f64 {
    if demand_ids.is_empty() {
        return 0.0;
    }
    solve_beta(&beta_terms(instance, alpha, demand_ids))
        .expect("non-empty terms")
        .value()
        .unwrap_or(0.0)
}

pub(crate) fn compute_beta_with(
    instance: &Instance,
    alpha: &[f64],
    workers: &Workers,
) -> Result<Vec<f64>> {
    let mut beta = vec![0.0; instance.n_supply()];
    instance.arcs().scan(Side::Supply, |batch| {
        let values = workers.map(batch.len(), |k| {
            let (_, _, dem) = batch.get(k);
            beta_for(instance, alpha, dem)
        });
        let first = batch.first_node();
        beta[first..first + values.len()].copy_from_slice(&values);
        Ok(())
    })?;
    Ok(beta)
}

/// Supply duals implied by `alpha`: each `beta_i` solves
/// `sum_{j in Γ(i)} g_ij(alpha_j - beta_i) = 1`, clamped at zero.
pub fn compute_beta(instance: &Instance, alpha: &[f64]) -> Result<Vec<f64>> {
    compute_beta_with(instance, alpha, &Workers::new(1)?)
}

struct AlphaPass {
    alpha: Vec<f64>,
    projected: Vec<f64>,
    capped: Vec<bool>,
}

fn alpha_pass(
    instance: &Instance,
    alpha: &[f64],
    beta: &[f64],
    workers: &Workers,
) -> Result<AlphaPass> {
    let n = instance.n_demand();
    let theta = instance.thetas();
    let demand = instance.demand();
    let supply = instance.supply();
    let mut out = AlphaPass {
        alpha: vec![0.0; n],
        projected: vec![0.0; n],
        capped: vec![false; n],
    };
    instance.arcs().scan(Side::Demand, |batch| {
        let values = workers.map(batch.len(), |k| {
            let (j, _, sup) = batch.get(k);
            let d = &demand[j];
            let terms: Vec<GTerm> = sup
                .iter()
                .map(|&i| {
                    let i = i as usize;
                    GTerm::for_alpha(theta[j], d.priority, beta[i], supply[i].weight)
                })
                .collect();
            let projected: f64 = terms
                .iter()
                .map(|t| t.scale * g(t.theta, t.priority, alpha[j] - t.offset))
                .sum();
            let sol = solve_alpha(&terms, d.demand, d.penalty).expect("non-empty terms");
            (sol.value().unwrap_or(d.penalty), projected, sol.is_clamped())
        });
        let first = batch.first_node();
        for (k, (a, p, c)) in values.into_iter().enumerate() {
            out.alpha[first + k] = a;
            out.projected[first + k] = p;
            out.capped[first + k] = c;
        }
        Ok(())
    })?;
    Ok(out)
}

fn delivery_under(instance: &Instance, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let theta = instance.thetas();
    let demand = instance.demand();
    let supply = instance.supply();
    let mut out = vec![0.0; instance.n_demand()];
    instance.arcs().scan(Side::Demand, |batch| {
        for (j, _, sup) in batch.iter() {
            out[j] = sup
                .iter()
                .map(|&i| {
                    let i = i as usize;
                    supply[i].weight * g(theta[j], demand[j].priority, alpha[j] - beta[i])
                })
                .sum();
        }
        Ok(())
    })?;
    Ok(out)
}

/// Projected delivery `d_j(alpha) = sum_{i in Γ(j)} s_i g_ij(alpha_j - beta_i)`
/// with `beta` recomputed from `alpha`.
pub fn projected_delivery(instance: &Instance, alpha: &[f64]) -> Result<Vec<f64>> {
    let beta = compute_beta(instance, alpha)?;
    delivery_under(instance, alpha, &beta)
}

/// Every contract either has `alpha_j = p_j` or projects at least
/// `(1 - epsilon) d_j`.
pub fn is_epsilon_approximate(
    instance: &Instance,
    alpha: &[f64],
    projected: &[f64],
    epsilon: f64,
) -> bool {
    instance
        .demand()
        .iter()
        .zip(alpha.iter().zip(projected))
        .all(|(d, (&a, &got))| a >= d.penalty || got >= (1.0 - epsilon) * d.demand)
}

/// Runs whole Stage One iterations on `state`.
pub fn stage_one(
    instance: &Instance,
    state: DualState,
    options: &StageOneOptions,
) -> Result<StageOneOutcome> {
    stage_one_observed(instance, state, options, |_| {})
}

/// [`stage_one`] with a callback after every iteration.
pub fn stage_one_observed<F>(
    instance: &Instance,
    mut state: DualState,
    options: &StageOneOptions,
    mut observe: F,
) -> Result<StageOneOutcome>
where
    F: FnMut(&IterationReport<'_>),
{
    let workers = Workers::new(options.threads)?;
    let started = Instant::now();
    let demand = instance.demand();
    let mut reason = StopReason::IterationLimit;
    let mut first_epsilon = None;
    let mut iterations_run = 0;
    let mut last_change = f64::INFINITY;

    while iterations_run < options.max_iterations {
        if let Some(budget) = options.time_budget {
            if started.elapsed() >= budget {
                reason = StopReason::TimeBudget;
                break;
            }
        }
        let beta = compute_beta_with(instance, &state.alpha, &workers)?;
        let pass = alpha_pass(instance, &state.alpha, &beta, &workers)?;
        if let Some(eps) = options.track_epsilon.or(options.stop.epsilon) {
            if first_epsilon.is_none()
                && is_epsilon_approximate(instance, &state.alpha, &pass.projected, eps)
            {
                first_epsilon = Some(state.iteration);
            }
        }
        observe(&IterationReport {
            iteration: state.iteration + 1,
            alpha_before: &state.alpha,
            alpha_after: &pass.alpha,
            beta: &beta,
            projected_before: &pass.projected,
            capped: &pass.capped,
        });
        last_change = state
            .alpha
            .iter()
            .zip(&pass.alpha)
            .zip(demand)
            .map(|((a, b), d)| (b - a).abs() / b.abs().max(d.penalty))
            .fold(0.0, f64::max);
        let reached_epsilon = options.stop.epsilon.is_some() && first_epsilon.is_some();
        state = DualState {
            alpha: pass.alpha,
            beta,
            iteration: state.iteration + 1,
        };
        iterations_run += 1;
        if reached_epsilon {
            reason = StopReason::EpsilonApproximate;
            break;
        }
        if matches!(options.stop.alpha_change, Some(tol) if last_change <= tol) {
            reason = StopReason::Converged;
            break;
        }
    }

    if first_epsilon.is_none() {
        if let Some(eps) = options.track_epsilon.or(options.stop.epsilon) {
            let projected = delivery_under(
                instance,
                &state.alpha,
                &compute_beta_with(instance, &state.alpha, &workers)?,
            )?;
            if is_epsilon_approximate(instance, &state.alpha, &projected, eps) {
                first_epsilon = Some(state.iteration);
            }
        }
    }

    Ok(StageOneOutcome {
        state,
        iterations_run,
        reason,
        first_epsilon_iteration: first_epsilon,
        last_alpha_change: last_change,
    })
}

/// Stage Two: `beta` from `state.alpha`, then contracts in allocation order
/// take `min{residual_i, g_ij(zeta_j - beta_i)}` of each eligible impression.
///
/// Pass one bounds `zeta_j` by `alpha_j`. With `two_pass`, contracts still
/// short afterwards are re-solved for their remaining demand against the
/// leftover fractions with no bound, and tagged pass 2 in the plan.
pub fn stage_two(
    instance: &Instance,
    state: &DualState,
    two_pass: bool,
    materialize: bool,
) -> Result<Solution> {
    stage_two_with(instance, state, two_pass, materialize, &Tolerances::DEFAULT)
}

pub(crate) fn stage_two_with(
    instance: &Instance,
    state: &DualState,
    two_pass: bool,
    materialize: bool,
    tolerances: &Tolerances,
) -> Result<Solution> {
    let demand = instance.demand();
    let alpha = &state.alpha;
    let beta = compute_beta(instance, alpha)?;
    let order = allocation_order(instance);

    let mut pass_state = Sequential {
        residual: vec![1.0; instance.n_supply()],
        delivered: vec![0.0; instance.n_demand()],
        x: materialize.then(|| vec![0.0; instance.n_arcs()]),
        buf: Vec::new(),
        terms: Vec::new(),
    };
    let mut zeta = vec![0.0; instance.n_demand()];
    let mut pass = vec![1u8; instance.n_demand()];

    for &j in &order {
        zeta[j] = pass_state.allocate(instance, &beta, j, demand[j].demand, alpha[j])?;
    }
    if two_pass {
        for &j in &order {
            let short = demand[j].demand - pass_state.delivered[j];
            if short > tolerances.feasibility * demand[j].demand {
                zeta[j] = pass_state.allocate(instance, &beta, j, short, f64::INFINITY)?;
                pass[j] = 2;
            }
        }
    }

    let Sequential { delivered, x, .. } = pass_state;
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
            alpha: alpha[j],
            zeta: zeta[j],
            order_index: 0,
            pass: pass[j],
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
            variant: Variant::Shale,
            entries,
        },
        duals: DualState {
            alpha: alpha.clone(),
            beta,
            iteration: state.iteration,
        },
        delivered,
        under_delivery,
        allocation,
    })
}

/// Running state of a sequential allocation pass; `residual` holds the
/// unallocated fraction of each supply node.
struct Sequential {
    residual: Vec<f64>,
    delivered: Vec<f64>,
    x: Option<Vec<f64>>,
    buf: Vec<u32>,
    terms: Vec<GTerm>,
}

impl Sequential {
    /// Solves contract `j`'s serving fraction for `target` impressions,
    /// bounded by `upper`, and takes the resulting allocation.
    fn allocate(
        &mut self,
        instance: &Instance,
        beta: &[f64],
        j: usize,
        target: f64,
        upper: f64,
    ) -> Result<f64> {
        let supply = instance.supply();
        let d = &instance.demand()[j];
        let theta = instance.thetas()[j];
        let neighbors = instance.arcs().demand_neighbors(j, &mut self.buf)?;
        let residual = &mut self.residual;
        self.terms.clear();
        self.terms.extend(neighbors.iter().map(|&i| {
            let i = i as usize;
            GTerm::for_alpha(theta, d.priority, beta[i], supply[i].weight)
                .with_cap(supply[i].weight * residual[i])
        }));
        let z = match solve_zeta_capped(&self.terms, target, upper)? {
            PwlSolution::Exact(z) | PwlSolution::Clamped(z) => z,
            PwlSolution::NoSolution => upper,
        }
        .max(0.0);
        let start = instance.arcs().demand_arc_start(j);
        let mut got = 0.0;
        for (k, &i) in neighbors.iter().enumerate() {
            let i = i as usize;
            let take = residual[i].min(g(theta, d.priority, z - beta[i]));
            residual[i] = (residual[i] - take).max(0.0);
            got += supply[i].weight * take;
            if let Some(x) = self.x.as_mut() {
                x[start + k] += take;
            }
        }
        self.delivered[j] += got;
        Ok(z)
    }
}

/// Stage One then Stage Two.
#[derive(Debug, Clone)]
pub struct ShaleOptions {
    pub iterations: usize,
    pub two_pass: bool,
    pub materialize: bool,
    pub threads: usize,
    pub time_budget: Option<Duration>,
    pub stop: StopRule,
    pub track_epsilon: Option<f64>,
    pub tolerances: Tolerances,
}

impl ShaleOptions {
    pub fn iterations(iterations: usize) -> Self {
        ShaleOptions {
            iterations,
            two_pass: false,
            materialize: true,
            threads: 1,
            time_budget: None,
            stop: StopRule::default(),
            track_epsilon: None,
            tolerances: Tolerances::DEFAULT,
        }
    }

    pub fn two_pass(mut self, two_pass: bool) -> Self {
        self.two_pass = two_pass;
        self
    }

    pub fn materialize(mut self, materialize: bool) -> Self {
        self.materialize = materialize;
        self
    }

    pub fn stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn track_epsilon(mut self, epsilon: f64) -> Self {
        self.track_epsilon = Some(epsilon);
        self
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ShaleRun {
    pub solution: Solution,
    pub iterations_run: usize,
    pub reason: StopReason,
    pub first_epsilon_iteration: Option<usize>,
    pub last_alpha_change: f64,
}

/// Full solve: cold start (`alpha = 0`) or warm start from a previous plan,
/// Stage One for up to `options.iterations` iterations, then Stage Two.
pub fn shale(
    instance: &Instance,
    options: &ShaleOptions,
    warm_start: Option<&AllocationPlan>,
) -> Result<ShaleRun> {
    let state = match warm_start {
        Some(plan) => DualState::warm(instance, plan),
        None => DualState::cold(instance),
    };
    let outcome = stage_one(
        instance,
        state,
        &StageOneOptions {
            max_iterations: options.iterations,
            time_budget: options.time_budget,
            stop: options.stop,
            track_epsilon: options.track_epsilon,
            threads: options.threads,
        },
    )?;
    let solution = stage_two_with(
        instance,
        &outcome.state,
        options.two_pass,
        options.materialize,
        &options.tolerances,
    )?;
    Ok(ShaleRun {
        solution,
        iterations_run: outcome.iterations_run,
        reason: outcome.reason,
        first_epsilon_iteration: outcome.first_epsilon_iteration,
        last_alpha_change: outcome.last_alpha_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloc::hwm;
    use crate::metrics::MetricsReport;
    use crate::model::{synth, DemandNode, SupplyNode};

    fn pair() -> Instance {
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

    fn converge() -> StopRule {
        StopRule {
            alpha_change: Some(1e-12),
            epsilon: None,
        }
    }

    #[test]
    fn first_iteration_of_contended_pair() {
        let inst = pair();
        let mut seen = Vec::new();
        let out = stage_one_observed(
            &inst,
            DualState::cold(&inst),
            &StageOneOptions::iterations(1),
            |r| seen.push((r.beta.to_vec(), r.alpha_after.to_vec())),
        )
        .unwrap();
        assert!((seen[0].0[0] - 1.0 / 6.0).abs() < 1e-15);
        for a in &out.state.alpha {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
        assert_eq!(out.iterations_run, 1);
        assert_eq!(out.reason, StopReason::IterationLimit);
    }

    #[test]
    fn oversold_pair_converges_to_penalty() {
        let inst = pair();
        let run = shale(&inst, &ShaleOptions::iterations(1000).stop(converge()), None).unwrap();
        assert_eq!(run.reason, StopReason::Converged);
        for a in &run.solution.duals.alpha {
            assert!((a - 10.0).abs() < 1e-12);
        }
        let x = run.solution.allocation.unwrap().x;
        assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn uncontended_stays_at_zero_and_matches_greedy() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("s", 100.0), SupplyNode::new("t", 40.0)],
            vec![
                DemandNode::new("a", 30.0, 1.0, 1.0),
                DemandNode::new("b", 10.0, 1.0, 2.0),
            ],
            [(0, 0), (1, 0), (1, 1)],
        )
        .unwrap();
        let run = shale(&inst, &ShaleOptions::iterations(5), None).unwrap();
        assert!(run.solution.duals.alpha.iter().all(|&a| a == 0.0));
        let zero = shale(&inst, &ShaleOptions::iterations(0), None).unwrap();
        let greedy = hwm(&inst, true).unwrap();
        let a = MetricsReport::from_solution(&inst, &zero.solution).unwrap();
        let b = MetricsReport::from_solution(&inst, &greedy).unwrap();
        assert!((a.objective.unwrap() - b.objective.unwrap()).abs() < 1e-9);
        assert!(a.objective.unwrap() < 1e-12);
    }

    #[test]
    fn any_iteration_count_is_feasible() {
        let inst = synth::generate_synthetic(15, 8, 1.8, 4).unwrap();
        for iters in [0, 1, 3, 10] {
            for two_pass in [false, true] {
                let run = shale(&inst, &ShaleOptions::iterations(iters).two_pass(two_pass), None).unwrap();
                let alloc = run.solution.allocation.unwrap();
                assert!(alloc.max_supply_excess(&inst).unwrap() <= 1e-9);
                assert!(alloc.x.iter().all(|&x| x >= 0.0));
                let delivered = alloc.delivered(&inst).unwrap();
                for (got, want) in delivered.iter().zip(&run.solution.delivered) {
                    assert!((got - want).abs() <= 1e-9 * want.max(1.0));
                }
                run.solution.plan.validate().unwrap();
            }
        }
    }

    #[test]
    fn leftover_pass_never_delivers_less() {
        let inst = synth::generate_synthetic(15, 8, 2.5, 6).unwrap();
        let one = shale(&inst, &ShaleOptions::iterations(3), None).unwrap().solution;
        let two = shale(&inst, &ShaleOptions::iterations(3).two_pass(true), None)
            .unwrap()
            .solution;
        let total = |s: &Solution| s.delivered.iter().sum::<f64>();
        assert!(total(&two) >= total(&one) - 1e-9);
        assert!(two.plan.entries.iter().any(|e| e.pass == 2));
    }

    #[test]
    fn warm_start_from_converged_plan_is_immediate() {
        let inst = synth::generate_synthetic(10, 6, 1.5, 2).unwrap();
        let cold = shale(&inst, &ShaleOptions::iterations(5000).stop(converge()), None).unwrap();
        let warm = shale(
            &inst,
            &ShaleOptions::iterations(5000).stop(converge()),
            Some(&cold.solution.plan),
        )
        .unwrap();
        assert!(warm.iterations_run <= 2);
        for (a, b) in warm.solution.duals.alpha.iter().zip(&cold.solution.duals.alpha) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let inst = synth::generate_synthetic(40, 10, 1.5, 9).unwrap();
        let a = shale(&inst, &ShaleOptions::iterations(6), None).unwrap();
        let b = shale(&inst, &ShaleOptions::iterations(6).threads(3), None).unwrap();
        assert_eq!(a.solution.duals, b.solution.duals);
        assert_eq!(a.solution.plan, b.solution.plan);
    }

    #[test]
    fn zero_time_budget_runs_nothing() {
        let inst = pair();
        let out = stage_one(
            &inst,
            DualState::cold(&inst),
            &StageOneOptions {
                time_budget: Some(Duration::ZERO),
                ..StageOneOptions::iterations(10)
            },
        )
        .unwrap();
        assert_eq!((out.iterations_run, out.reason), (0, StopReason::TimeBudget));
    }

    #[test]
    fn epsilon_stop_and_tracking() {
        let inst = synth::generate_synthetic(10, 6, 1.2, 5).unwrap();
        let opts = StageOneOptions {
            stop: StopRule {
                alpha_change: None,
                epsilon: Some(0.05),
            },
            ..StageOneOptions::iterations(500)
        };
        let out = stage_one(&inst, DualState::cold(&inst), &opts).unwrap();
        assert_eq!(out.reason, StopReason::EpsilonApproximate);
        let t = out.first_epsilon_iteration.unwrap();
        assert_eq!(out.iterations_run, t + 1);
    }
}
