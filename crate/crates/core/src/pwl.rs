//! Exact root finders for the monotone piecewise-linear equations used by
//! every allocator.
//!
//! All three equation families reduce to the same shape: a sum of clipped
//! ramps `min{cap, slope * max(0, z - start)}` set equal to a positive
//! target. The sum is continuous and non-decreasing in `z`, so one sorted
//! sweep over the ramp kinks locates the smallest root exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical tolerances shared by the solvers and the allocators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance for root exactness checks.
    pub root: f64,
    /// Absolute slack allowed on supply and demand constraints.
    pub feasibility: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        root: 1e-9,
        feasibility: 1e-6,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::DEFAULT
    }
}

/// One summand of a dual equation.
///
/// The allocation response of an arc is `g(theta, priority, z)`; `offset`
/// is the dual of the opposite endpoint (an `alpha` when solving for a
/// supply dual, a `beta` otherwise), `scale` is the supply weight and `cap`
/// bounds the scaled response in the capped solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTerm {
    pub theta: f64,
    pub priority: f64,
    pub offset: f64,
    pub scale: f64,
    pub cap: f64,
}

impl GTerm {
    /// Term of a supply-dual equation; only `theta`, `priority` and the
    /// contract dual are read.
    pub fn for_beta(theta: f64, priority: f64, alpha: f64) -> Self {
        GTerm {
            theta,
            priority,
            offset: alpha,
            scale: 1.0,
            cap: f64::INFINITY,
        }
    }

    /// Term of a demand-dual equation for an arc from a supply node of
    /// weight `weight` whose dual is `beta`.
    pub fn for_alpha(theta: f64, priority: f64, beta: f64, weight: f64) -> Self {
        GTerm {
            theta,
            priority,
            offset: beta,
            scale: weight,
            cap: f64::INFINITY,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = cap;
        self
    }
}

/// Allocation response `max{0, theta (1 + z / priority)}`.
#[inline]
pub fn g(theta: f64, priority: f64, z: f64) -> f64 {
    (theta * (1.0 + z / priority)).max(0.0)
}

/// Outcome of a piecewise-linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PwlSolution {
    /// A root of the defining equation.
    Exact(f64),
    /// The caller's clamp rule fired; the value is the clamp.
    Clamped(f64),
    /// The equation has no root at all (capped supply below target).
    NoSolution,
}

impl PwlSolution {
    pub fn value(self) -> Option<f64> {
        match self {
            PwlSolution::Exact(v) | PwlSolution::Clamped(v) => Some(v),
            PwlSolution::NoSolution => None,
        }
    }

    pub fn is_clamped(self) -> bool {
        matches!(self, PwlSolution::Clamped(_))
    }

    /// Value with `NoSolution` read as `+inf`, the convention for `zeta`.
    pub fn or_infinity(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy)]
struct Ramp {
    start: f64,
    slope: f64,
    cap: f64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Enter { slope: f64, start: f64 },
    Saturate { slope: f64, start: f64, cap: f64 },
}

/// Smallest `z` with `sum(min{cap, slope * max(0, z - start)}) = target`,
/// or `None` when the supremum of the sum is below `target`.
fn smallest_ramp_root(ramps: impl IntoIterator<Item = Ramp>, target: f64) -> Option<f64> {
    let mut events: Vec<(f64, Event)> = Vec::new();
    let mut sup = 0.0_f64;
    for r in ramps {
        if !(r.slope > 0.0) || !(r.cap > 0.0) {
            continue;
        }
        sup += r.cap;
        events.push((
            r.start,
            Event::Enter {
                slope: r.slope,
                start: r.start,
            },
        ));
        if r.cap.is_finite() {
            events.push((
                r.start + r.cap / r.slope,
                Event::Saturate {
                    slope: r.slope,
                    start: r.start,
                    cap: r.cap,
                },
            ));
        }
    }
    if sup < target {
        return None;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Inside a segment the sum is `saturated + intercept + slope * z`.
    let mut saturated = 0.0;
    let mut intercept = 0.0;
    let mut slope = 0.0;
    let mut active = 0usize;
    let mut prev = f64::NEG_INFINITY;

    let mut k = 0;
    while k < events.len() {
        let pos = events[k].0;
        if slope > 0.0 {
            let at_end = saturated + intercept + slope * pos;
            if at_end >= target {
                let root = (target - saturated - intercept) / slope;
                return Some(root.clamp(prev, pos));
            }
        } else if saturated >= target && prev.is_finite() {
            return Some(prev);
        }
        while k < events.len() && events[k].0 == pos {
            match events[k].1 {
                Event::Enter { slope: s, start } => {
                    active += 1;
                    slope += s;
                    intercept -= s * start;
                }
                Event::Saturate {
                    slope: s,
                    start,
                    cap,
                } => {
                    active -= 1;
                    if active == 0 {
                        slope = 0.0;
                        intercept = 0.0;
                    } else {
                        slope -= s;
                        intercept += s * start;
                    }
                    saturated += cap;
                }
            }
            k += 1;
        }
        prev = pos;
    }
    if slope > 0.0 {
        Some(((target - saturated - intercept) / slope).max(prev))
    } else {
        // Sum saturates exactly at the target; rounding kept the sweep from
        // seeing the crossing, so the last kink is the root.
        Some(prev)
    }
}

/// Supply dual: root of `sum_j g(alpha_j - beta) = 1`, clamped at zero.
pub fn solve_beta(terms: &[GTerm]) -> Result<PwlSolution> {
    if terms.is_empty() {
        return Err(Error::EmptyTerms);
    }
    // With y = -beta each summand is a ramp in y starting at -(alpha + V).
    let ramps = terms.iter().map(|t| Ramp {
        start: -(t.offset + t.priority),
        slope: t.theta / t.priority,
        cap: f64::INFINITY,
    });
    let y = smallest_ramp_root(ramps, 1.0).expect("uncapped ramps always reach the target");
    let beta = -y;
    Ok(if beta > 0.0 {
        PwlSolution::Exact(beta)
    } else if beta == 0.0 {
        PwlSolution::Exact(0.0)
    } else {
        PwlSolution::Clamped(0.0)
    })
}

/// Demand dual: smallest root of `sum_i s_i g(alpha - beta_i) = target`,
/// clamped at `p_cap` from above. Negative roots are returned unclamped.
pub fn solve_alpha(terms: &[GTerm], target: f64, p_cap: f64) -> Result<PwlSolution> {
    if terms.is_empty() {
        return Err(Error::EmptyTerms);
    }
    let ramps = terms.iter().map(|t| Ramp {
        start: t.offset - t.priority,
        slope: t.scale * t.theta / t.priority,
        cap: f64::INFINITY,
    });
    Ok(match smallest_ramp_root(ramps, target) {
        Some(root) if root <= p_cap => PwlSolution::Exact(root),
        _ => PwlSolution::Clamped(p_cap),
    })
}

/// Serving fraction of a contract: smallest root of
/// `sum_i min{cap_i, s_i g(zeta - beta_i)} = target`, bounded by `upper`.
pub fn solve_zeta_capped(terms: &[GTerm], target: f64, upper: f64) -> Result<PwlSolution> {
    if terms.is_empty() {
        return Err(Error::EmptyTerms);
    }
    let ramps = terms.iter().map(|t| Ramp {
        start: t.offset - t.priority,
        slope: t.scale * t.theta / t.priority,
        cap: t.cap,
    });
    Ok(match smallest_ramp_root(ramps, target) {
        None => PwlSolution::NoSolution,
        Some(root) if root > upper => PwlSolution::Clamped(upper),
        Some(root) => PwlSolution::Exact(root),
    })
}

/// Greedy fraction: smallest root of `sum_i min{residual_i, zeta s_i} = target`
/// over `(s_i, residual_i)` pairs.
pub fn solve_zeta_hwm(weights: &[(f64, f64)], target: f64) -> Result<PwlSolution> {
    if weights.is_empty() {
        return Err(Error::EmptyTerms);
    }
    let ramps = weights.iter().map(|&(weight, residual)| Ramp {
        start: 0.0,
        slope: weight,
        cap: residual,
    });
    Ok(match smallest_ramp_root(ramps, target) {
        Some(root) => PwlSolution::Exact(root),
        None => PwlSolution::NoSolution,
    })
}
