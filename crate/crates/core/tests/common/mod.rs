//! Helpers shared by the integration tests: an independent bisection root
//! finder for the piecewise-linear equations, and small instance builders.

#![allow(dead_code)]

use shale_core::model::synth::{random_small, SmallConfig};
use shale_core::Instance;

pub fn resp(theta: f64, priority: f64, z: f64) -> f64 {
    (theta * (1.0 + z / priority)).max(0.0)
}

/// Smallest `z` in `[lo, hi]` with `f(z) >= target` for non-decreasing `f`.
/// The caller guarantees `f(lo) < target <= f(hi)`.
pub fn bisect_up(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Grows `hi` until `f(hi) >= target`; `None` if it never does.
pub fn bracket(f: &impl Fn(f64) -> f64, target: f64, start: f64) -> Option<f64> {
    let mut hi = start.max(1.0);
    for _ in 0..200 {
        if f(hi) >= target {
            return Some(hi);
        }
        hi *= 2.0;
    }
    None
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn small(seed: u64) -> Instance {
    random_small(seed, &SmallConfig::default()).unwrap()
}
