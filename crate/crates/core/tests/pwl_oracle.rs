mod common;

use common::{bisect_up, bracket, close, resp};
use proptest::prelude::*;
use shale_core::pwl::{solve_alpha, solve_beta, solve_zeta_capped, solve_zeta_hwm};
use shale_core::{GTerm, PwlSolution};

fn term() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    // theta, priority, opposite dual, weight
    (0.01f64..1.0, 0.1f64..5.0, -3.0f64..3.0, 0.5f64..100.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn beta_matches_bisection(terms in prop::collection::vec(term(), 1..12)) {
        let gs: Vec<GTerm> = terms.iter().map(|&(t, v, a, _)| GTerm::for_beta(t, v, a)).collect();
        // sum_j g(alpha_j - beta) is non-increasing in beta; bisect on -beta.
        let f = |y: f64| terms.iter().map(|&(t, v, a, _)| resp(t, v, a + y)).sum::<f64>();
        let lo = -terms.iter().map(|&(_, v, a, _)| a + v).fold(f64::MIN, f64::max) - 1.0;
        let hi = bracket(&f, 1.0, 1.0).unwrap();
        let beta = -bisect_up(f, 1.0, lo, hi);
        let got = solve_beta(&gs).unwrap();
        if beta > 1e-9 {
            prop_assert!(matches!(got, PwlSolution::Exact(_)));
            prop_assert!(close(got.value().unwrap(), beta, 1e-7), "{got:?} vs {beta}");
        } else if beta < -1e-9 {
            prop_assert_eq!(got, PwlSolution::Clamped(0.0));
        } else {
            prop_assert!(got.value().unwrap().abs() < 1e-7);
        }
    }

    #[test]
    fn alpha_matches_bisection(
        terms in prop::collection::vec(term(), 1..12),
        frac in 0.05f64..3.0,
        p in 0.01f64..5.0,
    ) {
        let gs: Vec<GTerm> = terms
            .iter()
            .map(|&(t, v, b, s)| GTerm::for_alpha(t, v, b.abs(), s))
            .collect();
        let f = |a: f64| terms.iter().map(|&(t, v, b, s)| s * resp(t, v, a - b.abs())).sum::<f64>();
        let target = frac * terms.iter().map(|&(t, _, _, s)| s * t).sum::<f64>();
        let got = solve_alpha(&gs, target, p).unwrap();
        if f(p) < target * (1.0 - 1e-9) {
            prop_assert_eq!(got, PwlSolution::Clamped(p));
        } else if f(p) > target * (1.0 + 1e-9) {
            let lo = -terms.iter().map(|&(_, v, _, _)| v).fold(0.0, f64::max) - 1.0;
            let root = bisect_up(f, target, lo, p);
            prop_assert!(matches!(got, PwlSolution::Exact(_)));
            prop_assert!(close(got.value().unwrap(), root, 1e-7), "{got:?} vs {root}");
        }
    }

    #[test]
    fn zeta_capped_matches_bisection(
        terms in prop::collection::vec((term(), 0.0f64..1.0), 1..12),
        frac in 0.05f64..1.5,
        upper in prop_oneof![Just(f64::INFINITY), 0.0f64..4.0],
    ) {
        let gs: Vec<GTerm> = terms
            .iter()
            .map(|&((t, v, b, s), c)| GTerm::for_alpha(t, v, b.abs(), s).with_cap(s * c))
            .collect();
        let f = |z: f64| {
            terms
                .iter()
                .map(|&((t, v, b, s), c)| (s * resp(t, v, z - b.abs())).min(s * c))
                .sum::<f64>()
        };
        let sup: f64 = terms.iter().map(|&((_, _, _, s), c)| s * c).sum();
        let target = frac * terms.iter().map(|&((t, _, _, s), _)| s * t).sum::<f64>();
        prop_assume!((sup - target).abs() > 1e-6 * target);
        let got = solve_zeta_capped(&gs, target, upper).unwrap();
        if sup < target {
            prop_assert_eq!(got, PwlSolution::NoSolution);
        } else {
            let lo = -terms.iter().map(|&((_, v, _, _), _)| v).fold(0.0, f64::max) - 1.0;
            let hi = bracket(&f, target, 1.0).unwrap();
            let root = bisect_up(f, target, lo, hi);
            if root > upper + 1e-9 {
                prop_assert_eq!(got, PwlSolution::Clamped(upper));
            } else if root < upper - 1e-9 {
                prop_assert!(close(got.value().unwrap(), root, 1e-7), "{got:?} vs {root}");
            }
        }
    }

    #[test]
    fn zeta_hwm_matches_bisection(
        pairs in prop::collection::vec((0.5f64..100.0, 0.0f64..1.0), 1..12),
        frac in 0.05f64..1.5,
    ) {
        let weights: Vec<(f64, f64)> = pairs.iter().map(|&(s, r)| (s, s * r)).collect();
        let f = |z: f64| weights.iter().map(|&(s, r)| (z * s).min(r)).sum::<f64>();
        let sup: f64 = weights.iter().map(|w| w.1).sum();
        let target = frac * sup;
        prop_assume!((sup - target).abs() > 1e-6 * target && target > 0.0);
        let got = solve_zeta_hwm(&weights, target).unwrap();
        if sup < target {
            prop_assert_eq!(got, PwlSolution::NoSolution);
        } else {
            let root = bisect_up(f, target, 0.0, bracket(&f, target, 1.0).unwrap());
            prop_assert!(close(got.value().unwrap(), root, 1e-7), "{got:?} vs {root}");
        }
    }
}

#[test]
fn worked_examples_exact() {
    let beta = solve_beta(&[GTerm::for_beta(0.6, 1.0, 0.0); 2]).unwrap();
    assert!((beta.value().unwrap() - 1.0 / 6.0).abs() < 1e-15);
    // With theta = V = 1 and offset 1, s g(z - 1) = z s: the zeta ramp of
    // s = (10, 10) with remaining impressions (2, 10), target 8.
    let shifted = [
        GTerm::for_alpha(1.0, 1.0, 1.0, 10.0).with_cap(2.0),
        GTerm::for_alpha(1.0, 1.0, 1.0, 10.0).with_cap(10.0),
    ];
    let z = solve_zeta_capped(&shifted, 8.0, f64::INFINITY).unwrap();
    assert!((z.value().unwrap() - 0.6).abs() < 1e-15);
    let hwm = solve_zeta_hwm(&[(10.0, 2.0), (10.0, 10.0)], 8.0).unwrap();
    assert!((hwm.value().unwrap() - 0.6).abs() < 1e-15);
}
