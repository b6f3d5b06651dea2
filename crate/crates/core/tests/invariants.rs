mod common;

use common::small;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shale_core::alloc::{stage_one_observed, stage_two, StageOneOptions, StopRule};
use shale_core::metrics::{self, MetricsReport};
use shale_core::model::{read_instance, synth, write_instance, ArcStorage, InstanceFormat};
use shale_core::oracle::solve_qp_reference;
use shale_core::{hwm, shale, DemandNode, DualState, Instance, ShaleOptions, SupplyNode};

fn converged() -> ShaleOptions {
    ShaleOptions::iterations(100_000).stop(StopRule {
        alpha_change: Some(1e-11),
        epsilon: None,
    })
}

fn relabel(instance: &Instance, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sp: Vec<usize> = (0..instance.n_supply()).collect();
    let mut dp: Vec<usize> = (0..instance.n_demand()).collect();
    for k in (1..sp.len()).rev() {
        sp.swap(k, rng.gen_range(0..=k));
    }
    for k in (1..dp.len()).rev() {
        dp.swap(k, rng.gen_range(0..=k));
    }
    let mut s_pos = vec![0; sp.len()];
    let mut d_pos = vec![0; dp.len()];
    for (new, &old) in sp.iter().enumerate() {
        s_pos[old] = new;
    }
    for (new, &old) in dp.iter().enumerate() {
        d_pos[old] = new;
    }
    let supply: Vec<SupplyNode> = sp
        .iter()
        .map(|&i| SupplyNode::new(format!("q{}", instance.supply()[i].id), instance.supply()[i].weight))
        .collect();
    let demand: Vec<DemandNode> = dp
        .iter()
        .map(|&j| DemandNode {
            id: format!("k{}", instance.demand()[j].id),
            ..instance.demand()[j].clone()
        })
        .collect();
    let arcs: Vec<(usize, usize)> = instance
        .arc_list()
        .unwrap()
        .into_iter()
        .map(|(i, j)| (s_pos[i], d_pos[j]))
        .collect();
    Instance::from_parts(supply, demand, arcs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_rises_and_never_over_projects(seed in 0u64..1_000_000) {
        let inst = small(seed);
        let demand = inst.demand().to_vec();
        let mut failure = None;
        stage_one_observed(&inst, DualState::cold(&inst), &StageOneOptions::iterations(30), |r| {
            for j in 0..demand.len() {
                if r.alpha_after[j] < r.alpha_before[j] - 1e-12 {
                    failure.get_or_insert(format!("alpha fell for {j} at {}", r.iteration));
                }
                if r.projected_before[j] > demand[j].demand * (1.0 + 1e-9) {
                    failure.get_or_insert(format!("over-projection for {j} at {}", r.iteration));
                }
            }
        })
        .unwrap();
        prop_assert!(failure.is_none(), "{:?}", failure);
    }

    #[test]
    fn any_alpha_gives_a_feasible_plan(seed in 0u64..1_000_000, two_pass: bool) {
        let inst = small(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
        let alpha = inst.demand().iter().map(|d| rng.gen_range(0.0..=d.penalty)).collect();
        let state = DualState { alpha, beta: vec![0.0; inst.n_supply()], iteration: 0 };
        let sol = stage_two(&inst, &state, two_pass, true).unwrap();
        let alloc = sol.allocation.unwrap();
        prop_assert!(alloc.max_supply_excess(&inst).unwrap() <= 1e-9);
        prop_assert!(alloc.x.iter().all(|&x| x >= 0.0));
        for (u, (d, got)) in alloc.under_delivery.iter().zip(inst.demand().iter().zip(&sol.delivered)) {
            prop_assert!(*u >= 0.0);
            prop_assert!(got + u >= d.demand * (1.0 - 1e-12));
        }
    }

    #[test]
    fn optimum_beats_greedy(seed in 0u64..1_000_000) {
        let inst = small(seed);
        let greedy = metrics::objective(&inst, &hwm(&inst, true).unwrap().allocation.unwrap()).unwrap();
        let oracle = solve_qp_reference(&inst, 1e-8).unwrap().objective;
        let dual = shale(&inst, &converged(), None).unwrap();
        let ours = metrics::objective(&inst, dual.solution.allocation.as_ref().unwrap()).unwrap();
        prop_assert!(oracle <= greedy + 1e-6 * greedy.max(1.0));
        prop_assert!(ours <= greedy + 1e-6);
    }

    #[test]
    fn metrics_ignore_labels(seed in 0u64..1_000_000) {
        let inst = small(seed);
        let other = relabel(&inst, seed);
        let report = |i: &Instance| {
            let run = shale(i, &converged(), None).unwrap();
            MetricsReport::from_solution(i, &run.solution).unwrap()
        };
        let (a, b) = (report(&inst), report(&other));
        prop_assert!((a.asc - b.asc).abs() <= 1e-12 * a.asc.max(1.0));
        let (oa, ob) = (a.objective.unwrap(), b.objective.unwrap());
        prop_assert!((oa - ob).abs() <= 1e-7 * oa.max(1.0), "{oa} vs {ob}");
        prop_assert!((a.under_delivery_rate - b.under_delivery_rate).abs() <= 1e-7);
    }

    #[test]
    fn instance_text_round_trips(seed in 0u64..1_000_000, disk: bool) {
        let inst = small(seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        write_instance(&inst, std::fs::File::create(&path).unwrap()).unwrap();
        let storage = if disk { ArcStorage::temp_disk() } else { ArcStorage::Memory };
        let back = read_instance(&path, InstanceFormat::Text, storage).unwrap();
        prop_assert_eq!(&back, &inst);
    }
}

#[test]
fn disk_and_memory_stores_solve_identically() {
    let mut config = synth::SyntheticConfig::new(60, 20, 1.4, 17);
    let mem = synth::generate(&config).unwrap();
    config.storage = ArcStorage::temp_disk();
    let disk = synth::generate(&config).unwrap();
    assert!(disk.arcs().is_on_disk());
    let opts = ShaleOptions::iterations(8);
    let a = shale(&mem, &opts, None).unwrap().solution;
    let b = shale(&disk, &opts, None).unwrap().solution;
    assert_eq!(a.plan, b.plan);
    assert_eq!(a.allocation, b.allocation);
}
