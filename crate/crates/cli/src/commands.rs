use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde_json::json;
use shale_core::alloc::{read_plan, write_plan, StopReason, StopRule};
use shale_core::metrics::MetricsReport;
use shale_core::model::synth::{self, PenaltyPreset, SmallConfig, SyntheticConfig};
use shale_core::model::{read_instance, write_instance, ArcStorage, InstanceFormat};
use shale_core::oracle::{kkt_check, solve_qp_reference};
use shale_core::serving::{
    expected_allocation, read_log, replay, synthesize_log, thin_log, write_log, write_stats,
    Forecast, ReplayOptions, ServingTable,
};
use shale_core::{hwm, shale, Instance, ShaleOptions};

use crate::args::{Algo, EvalArgs, ForecastKind, GenArgs, Penalty, ServeArgs, SolveArgs, VerifyArgs};
use crate::mem;

const EXIT_VERIFY: u8 = 3;

pub enum Failure {
    /// Bad flags or missing inputs, caught before any work.
    Usage(anyhow::Error),
    /// Inputs that exist but cannot be read, parsed or solved.
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<shale_core::Error> for Failure {
    fn from(e: shale_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<ExitCode, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(message.into()))
}

fn require(ok: bool, message: &str) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(usage(message))
    }
}

fn readable(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{}: no such file", path.display())))
    }
}

fn load_instance(path: &Path, storage: ArcStorage) -> Result<Instance, Failure> {
    read_instance(path, InstanceFormat::Text, storage)
        .with_context(|| format!("reading instance {}", path.display()))
        .map_err(Failure::Data)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).context("writing report")?;
    writeln!(w).and_then(|_| w.flush()).context("writing report")?;
    Ok(())
}

fn stop_reason(reason: StopReason) -> &'static str {
    match reason {
        StopReason::IterationLimit => "iteration_limit",
        StopReason::TimeBudget => "time_budget",
        StopReason::Converged => "converged",
        StopReason::EpsilonApproximate => "epsilon_approximate",
    }
}

pub fn gen(args: GenArgs) -> Outcome {
    require(args.asc > 0.0, "--asc must be positive")?;
    require(args.unit > 0.0, "--unit must be positive")?;
    require(args.horizon >= 0.0, "--horizon must be non-negative")?;
    require(args.keep > 0.0 && args.keep <= 1.0, "--keep must lie in (0, 1]")?;
    require(args.small || args.contracts > 0 && args.samples > 0, "--contracts and --samples must be positive")?;

    let instance = if args.small {
        synth::random_small(args.seed, &SmallConfig::default())?
    } else {
        let mut config = SyntheticConfig::new(args.contracts, args.samples, args.asc, args.seed);
        config.n_supply = args.supply_nodes;
        config.penalty = match args.penalty {
            Penalty::Planning => PenaltyPreset::Planning,
            Penalty::Serving => PenaltyPreset::Serving,
        };
        synth::generate(&config)?
    };
    write_instance(&instance, create(&args.out)?)?;
    println!("supply_nodes={}", instance.n_supply());
    println!("demand_nodes={}", instance.n_demand());
    println!("arcs={}", instance.n_arcs());
    println!("asc={}", shale_core::metrics::asc(&instance));

    if let Some(path) = &args.log {
        let mut events = synthesize_log(&instance, 0.0, args.horizon, args.unit, args.seed)?;
        if args.keep < 1.0 {
            events = thin_log(&events, args.keep, args.seed ^ 0x5eed);
        }
        write_log(&events, create(path)?)?;
        println!("events={}", events.len());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn solve(args: SolveArgs) -> Outcome {
    readable(&args.instance)?;
    if let Some(p) = &args.warm_start {
        readable(p)?;
        require(args.algo == Algo::Shale, "--warm-start applies to --algo shale")?;
    }
    require(args.threads > 0, "--threads must be at least 1")?;
    require(args.epsilon > 0.0, "--epsilon must be positive")?;
    if let Some(c) = args.converge {
        require(c > 0.0, "--converge must be positive")?;
    }

    let storage = if args.disk { ArcStorage::temp_disk() } else { ArcStorage::Memory };
    let instance = load_instance(&args.instance, storage)?;
    let warm = match &args.warm_start {
        Some(p) => Some(read_plan(p).with_context(|| format!("reading plan {}", p.display()))?),
        None => None,
    };

    let materialize = !args.plan_only;
    let started = Instant::now();
    let (result, peak) = mem::high_water(|| match args.algo {
        Algo::Hwm => hwm(&instance, materialize).map(|s| (s, None)),
        Algo::Shale => {
            let mut options = ShaleOptions::iterations(args.iters)
                .two_pass(args.two_pass)
                .materialize(materialize)
                .track_epsilon(args.epsilon)
                .threads(args.threads);
            options.stop = StopRule {
                alpha_change: args.converge,
                epsilon: None,
            };
            options.tolerances = args.tolerance.get();
            shale(&instance, &options, warm.as_ref()).map(|run| {
                let summary = (run.iterations_run, run.reason, run.first_epsilon_iteration);
                (run.solution, Some(summary))
            })
        }
    });
    let (solution, summary) = result?;
    let elapsed = started.elapsed();

    if let Some(path) = &args.plan_out {
        let mut w = create(path)?;
        write_plan(&solution.plan, &mut w)?;
        w.flush().context("writing plan")?;
    }
    let metrics = MetricsReport::from_solution(&instance, &solution)?;

    println!("algo={}", solution.plan.variant.as_str());
    let mut report = json!({
        "algo": solution.plan.variant.as_str(),
        "contracts": instance.n_demand(),
        "supply_nodes": instance.n_supply(),
        "arcs": instance.n_arcs(),
        "seconds": elapsed.as_secs_f64(),
        "metrics": serde_json::to_value(&metrics).context("serializing metrics")?,
    });
    if let Some((iterations, reason, first_eps)) = summary {
        println!("iterations={iterations}");
        println!("stop_reason={}", stop_reason(reason));
        match first_eps {
            Some(t) => println!("epsilon_iteration={t}"),
            None => println!("epsilon_iteration=none"),
        }
        report["iterations"] = json!(iterations);
        report["stop_reason"] = json!(stop_reason(reason));
        report["epsilon"] = json!(args.epsilon);
        report["epsilon_iteration"] = json!(first_eps);
    }
    print!("{}", metrics.to_text());
    println!("seconds={:.6}", elapsed.as_secs_f64());
    if args.mem_report {
        let nodes = instance.n_supply() + instance.n_demand();
        println!("nodes={nodes}");
        println!("arcs={}", instance.n_arcs());
        println!("arc_storage={}", if instance.arcs().is_on_disk() { "disk" } else { "memory" });
        println!("peak_heap_bytes={peak}");
        println!("peak_heap_bytes_per_node={:.1}", peak as f64 / nodes as f64);
        report["peak_heap_bytes"] = json!(peak);
    }
    if let Some(path) = &args.report_json {
        write_json(path, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn serve(args: ServeArgs) -> Outcome {
    for p in [&args.instance, &args.plan, &args.log] {
        readable(p)?;
    }
    require(args.reopt_period > 0.0, "--reopt-period must be positive")?;
    require(args.threads > 0, "--threads must be at least 1")?;
    if let Some(c) = args.checkpoint_period {
        require(c > 0.0, "--checkpoint-period must be positive")?;
    }

    let instance = load_instance(&args.instance, ArcStorage::Memory)?;
    let plan = read_plan(&args.plan).with_context(|| format!("reading plan {}", args.plan.display()))?;
    let log = read_log(&args.log).with_context(|| format!("reading log {}", args.log.display()))?;

    let span = log.first().zip(log.last()).map(|(a, b)| (a.timestamp, b.timestamp));
    let forecast = match (args.forecast, span) {
        (ForecastKind::Stationary, Some((start, end))) if end > start => {
            Forecast::stationary(&instance, start, end)?
        }
        _ => Forecast::from_events(&instance, &log),
    };
    let options = ReplayOptions {
        reopt_period: args.reopt_period,
        iterations: args.reopt_iters,
        seed: args.seed,
        two_pass: args.two_pass,
        checkpoint_period: args.checkpoint_period,
        pacing_band: args.pacing_band,
        pacing_quota: args.pacing_quota,
        threads: args.threads,
    };
    let outcome = replay(&log, &instance, &forecast, &plan, &options)?;

    if let Some(path) = &args.stats_out {
        let mut w = create(path)?;
        write_stats(&outcome.stats, &instance, &mut w)?;
        w.flush().context("writing stats")?;
    }
    let c = &outcome.stats.counters;
    println!("events={}", c.events);
    println!("unallocated_events={}", c.none);
    println!("unknown_ids={}", c.skipped_ids);
    println!("reoptimizations={}", outcome.stats.reoptimizations);
    print!("{}", outcome.metrics.to_text());
    println!("pacing_evaluated={}", outcome.pacing.evaluated);
    println!("pacing_excluded={}", outcome.pacing.excluded);
    if let Some(path) = &args.report_json {
        write_json(
            path,
            &json!({
                "events": c.events,
                "unallocated_events": c.none,
                "unknown_ids": c.skipped_ids,
                "reoptimizations": outcome.stats.reoptimizations,
                "pacing_evaluated": outcome.pacing.evaluated,
                "pacing_excluded": outcome.pacing.excluded,
                "metrics": serde_json::to_value(&outcome.metrics).context("serializing metrics")?,
            }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(args: EvalArgs) -> Outcome {
    readable(&args.instance)?;
    readable(&args.plan)?;
    let instance = load_instance(&args.instance, ArcStorage::Memory)?;
    let plan = read_plan(&args.plan).with_context(|| format!("reading plan {}", args.plan.display()))?;
    let table = ServingTable::new(&plan, &instance)?;
    let allocation = expected_allocation(&table, &instance)?;
    let metrics = MetricsReport::from_allocation(&instance, &allocation)?;
    print!("{}", metrics.to_text());
    if let Some(path) = &args.report_json {
        let mut w = create(path)?;
        writeln!(w, "{}", metrics.to_json()).and_then(|_| w.flush()).context("writing report")?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(args: VerifyArgs) -> Outcome {
    require(args.tolerance > 0.0, "--tolerance must be positive")?;
    require(args.oracle_tol > 0.0, "--oracle-tol must be positive")?;
    require(args.converge > 0.0, "--converge must be positive")?;
    let mut cases: Vec<(String, Instance)> = Vec::new();
    match &args.instance {
        Some(path) => {
            readable(path)?;
            cases.push((path.display().to_string(), load_instance(path, ArcStorage::Memory)?));
        }
        None => {
            require(args.random_seeds > 0, "--random-seeds must be at least 1")?;
            for seed in args.first_seed..args.first_seed + args.random_seeds {
                cases.push((format!("seed{seed}"), synth::random_small(seed, &SmallConfig::default())?));
            }
        }
    }

    let options = match args.iters {
        Some(k) => ShaleOptions::iterations(k),
        None => ShaleOptions::iterations(usize::MAX).stop(StopRule {
            alpha_change: Some(args.converge),
            epsilon: None,
        }),
    };
    let mut failed = 0usize;
    for (name, instance) in &cases {
        let reference = solve_qp_reference(instance, args.oracle_tol)
            .with_context(|| format!("{name}: reference solve"))?;
        let run = shale(instance, &options, None)?;
        let ours = run.solution.allocation.as_ref().expect("materialized solve");
        let gap = ours
            .x
            .iter()
            .zip(&reference.allocation.x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let kkt = kkt_check(instance, ours, &run.solution.duals)?;
        let pass = gap <= args.tolerance && kkt.max() <= args.tolerance;
        if !pass {
            failed += 1;
        }
        println!(
            "{name} iterations={} arc_gap={gap:.3e} kkt_stationarity_x={:.3e} kkt_stationarity_u={:.3e} kkt_comp_slack={:.3e} kkt_feasibility={:.3e} kkt_dual_feasibility={:.3e} oracle_residual={:.3e} {}",
            run.iterations_run,
            kkt.stationarity_x,
            kkt.stationarity_u,
            kkt.comp_slack,
            kkt.feasibility,
            kkt.dual_feasibility,
            reference.residual.max(),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("verified={} failed={failed} tolerance={:e}", cases.len() - failed, args.tolerance);
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY)
    })
}
