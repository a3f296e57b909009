//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use taskpower_core::flowgraph::{FlowGraph, FlowNode, TaskNode};
use taskpower_core::pmf::{Pmf, Unit};
use taskpower_core::scheduler::{
    energy_savings_theoretical, enumerate_assignments, min_processors, multiproc_schedule, EnumerationOptions,
    MultiprocOptions, VoltageLevel,
};

const SEED: u64 = 0x5eed_2024;

struct Outcome {
    result: Check,
    elapsed: Duration,
    budget: Option<Duration>,
}

fn timed(budget: Option<Duration>, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = f();
    Outcome { result, elapsed: start.elapsed(), budget }
}

fn close(a: f64, b: f64, tol: f64) -> Check {
    ensure!((a - b).abs() <= tol, "{a} differs from {b} by more than {tol}");
    Ok(())
}

fn slow_levels() -> Vec<VoltageLevel> {
    vec![VoltageLevel::new("high", 1.8, 1.0, 1.0), VoltageLevel::new("low", 0.9, 0.5, 1.0)]
}

fn point(id: &str, time: f64, power: f64) -> FlowNode {
    FlowNode::point_task(id, time, power)
}

fn theoretical_savings() -> Check {
    for (sn, want) in [(7, 17.01), (9, 21.87), (2, 4.86), (18, 43.74)] {
        close(energy_savings_theoretical(sn, 1.8, 0.9).map_err(|e| e.to_string())?, want, 1e-9)?;
    }
    Ok(())
}

fn estimated_savings() -> Check {
    let fixed = TaskNode::new(
        "a",
        Pmf::delta(10.0, Unit::Cycles).unwrap(),
        Pmf::new([(15.0, 2.0), (16.27, 1.0)], Unit::Microwatts).unwrap(),
        10,
        false,
    );
    let scalable = TaskNode::new(
        "b",
        Pmf::delta(2.0, Unit::Cycles).unwrap(),
        Pmf::new([(6.0, 2.0), (7.22, 1.0)], Unit::Microwatts).unwrap(),
        2,
        true,
    );
    let g = FlowGraph::single(FlowNode::And(vec![FlowNode::Task(fixed), FlowNode::Task(scalable)]));
    let r = enumerate_assignments(&g, &slow_levels(), 100.0, 1.0, &EnumerationOptions::default())
        .map_err(|e| e.to_string())?;
    close(r.worst_report.mean_power, 21.83, 1e-9)?;
    close(r.best_report.mean_power, 17.025, 1e-9)?;
    close(r.savings_estimated, 4.805, 1e-6)
}

fn processor_bound() -> Check {
    for (total, deadline) in [(1380.0, 966.0), (750.0, 450.0), (1332.0, 799.0), (2530.0, 1265.0)] {
        let p = min_processors(total, deadline).map_err(|e| e.to_string())?;
        ensure!(p == 2, "min_processors({total}, {deadline}) = {p}");
    }
    let g = FlowGraph::single(FlowNode::Sequence(vec![
        point("s", 200.0, 5.0),
        FlowNode::And(vec![point("w1", 700.0, 5.0), point("w2", 700.0, 5.0), point("w3", 700.0, 5.0)]),
        point("t", 230.0, 5.0),
    ]));
    let s =
        multiproc_schedule(&g, 1265.0, 1.0, &slow_levels(), &MultiprocOptions::default()).map_err(|e| e.to_string())?;
    ensure!(s.lower_bound == 2, "lower bound {}", s.lower_bound);
    ensure!(s.processors_tried == [2, 3], "tried {:?}", s.processors_tried);
    ensure!(s.processor_count == 3, "settled at {} lanes", s.processor_count);
    Ok(())
}

fn composition() -> Check {
    let fixtures = composition_fixtures(50, SEED, 100_000);
    for (i, root) in fixtures.iter().enumerate() {
        check_composition_oracle(root).map_err(|e| format!("fixture {i}: {e}"))?;
    }
    Ok(())
}

fn voltage() -> Check {
    let fixtures = voltage_fixtures(40, SEED, 10);
    let mut feasible = 0;
    for (i, f) in fixtures.iter().enumerate() {
        feasible += check_voltage_oracle(f).map_err(|e| format!("fixture {i}: {e}"))? as usize;
    }
    ensure!(
        feasible > 0 && feasible < fixtures.len(),
        "fixtures do not mix feasible and infeasible cases ({feasible})"
    );
    Ok(())
}

fn monte_carlo_consistency() -> Check {
    for (i, root) in composition_fixtures(20, SEED ^ 1, 100_000).iter().enumerate() {
        check_monte_carlo(root, 100_000, SEED).map_err(|e| format!("fixture {i}: {e}"))?;
    }
    Ok(())
}

fn property(name: &str, cases: u32, check: fn(u64) -> Check) -> Check {
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, rng);
    runner
        .run(&proptest::num::u64::ANY, |seed| check(seed).map_err(proptest::test_runner::TestCaseError::fail))
        .map_err(|e| format!("{name}: {e}"))
}

fn property_suites() -> Check {
    property("pmf algebra", 256, check_pmf_laws)?;
    property("flow-file round trip", 256, check_round_trip)?;
    property("extractor op count", 256, check_extractor_conservation)?;
    property("schedule invariants", 64, check_schedule_invariants)?;
    property("local optimality", 64, check_local_optimality)?;
    property("determinism", 12, check_determinism)
}

fn main() -> ExitCode {
    let secs = |s| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Outcome)> = vec![
        ("1 theoretical savings formula", timed(None, theoretical_savings)),
        ("2 estimated savings", timed(None, estimated_savings)),
        ("3 processor lower bound and retry", timed(None, processor_bound)),
        ("4 composition matches exact enumeration", timed(secs(10), composition)),
        ("5 voltage search matches brute force", timed(secs(5), voltage)),
        ("6 monte carlo consistency", timed(secs(10), monte_carlo_consistency)),
        ("7 property suites", timed(None, property_suites)),
    ];
    let mut failed = false;
    for (name, o) in criteria {
        let over = o.budget.filter(|b| o.elapsed > *b);
        let verdict = match (&o.result, over) {
            (Ok(()), None) => "PASS".to_string(),
            (Ok(()), Some(b)) => format!("FAIL (took longer than {b:?})"),
            (Err(e), _) => format!("FAIL ({e})"),
        };
        failed |= verdict != "PASS";
        println!("criterion {name}: {verdict} [{:.2?}]", o.elapsed);
    }
    println!(
        "criterion 8 per-benchmark power tables: NOT REPRODUCIBLE (depend on external simulator outputs; covered by criteria 4-7)"
    );
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
