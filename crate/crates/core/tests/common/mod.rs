//! Seeded fixture generators and property checks shared by the property
//! suite and the acceptance runner.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskpower_core::analysis::{evaluate, AnalysisOptions};
use taskpower_core::extractor::{extract_flow, parse_fu_library, parse_ir};
use taskpower_core::flowgraph::{parse_flow_file, serialize_flow_file, FlowGraph, FlowNode, TaskNode};
use taskpower_core::oracle::{
    brute_force_voltage, enumerate_exact, max_point_deviation, monte_carlo, outcome_count, within_standard_errors,
};
use taskpower_core::pmf::{Pmf, Unit, DEFAULT_SUPPORT_CAP};
use taskpower_core::scheduler::{
    enumerate_assignments, multiproc_schedule, scale_task, task_dependencies, EnumerationOptions, MultiprocOptions,
    ScheduleError, VoltageLevel, CONFIDENCE_SLACK,
};

pub type Check = Result<(), String>;

#[allow(unused_macros)]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
#[allow(unused_imports)]
pub(crate) use ensure;

pub fn two_levels() -> Vec<VoltageLevel> {
    vec![VoltageLevel::new("high", 1.8, 1.0, 1.0), VoltageLevel::new("low", 0.9, 0.5, 1.0)]
}

/// Which constructs a generated tree may use.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub seq: bool,
    pub and: bool,
    pub branch: bool,
    pub race: bool,
    pub max_children: usize,
    pub max_points: usize,
    pub max_power_points: usize,
    pub scalable_prob: f64,
}

impl Shape {
    pub fn all() -> Self {
        Shape {
            seq: true,
            and: true,
            branch: true,
            race: true,
            max_children: 3,
            max_points: 4,
            max_power_points: 4,
            scalable_prob: 0.8,
        }
    }
}

pub struct Gen {
    pub rng: ChaCha8Rng,
    next_id: usize,
}

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), next_id: 0 }
    }

    /// Integer support drawn from `lo..=hi` with random positive weights.
    pub fn pmf(&mut self, max_points: usize, lo: u32, hi: u32, unit: Unit) -> Pmf {
        let n = self.rng.random_range(1..=max_points);
        let points: Vec<(f64, f64)> =
            (0..n).map(|_| (self.rng.random_range(lo..=hi) as f64, self.rng.random_range(1..=9) as f64)).collect();
        Pmf::new(points, unit).unwrap()
    }

    pub fn task(&mut self, shape: &Shape) -> FlowNode {
        let id = format!("t{}", self.next_id);
        self.next_id += 1;
        let time = self.pmf(shape.max_points, 1, 20, Unit::Cycles);
        let power = self.pmf(shape.max_power_points, 1, 50, Unit::Microwatts);
        let cycles = time.expectation().round() as u64;
        let scalable = self.rng.random_bool(shape.scalable_prob);
        FlowNode::Task(TaskNode::new(id, time, power, cycles, scalable))
    }

    pub fn tree(&mut self, depth: usize, shape: &Shape) -> FlowNode {
        let mut kinds = Vec::new();
        for (on, k) in [(shape.seq, 0), (shape.and, 1), (shape.branch, 2), (shape.race, 3)] {
            if on {
                kinds.push(k);
            }
        }
        if depth == 0 || kinds.is_empty() || self.rng.random_bool(0.35) {
            return self.task(shape);
        }
        let n = self.rng.random_range(2..=shape.max_children.max(2));
        match *kinds.choose(&mut self.rng).unwrap() {
            0 => FlowNode::Sequence((0..n).map(|_| self.tree(depth - 1, shape)).collect()),
            1 => FlowNode::And((0..n).map(|_| self.tree(depth - 1, shape)).collect()),
            2 => {
                let weights: Vec<f64> = (0..n).map(|_| self.rng.random_range(1..=9) as f64).collect();
                let total: f64 = weights.iter().sum();
                FlowNode::Branch(weights.iter().map(|w| (w / total, self.tree(depth - 1, shape))).collect())
            }
            _ => {
                // Race arms hold no choices of their own, so an arm's power
                // stays independent of its finishing time.
                let arm_shape = Shape { branch: false, race: false, ..*shape };
                FlowNode::Race((0..n).map(|_| self.tree(depth - 1, &arm_shape)).collect())
            }
        }
    }
}

pub fn scalable_count(root: &FlowNode) -> usize {
    root.tasks().iter().filter(|t| t.scalable).count()
}

/// Random trees with at most three children per construct, at most four
/// support points per distribution and at most `max_outcomes` joint
/// outcomes, whose exact supports fit under the default cap.
pub fn composition_fixtures(count: usize, seed: u64, max_outcomes: u128) -> Vec<FlowNode> {
    let mut gen = Gen::new(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let root = gen.tree(3, &Shape::all());
        if root.tasks().len() < 2 || outcome_count(&root) > max_outcomes {
            continue;
        }
        let (t, p) = enumerate_exact(&root).unwrap();
        if t.len() > DEFAULT_SUPPORT_CAP || p.len() > DEFAULT_SUPPORT_CAP {
            continue;
        }
        out.push(root);
    }
    out
}

pub fn check_composition_oracle(root: &FlowNode) -> Check {
    let (time, power) = enumerate_exact(root).map_err(|e| e.to_string())?;
    let c = evaluate(root, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    let dt = max_point_deviation(&time, &c.time);
    let dp = max_point_deviation(&power, &c.power);
    ensure!(dt <= 1e-9, "time deviates by {dt}: exact {time} analysis {}", c.time);
    ensure!(dp <= 1e-9, "power deviates by {dp}: exact {power} analysis {}", c.power);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct VoltageFixture {
    pub graph: FlowGraph,
    pub deadline: f64,
    pub confidence: f64,
}

/// Graphs with 1 to `max_scalable` scalable tasks and deadlines ranging
/// from infeasible to loose.
pub fn voltage_fixtures(count: usize, seed: u64, max_scalable: usize) -> Vec<VoltageFixture> {
    let mut gen = Gen::new(seed);
    let shape = Shape { max_points: 3, max_power_points: 2, ..Shape::all() };
    let mut out = Vec::new();
    while out.len() < count {
        let root = gen.tree(3, &shape);
        let n = scalable_count(&root);
        if n == 0 || n > max_scalable {
            continue;
        }
        let reference = evaluate(&root, &AnalysisOptions::default()).unwrap().time;
        let deadline = (reference.max_value() * gen.rng.random_range(0.85..2.2)).round().max(1.0);
        let confidence = *[1.0, 0.95, 0.8, 0.5].choose(&mut gen.rng).unwrap();
        out.push(VoltageFixture { graph: FlowGraph::single(root), deadline, confidence });
    }
    out
}

/// `Ok(feasible)` when the scheduler and the brute-force search agree.
pub fn check_voltage_oracle(f: &VoltageFixture) -> Result<bool, String> {
    let levels = two_levels();
    let fast = enumerate_assignments(&f.graph, &levels, f.deadline, f.confidence, &EnumerationOptions::default());
    let slow = brute_force_voltage(&f.graph, &levels, f.deadline, f.confidence);
    match (fast, slow) {
        (Err(a), Err(b)) => {
            ensure!(a == b, "errors differ: {a} vs {b}");
            ensure!(a == ScheduleError::Infeasible, "unexpected error {a}");
            Ok(false)
        }
        (Ok(a), Ok(b)) => {
            ensure!(a.best == b.best, "best differs: {:?} vs {:?}", a.best, b.best);
            ensure!(a.worst == b.worst, "worst differs: {:?} vs {:?}", a.worst, b.worst);
            ensure!(a.slowdown_cycles == b.slowdown_cycles, "SN differs");
            ensure!(
                a.feasible_count == b.feasible_count,
                "feasible count {} vs {}",
                a.feasible_count,
                b.feasible_count
            );
            ensure!(a.evaluated == b.evaluated, "evaluated count differs");
            ensure!((a.savings_theoretical - b.savings_theoretical).abs() <= 1e-9, "theoretical savings differ");
            ensure!((a.savings_estimated - b.savings_estimated).abs() <= 1e-9, "estimated savings differ");
            ensure!(a.best_report.mean_power <= a.worst_report.mean_power + 1e-12, "best draws more than worst");
            Ok(true)
        }
        (a, b) => Err(format!("one side failed: {a:?} / {b:?}")),
    }
}

pub fn check_monte_carlo(root: &FlowNode, trials: u64, seed: u64) -> Check {
    let g = FlowGraph::single(root.clone());
    let sim = monte_carlo(&g, trials, seed).map_err(|e| e.to_string())?;
    let c = evaluate(root, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
    ensure!(
        within_standard_errors(&c.time, &sim.empirical_time, trials),
        "time mean {} vs simulated {}",
        c.time.expectation(),
        sim.empirical_time.expectation()
    );
    ensure!(
        within_standard_errors(&c.power, &sim.empirical_power, trials),
        "power mean {} vs simulated {}",
        c.power.expectation(),
        sim.empirical_power.expectation()
    );
    Ok(())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn mass(p: &Pmf) -> f64 {
    p.points().iter().map(|&(_, q)| q).sum()
}

pub fn check_pmf_laws(seed: u64) -> Check {
    let mut gen = Gen::new(seed);
    let x = gen.pmf(6, 0, 100, Unit::Cycles);
    let y = gen.pmf(6, 0, 100, Unit::Cycles);
    let w = gen.rng.random_range(0.05..0.95);
    let c = gen.rng.random_range(0.1..10.0);
    let k = gen.rng.random_range(2..6);
    let sum = x.convolve_sum(&y).unwrap();
    let max = x.max_of(&y).unwrap();
    let min = x.min_of(&y).unwrap();
    let mix = Pmf::mixture(&[(w, &x), (1.0 - w, &y)]).unwrap();
    let scaled = x.scale(c).unwrap();
    let rebinned = sum.rebin(k).unwrap();
    for (name, p) in
        [("sum", &sum), ("max", &max), ("min", &min), ("mixture", &mix), ("scale", &scaled), ("rebin", &rebinned)]
    {
        ensure!((mass(p) - 1.0).abs() <= 1e-9, "{name} has mass {}", mass(p));
        ensure!(p.points().windows(2).all(|w| w[0].0 < w[1].0), "{name} support not strictly increasing");
    }
    let (ex, ey) = (x.expectation(), y.expectation());
    ensure!(close(sum.expectation(), ex + ey), "E[X+Y] {} != {}", sum.expectation(), ex + ey);
    ensure!(close(mix.expectation(), w * ex + (1.0 - w) * ey), "mixture expectation");
    ensure!(close(scaled.expectation(), c * ex), "scale expectation");
    ensure!(close(rebinned.expectation(), sum.expectation()), "rebin expectation");
    ensure!(rebinned.len() <= k, "rebin kept {} points", rebinned.len());
    ensure!(max.expectation() >= ex.max(ey) - 1e-9, "E[max] below max of means");
    ensure!(min.expectation() <= ex.min(ey) + 1e-9, "E[min] above min of means");
    Ok(())
}

/// Graph with helper flows, labels, deadline and confidence.
pub fn random_flow_file(seed: u64) -> FlowGraph {
    let mut gen = Gen::new(seed);
    let shape = Shape { max_points: 3, ..Shape::all() };
    let helpers = gen.rng.random_range(0..3);
    let mut flows = BTreeMap::new();
    for h in 0..helpers {
        flows.insert(format!("helper{h}"), gen.tree(2, &shape));
    }
    let mut root = gen.tree(3, &shape);
    if helpers > 0 {
        let refs = (0..gen.rng.random_range(1..=2)).map(|i| FlowNode::Subflow(format!("helper{}", i % helpers)));
        root = FlowNode::Sequence(std::iter::once(root).chain(refs).collect());
    }
    let mut relabel = |t: &TaskNode| -> Result<TaskNode, ()> {
        let mut t = t.clone();
        if gen.rng.random_bool(0.3) {
            t.label = format!("unit \"{}\" \\ {}", t.id, gen.rng.random_range(0..100));
        }
        Ok(t)
    };
    let root = root.map_tasks(&mut relabel).unwrap();
    flows.insert("main".into(), root);
    let mut g = FlowGraph { flows, entry: "main".into(), deadline: None, confidence: None };
    if gen.rng.random_bool(0.5) {
        g.deadline = Some(gen.rng.random_range(1.0..1000.0));
        g.confidence = Some(gen.rng.random_range(0.01..=1.0));
    }
    g
}

pub fn check_round_trip(seed: u64) -> Check {
    let g = random_flow_file(seed);
    let text = serialize_flow_file(&g).map_err(|e| e.to_string())?;
    let parsed = parse_flow_file(&text).map_err(|e| format!("{e}\n{text}"))?;
    ensure!(parsed == g, "round trip changed the graph:\n{text}");
    let again = serialize_flow_file(&parsed).map_err(|e| e.to_string())?;
    ensure!(again == text, "serialization is not canonical");
    Ok(())
}

pub const FU_LIBRARY: &str = "fu ialu delay=1 energy={38:0.2, 41:0.6, 45:0.2}\nfu imul delay=3 energy={120:0.5, 140:0.5}\nfu ld delay=2 energy={60:0.5, 66:0.5}\n";

/// Acyclic block graph in IR text form.
pub fn random_ir(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = rng.random_range(1..=6);
    let mut text = String::new();
    for b in 0..blocks {
        text.push_str(&format!("block B{b}\n"));
        for _ in 0..rng.random_range(1..=5) {
            let fu = ["ialu", "imul", "ld"].choose(&mut rng).unwrap();
            text.push_str(&format!("  op {fu} @{}\n", rng.random_range(0..4)));
        }
        if b + 1 < blocks {
            let targets: Vec<usize> = (b + 1..blocks).collect();
            let n = rng.random_range(1..=targets.len().min(2));
            let picked: Vec<usize> = targets.choose_multiple(&mut rng, n).copied().collect();
            let mut counts: Vec<u64> = picked.iter().map(|_| rng.random_range(0..50)).collect();
            if counts.iter().sum::<u64>() == 0 {
                counts[0] = 1;
            }
            let succ: Vec<String> = picked.iter().zip(&counts).map(|(t, c)| format!("B{t}:{c}")).collect();
            text.push_str(&format!("  succ {}\n", succ.join(" ")));
        }
    }
    text
}

pub fn check_extractor_conservation(seed: u64) -> Check {
    let ir = parse_ir(&random_ir(seed)).map_err(|e| e.to_string())?;
    let lib = parse_fu_library(FU_LIBRARY).unwrap();
    let g = extract_flow(&ir, &lib).map_err(|e| e.to_string())?;
    ensure!(g.validate().is_empty(), "extracted graph is invalid");
    let mut total = 0;
    for block in &ir.blocks {
        let tasks = g.flows[&block.id].tasks();
        ensure!(
            tasks.len() == block.ops.len(),
            "block {} has {} ops but {} tasks",
            block.id,
            block.ops.len(),
            tasks.len()
        );
        for (i, op) in block.ops.iter().enumerate() {
            let id = format!("{}_op{i}", block.id);
            let t = tasks.iter().find(|t| t.id == id).ok_or(format!("no task {id}"))?;
            ensure!(t.label == op.fu_type, "task {} labelled {} for op {}", t.id, t.label, op.fu_type);
            ensure!(t.cycles == lib.entries[&op.fu_type].delay, "cycles differ from unit delay");
        }
        total += tasks.len();
    }
    ensure!(total == ir.op_count(), "op count not conserved");
    ensure!(g.flatten().is_ok(), "extracted graph does not flatten");
    Ok(())
}

pub fn check_schedule_invariants(seed: u64) -> Check {
    let mut gen = Gen::new(seed);
    let shape = Shape { race: false, max_points: 3, max_power_points: 2, ..Shape::all() };
    let mut root = gen.tree(3, &shape);
    while scalable_count(&root) > 10 {
        root = gen.tree(3, &shape);
    }
    let g = FlowGraph::single(root.clone());
    let total: f64 = root.tasks().iter().map(|t| t.time.expectation()).sum();
    let deadline = (total * gen.rng.random_range(0.3..1.3)).max(1.0);
    let confidence = *[1.0, 0.9].choose(&mut gen.rng).unwrap();
    let opts = MultiprocOptions { max_processors: 8, ..Default::default() };
    let s = match multiproc_schedule(&g, deadline, confidence, &two_levels(), &opts) {
        Err(ScheduleError::NoProcessorCount { .. }) => return Ok(()),
        Err(e) => return Err(e.to_string()),
        Ok(s) => s,
    };
    let dag = task_dependencies(&root);
    let mut slots = HashMap::new();
    for lane in &s.lanes {
        ensure!(!lane.is_empty(), "empty lane");
        for w in lane.windows(2) {
            ensure!(w[0].finish <= w[1].start + 1e-9, "overlap between {} and {}", w[0].task, w[1].task);
        }
        for slot in lane {
            ensure!(slot.start <= slot.finish, "negative interval");
            ensure!(slots.insert(slot.task.clone(), slot.clone()).is_none(), "task {} scheduled twice", slot.task);
        }
    }
    ensure!(slots.len() == dag.tasks.len(), "scheduled {} of {} tasks", slots.len(), dag.tasks.len());
    for &(u, v) in &dag.edges {
        let (a, b) = (&slots[&dag.tasks[u].id], &slots[&dag.tasks[v].id]);
        ensure!(a.finish <= b.start + 1e-9, "{} starts before {} finishes", b.task, a.task);
    }
    ensure!(s.processor_count == s.lanes.len(), "processor count mismatch");
    ensure!(s.confidence + CONFIDENCE_SLACK >= confidence, "confidence {} below {confidence}", s.confidence);
    ensure!(s.confidence == s.makespan.cdf_at(deadline), "confidence is not the makespan cdf");
    ensure!(s.processors_tried.first() == Some(&s.lower_bound), "search did not start at the lower bound");
    Ok(())
}

/// Trees in which slowing any single task lowers mean power: sequences of
/// tasks (nested freely) under an optional AND or branch.
pub fn monotone_fixture(gen: &mut Gen) -> FlowNode {
    let shape = Shape {
        and: false,
        branch: false,
        race: false,
        max_points: 2,
        max_power_points: 2,
        scalable_prob: 0.9,
        ..Shape::all()
    };
    let top = gen.rng.random_range(0..3);
    let n = gen.rng.random_range(2..=3);
    match top {
        0 => gen.tree(3, &shape),
        1 => FlowNode::And((0..n).map(|_| gen.tree(2, &shape)).collect()),
        _ => FlowNode::Branch((0..n).map(|_| (1.0 / n as f64, gen.tree(2, &shape))).collect()),
    }
}

pub fn check_local_optimality(seed: u64) -> Check {
    let mut gen = Gen::new(seed);
    let root = monotone_fixture(&mut gen);
    if scalable_count(&root) == 0 || scalable_count(&root) > 8 {
        return Ok(());
    }
    let reference = evaluate(&root, &AnalysisOptions::default()).unwrap().time;
    let deadline = (reference.max_value() * gen.rng.random_range(1.0..2.0)).round();
    let confidence = *[1.0, 0.9].choose(&mut gen.rng).unwrap();
    let levels = two_levels();
    let g = FlowGraph::single(root.clone());
    let r = match enumerate_assignments(&g, &levels, deadline, confidence, &EnumerationOptions::default()) {
        Err(ScheduleError::Infeasible) => return Ok(()),
        other => other.map_err(|e| e.to_string())?,
    };
    for (task, level) in &r.best {
        if level != "high" {
            continue;
        }
        let mut flipped = r.best.clone();
        flipped.insert(task.clone(), "low".into());
        let tree = root
            .map_tasks(&mut |t| match flipped.get(&t.id) {
                Some(name) => scale_task(t, levels.iter().find(|l| &l.name == name).unwrap()),
                None => Ok(t.clone()),
            })
            .map_err(|e| e.to_string())?;
        let c = evaluate(&tree, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
        ensure!(
            c.time.cdf_at(deadline) + CONFIDENCE_SLACK < confidence,
            "flipping {task} to low stays feasible (mean power {} vs best {})",
            c.power.expectation(),
            r.best_report.mean_power
        );
    }
    Ok(())
}

pub fn check_determinism(seed: u64) -> Check {
    let mut gen = Gen::new(seed);
    let shape = Shape { max_points: 3, max_power_points: 2, ..Shape::all() };
    let mut root = gen.tree(3, &shape);
    while scalable_count(&root) > 8 || scalable_count(&root) == 0 {
        root = gen.tree(3, &shape);
    }
    let g = FlowGraph::single(root.clone());
    let reference = evaluate(&root, &AnalysisOptions::default()).unwrap().time;
    let deadline = reference.max_value() * 1.5;
    let pool = |threads: usize| rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let levels = two_levels();
    let run_all = || {
        let a = enumerate_assignments(&g, &levels, deadline, 1.0, &EnumerationOptions::default()).map(|r| r.to_text());
        let m = multiproc_schedule(&g, deadline, 1.0, &levels, &MultiprocOptions::default()).map(|s| s.to_text());
        let s = monte_carlo(&g, 2 * taskpower_core::oracle::TRIAL_CHUNK + 17, seed)
            .map(|s| (s.empirical_time, s.empirical_power));
        (a, m, s)
    };
    let single = pool(1).install(run_all);
    let multi = pool(4).install(run_all);
    let again = run_all();
    ensure!(single == multi, "results depend on the worker count");
    ensure!(single == again, "results differ between repeated runs");
    Ok(())
}

/// Ids of every task in `root`, for checks that need set equality.
pub fn task_ids(root: &FlowNode) -> HashSet<String> {
    root.tasks().into_iter().map(|t| t.id.clone()).collect()
}
