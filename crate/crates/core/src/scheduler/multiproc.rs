//! Time-constrained list scheduling on identical processors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{
    enumerate_assignments, latest_finish_times, min_processors, AssignmentResult, EnumerationOptions, ScheduleError,
    VoltageLevel,
};
use crate::flowgraph::{FlowGraph, FlowNode, TaskNode};
use crate::pmf::{Pmf, Transmittance, Unit};

/// Precedence structure of a flattened tree. Every task of a sequence child
/// depends on the exit tasks of the previous child.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDag {
    /// Tasks in pre-order.
    pub tasks: Vec<TaskNode>,
    /// Probability that each task runs at all (product of the branch
    /// probabilities above it).
    pub path_prob: Vec<f64>,
    /// Edges `(u, v)` as indices into `tasks`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl TaskDag {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.tasks.len()];
        for &(u, v) in &self.edges {
            preds[v].push(u);
        }
        preds
    }

    /// Expected duration once the path probability is accounted for.
    pub fn nominal_duration(&self, i: usize) -> f64 {
        self.path_prob[i] * self.tasks[i].time.expectation()
    }
}

pub fn task_dependencies(root: &FlowNode) -> TaskDag {
    let mut dag = TaskDag { tasks: Vec::new(), path_prob: Vec::new(), edges: Vec::new() };
    let mut edges = BTreeSet::new();
    collect(root, 1.0, &mut dag, &mut edges);
    dag.edges = edges.into_iter().collect();
    dag
}

/// Returns (entry tasks, exit tasks) of the subtree.
fn collect(
    node: &FlowNode,
    prob: f64,
    dag: &mut TaskDag,
    edges: &mut BTreeSet<(usize, usize)>,
) -> (Vec<usize>, Vec<usize>) {
    match node {
        FlowNode::Task(t) => {
            let i = dag.tasks.len();
            dag.tasks.push(t.clone());
            dag.path_prob.push(prob);
            (vec![i], vec![i])
        }
        FlowNode::Sequence(cs) => {
            let mut entry = Vec::new();
            let mut exit: Vec<usize> = Vec::new();
            for (k, c) in cs.iter().enumerate() {
                let (sources, sinks) = collect(c, prob, dag, edges);
                if k == 0 {
                    entry = sources;
                } else {
                    for &u in &exit {
                        for &v in &sources {
                            edges.insert((u, v));
                        }
                    }
                }
                exit = sinks;
            }
            (entry, exit)
        }
        FlowNode::And(cs) | FlowNode::Race(cs) => union(cs.iter().map(|c| collect(c, prob, dag, edges))),
        FlowNode::Branch(arms) => union(arms.iter().map(|(p, c)| collect(c, prob * p, dag, edges)).collect::<Vec<_>>()),
        FlowNode::Subflow(_) => (Vec::new(), Vec::new()),
    }
}

fn union(parts: impl IntoIterator<Item = (Vec<usize>, Vec<usize>)>) -> (Vec<usize>, Vec<usize>) {
    let mut entry = Vec::new();
    let mut exit = Vec::new();
    for (s, t) in parts {
        entry.extend(s);
        exit.extend(t);
    }
    (entry, exit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneSlot {
    pub task: String,
    /// Nominal start and finish in cycles.
    pub start: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiprocOptions {
    pub max_processors: usize,
    pub enumeration: EnumerationOptions,
}

impl Default for MultiprocOptions {
    fn default() -> Self {
        MultiprocOptions { max_processors: 16, enumeration: EnumerationOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiprocSchedule {
    /// Number of non-empty lanes.
    pub processor_count: usize,
    /// `ceil(sum of nominal durations / deadline)`.
    pub lower_bound: usize,
    /// Processor counts tried, in order.
    pub processors_tried: Vec<usize>,
    pub lanes: Vec<Vec<LaneSlot>>,
    /// Power of each lane under its best voltage assignment.
    pub per_lane_power: Vec<Pmf>,
    pub lane_assignments: Vec<AssignmentResult>,
    pub makespan: Pmf,
    /// P(makespan <= deadline).
    pub confidence: f64,
    pub deadline: f64,
    pub required_confidence: f64,
}

impl MultiprocSchedule {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "deadline = {}", self.deadline).unwrap();
        writeln!(out, "required_confidence = {}", self.required_confidence).unwrap();
        writeln!(out, "lower_bound = {}", self.lower_bound).unwrap();
        let tried: Vec<String> = self.processors_tried.iter().map(usize::to_string).collect();
        writeln!(out, "processors_tried = {}", tried.join(",")).unwrap();
        writeln!(out, "processors = {}", self.processor_count).unwrap();
        writeln!(out, "makespan_mean = {}", self.makespan.expectation()).unwrap();
        writeln!(out, "confidence = {}", self.confidence).unwrap();
        for (k, lane) in self.lanes.iter().enumerate() {
            let a = &self.lane_assignments[k];
            writeln!(out, "lane {k} mean_power = {} std_power = {}", a.best_report.mean_power, a.best_report.std_power)
                .unwrap();
            for slot in lane {
                let level = a.best.get(&slot.task).map(String::as_str).unwrap_or("fixed");
                writeln!(out, "  {} start={} finish={} level={level}", slot.task, slot.start, slot.finish).unwrap();
            }
            writeln!(out, "lane {k} slowdown_cycles = {}", a.slowdown_cycles).unwrap();
            writeln!(out, "lane {k} savings_estimated = {}", a.savings_estimated).unwrap();
            writeln!(out, "lane {k} savings_theoretical = {}", a.savings_theoretical).unwrap();
        }
        out
    }
}

/// List-schedules the flattened graph on `p` processors starting from the
/// lower bound and adding processors until the analytical makespan meets
/// the deadline with the required confidence; then assigns voltages per
/// lane.
pub fn multiproc_schedule(
    g: &FlowGraph,
    deadline: f64,
    confidence: f64,
    levels: &[VoltageLevel],
    opts: &MultiprocOptions,
) -> Result<MultiprocSchedule, ScheduleError> {
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(ScheduleError::InvalidConfidence(confidence));
    }
    if opts.max_processors == 0 {
        return Err(ScheduleError::NonPositive { what: "processor limit", value: 0.0 });
    }
    let root = g.flatten()?;
    let lft = latest_finish_times(&root, deadline)?;
    let dag = task_dependencies(&root);
    let total: f64 = (0..dag.tasks.len()).map(|i| dag.nominal_duration(i)).sum();
    let lower_bound = if total > 0.0 { min_processors(total, deadline)? } else { 1 };

    let effective: Vec<Pmf> = dag
        .tasks
        .iter()
        .zip(&dag.path_prob)
        .map(|(t, &q)| {
            if q <= 0.0 {
                Pmf::delta(0.0, Unit::Cycles)
            } else {
                Transmittance::new(q.min(1.0), t.time.clone())?.effective()
            }
        })
        .collect::<Result<_, _>>()?;

    let mut tried = Vec::new();
    for p in lower_bound..=opts.max_processors {
        tried.push(p);
        let lanes = list_schedule(&dag, &lft, p);
        let makespan = lane_makespan(&effective, &lanes, opts.enumeration.analysis.support_cap)?;
        let achieved = makespan.cdf_at(deadline);
        if achieved + super::CONFIDENCE_SLACK < confidence {
            continue;
        }
        let mut lane_assignments = Vec::new();
        let mut per_lane_power = Vec::new();
        for lane in &lanes {
            let tasks: Vec<FlowNode> = lane
                .iter()
                .map(|&(i, _, _)| FlowNode::Task(TaskNode { time: effective[i].clone(), ..dag.tasks[i].clone() }))
                .collect();
            let lane_graph = FlowGraph::single(FlowNode::Sequence(tasks));
            let result = enumerate_assignments(&lane_graph, levels, deadline, confidence, &opts.enumeration)?;
            per_lane_power.push(result.best_report.power.clone());
            lane_assignments.push(result);
        }
        let lanes: Vec<Vec<LaneSlot>> = lanes
            .into_iter()
            .map(|lane| {
                lane.into_iter()
                    .map(|(i, start, finish)| LaneSlot { task: dag.tasks[i].id.clone(), start, finish })
                    .collect()
            })
            .collect();
        return Ok(MultiprocSchedule {
            processor_count: lanes.len(),
            lower_bound,
            processors_tried: tried,
            lanes,
            per_lane_power,
            lane_assignments,
            makespan,
            confidence: achieved,
            deadline,
            required_confidence: confidence,
        });
    }
    Err(ScheduleError::NoProcessorCount { max: opts.max_processors })
}

/// Non-preemptive list scheduling with nominal durations. The ready task
/// with the earliest latest-finish time (then smallest id) goes to the
/// processor where it can start first (then lowest index). Empty lanes are
/// dropped.
fn list_schedule(dag: &TaskDag, lft: &BTreeMap<String, f64>, p: usize) -> Vec<Vec<(usize, f64, f64)>> {
    let n = dag.tasks.len();
    let preds = dag.predecessors();
    let mut remaining: Vec<usize> = preds.iter().map(Vec::len).collect();
    let mut succs = vec![Vec::new(); n];
    for &(u, v) in &dag.edges {
        succs[u].push(v);
    }
    let mut ready_at = vec![0.0f64; n];
    let mut ready: Vec<usize> = (0..n).filter(|&i| remaining[i] == 0).collect();
    let mut free = vec![0.0f64; p];
    let mut lanes: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); p];
    let key = |i: usize| (lft[&dag.tasks[i].id], &dag.tasks[i].id);

    while !ready.is_empty() {
        let pos = (0..ready.len())
            .min_by(|&a, &b| {
                let (la, ia) = key(ready[a]);
                let (lb, ib) = key(ready[b]);
                la.total_cmp(&lb).then_with(|| ia.cmp(ib))
            })
            .unwrap();
        let task = ready.swap_remove(pos);
        let (proc, start) = free
            .iter()
            .enumerate()
            .map(|(k, &f)| (k, f.max(ready_at[task])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .unwrap();
        let finish = start + dag.nominal_duration(task);
        free[proc] = finish;
        lanes[proc].push((task, start, finish));
        for &v in &succs[task] {
            ready_at[v] = ready_at[v].max(finish);
            remaining[v] -= 1;
            if remaining[v] == 0 {
                ready.push(v);
            }
        }
    }
    lanes.retain(|l| !l.is_empty());
    lanes
}

/// Lanes run concurrently; within a lane, idle gaps (nominal) and task
/// times add up.
fn lane_makespan(effective: &[Pmf], lanes: &[Vec<(usize, f64, f64)>], cap: usize) -> Result<Pmf, ScheduleError> {
    let mut makespan: Option<Pmf> = None;
    for lane in lanes {
        let mut clock = 0.0;
        let mut total = Pmf::delta(0.0, Unit::Cycles)?;
        for &(i, start, finish) in lane {
            if start > clock {
                total = total.convolve_sum_capped(&Pmf::delta(start - clock, Unit::Cycles)?, cap)?;
            }
            total = total.convolve_sum_capped(&effective[i], cap)?;
            clock = finish;
        }
        makespan = Some(match makespan {
            None => total,
            Some(m) => m.max_of(&total)?.rebin(cap)?,
        });
    }
    Ok(makespan.unwrap_or(Pmf::delta(0.0, Unit::Cycles)?))
}

/// Task ids of each lane.
pub fn lane_ids(s: &MultiprocSchedule) -> Vec<Vec<&str>> {
    s.lanes.iter().map(|l| l.iter().map(|slot| slot.task.as_str()).collect()).collect()
}
