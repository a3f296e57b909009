//! Brute-force searches used to cross-check the scheduler.

use std::collections::BTreeMap;

use crate::analysis::{evaluate, AnalysisOptions, AnalysisReport};
use crate::flowgraph::{FlowGraph, FlowNode, TaskNode};
use crate::scheduler::{AssignmentResult, ScheduleError, VoltageAssignment, VoltageLevel};

/// Largest number of scalable tasks [`brute_force_voltage`] accepts.
pub const BRUTE_FORCE_CAP: usize = 16;

struct Evaluated {
    choice: Vec<usize>,
    report: AnalysisReport,
}

/// Tries every assignment by nested recursion over the scalable tasks in id
/// order, lower voltages first, keeping the first assignment seen on ties.
pub fn brute_force_voltage(
    g: &FlowGraph,
    levels: &[VoltageLevel],
    deadline: f64,
    confidence: f64,
) -> Result<AssignmentResult, ScheduleError> {
    if !(deadline.is_finite() && deadline > 0.0) {
        return Err(ScheduleError::InvalidDeadline(deadline));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(ScheduleError::InvalidConfidence(confidence));
    }
    if levels.len() < 2 {
        return Err(ScheduleError::TooFewLevels(levels.len()));
    }
    let mut order: Vec<&VoltageLevel> = levels.iter().collect();
    order.sort_by(|a, b| a.voltage.partial_cmp(&b.voltage).unwrap());
    let high = *order.last().unwrap();
    let low = order[0];
    if !(high.v_scale == 1.0 && high.f_scale == 1.0) {
        return Err(ScheduleError::NoReferenceLevel);
    }

    let root = g.flatten()?;
    let mut ids: Vec<String> = Vec::new();
    root.visit_tasks(&mut |t| {
        if t.scalable {
            ids.push(t.id.clone());
        }
    });
    ids.sort();
    if ids.len() > BRUTE_FORCE_CAP {
        return Err(ScheduleError::TooManyTasks { n: ids.len(), cap: BRUTE_FORCE_CAP });
    }

    let mut feasible = 0u64;
    let mut evaluated = 0u64;
    let mut best: Option<Evaluated> = None;
    let mut worst: Option<Evaluated> = None;
    let mut choice = Vec::with_capacity(ids.len());
    let mut visit = |choice: &[usize]| -> Result<(), ScheduleError> {
        evaluated += 1;
        let picked: BTreeMap<&str, &VoltageLevel> =
            ids.iter().map(String::as_str).zip(choice.iter().map(|&c| order[c])).collect();
        let tree = rescale(&root, &picked);
        let c = evaluate(&tree, &AnalysisOptions::default())?;
        if c.time.cdf_at(deadline) + 1e-12 < confidence {
            return Ok(());
        }
        feasible += 1;
        let report = AnalysisReport::from_parts(c.time, c.power, Some(deadline));
        if best.as_ref().is_none_or(|b| report.mean_power < b.report.mean_power) {
            best = Some(Evaluated { choice: choice.to_vec(), report: report.clone() });
        }
        let faster = |w: &Evaluated| {
            report.mean_time < w.report.mean_time
                || (report.mean_time == w.report.mean_time && report.mean_power > w.report.mean_power)
        };
        if worst.as_ref().is_none_or(faster) {
            worst = Some(Evaluated { choice: choice.to_vec(), report });
        }
        Ok(())
    };
    nest(ids.len(), order.len(), &mut choice, &mut visit)?;

    let (Some(best), Some(worst)) = (best, worst) else {
        return Err(ScheduleError::Infeasible);
    };
    let named = |choice: &[usize]| -> VoltageAssignment {
        ids.iter().cloned().zip(choice.iter().map(|&c| order[c].name.clone())).collect()
    };
    let mut sn = 0u64;
    for (i, id) in ids.iter().enumerate() {
        if order[best.choice[i]].voltage < order[worst.choice[i]].voltage {
            let mut cycles = 0;
            root.visit_tasks(&mut |t| {
                if &t.id == id {
                    cycles = t.cycles;
                }
            });
            sn += cycles;
        }
    }
    Ok(AssignmentResult {
        best: named(&best.choice),
        worst: named(&worst.choice),
        savings_estimated: worst.report.mean_power - best.report.mean_power,
        best_report: best.report,
        worst_report: worst.report,
        slowdown_cycles: sn,
        savings_theoretical: sn as f64 * (high.voltage * high.voltage - low.voltage * low.voltage),
        feasible_count: feasible,
        evaluated,
        deadline,
        confidence,
    })
}

fn nest(
    depth: usize,
    width: usize,
    choice: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Result<(), ScheduleError>,
) -> Result<(), ScheduleError> {
    if choice.len() == depth {
        return visit(choice);
    }
    for level in 0..width {
        choice.push(level);
        nest(depth, width, choice, visit)?;
        choice.pop();
    }
    Ok(())
}

fn rescale(node: &FlowNode, picked: &BTreeMap<&str, &VoltageLevel>) -> FlowNode {
    match node {
        FlowNode::Task(t) => FlowNode::Task(match picked.get(t.id.as_str()) {
            Some(level) if !(level.v_scale == 1.0 && level.f_scale == 1.0) => TaskNode {
                time: t.time.scale((1.0 / level.v_scale) * level.f_scale).expect("positive factor"),
                power: t.power.scale(level.v_scale * level.v_scale * level.f_scale).expect("positive factor"),
                ..t.clone()
            },
            _ => t.clone(),
        }),
        FlowNode::Sequence(cs) => FlowNode::Sequence(cs.iter().map(|c| rescale(c, picked)).collect()),
        FlowNode::And(cs) => FlowNode::And(cs.iter().map(|c| rescale(c, picked)).collect()),
        FlowNode::Race(cs) => FlowNode::Race(cs.iter().map(|c| rescale(c, picked)).collect()),
        FlowNode::Branch(arms) => FlowNode::Branch(arms.iter().map(|(p, c)| (*p, rescale(c, picked))).collect()),
        FlowNode::Subflow(s) => FlowNode::Subflow(s.clone()),
    }
}

/// Smallest processor count, up to `max_processors`, for which some
/// non-preemptive schedule finishes every task by `deadline`, using fixed
/// durations. Every assignment of tasks to processors is tried together
/// with every precedence-respecting execution order; tasks run as early as
/// their processor and predecessors allow.
pub fn brute_force_min_processors(
    durations: &[f64],
    edges: &[(usize, usize)],
    deadline: f64,
    max_processors: usize,
) -> Option<usize> {
    let n = durations.len();
    let orders = topological_orders(n, edges);
    for p in 1..=max_processors {
        let mut lane = vec![0usize; n];
        loop {
            if orders.iter().any(|order| asap_makespan(order, &lane, durations, edges, p) <= deadline + 1e-9) {
                return Some(p);
            }
            // Next lane assignment in base p.
            let mut i = 0;
            while i < n && lane[i] == p - 1 {
                lane[i] = 0;
                i += 1;
            }
            if i == n {
                break;
            }
            lane[i] += 1;
        }
    }
    None
}

fn topological_orders(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn go(n: usize, edges: &[(usize, usize)], placed: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if placed.len() == n {
            out.push(placed.clone());
            return;
        }
        for v in 0..n {
            let ready = !placed.contains(&v) && edges.iter().all(|&(a, b)| b != v || placed.contains(&a));
            if ready {
                placed.push(v);
                go(n, edges, placed, out);
                placed.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(n, edges, &mut Vec::new(), &mut out);
    out
}

fn asap_makespan(order: &[usize], lane: &[usize], durations: &[f64], edges: &[(usize, usize)], p: usize) -> f64 {
    let mut finish = vec![0.0f64; durations.len()];
    let mut free = vec![0.0f64; p];
    for &v in order {
        let ready = edges.iter().filter(|&&(_, b)| b == v).map(|&(a, _)| finish[a]).fold(0.0, f64::max);
        let start = ready.max(free[lane[v]]);
        finish[v] = start + durations[v];
        free[lane[v]] = finish[v];
    }
    finish.into_iter().fold(0.0, f64::max)
}
