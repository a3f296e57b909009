//! Voltage scaling and deadline-aware scheduling.
//!
//! A task run at a lower supply level draws `v_scale^2 * f_scale` of its
//! reference power and takes `f_scale / v_scale` of its reference time.
//! [`enumerate_assignments`] tries every level for every scalable task and
//! keeps the assignments whose completion time meets the deadline with the
//! requested confidence. Among those, `best` has the lowest mean power and
//! `worst` the shortest mean completion time. [`multiproc_schedule`] spreads
//! a graph over the smallest number of processors that meets the deadline.

mod multiproc;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{evaluate, AnalysisError, AnalysisOptions, AnalysisReport};
use crate::flowgraph::{FlowError, FlowGraph, FlowNode, TaskNode};
use crate::lexer::{Cursor, LexError, TokenKind};
use crate::pmf::PmfError;

pub use multiproc::{
    lane_ids, multiproc_schedule, task_dependencies, LaneSlot, MultiprocOptions, MultiprocSchedule, TaskDag,
};

/// Default limit on the number of scalable tasks searched exhaustively.
pub const DEFAULT_ENUMERATION_CAP: usize = 24;

/// Slack added to the deadline probability before comparing it with the
/// required confidence, absorbing rounding in accumulated probabilities.
pub const CONFIDENCE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid voltage level: {0}")]
    InvalidLevel(String),
    #[error("at least two voltage levels are required, found {0}")]
    TooFewLevels(usize),
    #[error("no reference level (v_scale = 1, f_scale = 1)")]
    NoReferenceLevel,
    #[error("task `{task}` is not scalable and cannot run at level `{level}`")]
    NotScalable { task: String, level: String },
    #[error("deadline {0} must be positive")]
    InvalidDeadline(f64),
    #[error("confidence {0} must lie in (0, 1]")]
    InvalidConfidence(f64),
    #[error("infeasible: no voltage assignment meets the deadline with the required confidence")]
    Infeasible,
    #[error("{n} scalable tasks exceed the enumeration cap of {cap}")]
    TooManyTasks { n: usize, cap: usize },
    #[error("assignments cover different task sets")]
    MismatchedTasks,
    #[error("unknown voltage level `{0}`")]
    UnknownLevel(String),
    #[error("high voltage {v_h} must exceed low voltage {v_l}, both positive")]
    InvalidVoltages { v_h: f64, v_l: f64 },
    #[error("{what} must be positive, found {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("infeasible: no processor count up to {max} meets the deadline with the required confidence")]
    NoProcessorCount { max: usize },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl From<LexError> for ScheduleError {
    fn from(e: LexError) -> Self {
        ScheduleError::Syntax { line: e.line, message: format!("column {}: {}", e.col, e.message) }
    }
}

impl From<FlowError> for ScheduleError {
    fn from(e: FlowError) -> Self {
        ScheduleError::Analysis(e.into())
    }
}

impl From<PmfError> for ScheduleError {
    fn from(e: PmfError) -> Self {
        ScheduleError::Analysis(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageLevel {
    pub name: String,
    pub voltage: f64,
    pub v_scale: f64,
    pub f_scale: f64,
}

impl VoltageLevel {
    pub fn new(name: impl Into<String>, voltage: f64, v_scale: f64, f_scale: f64) -> Self {
        VoltageLevel { name: name.into(), voltage, v_scale, f_scale }
    }

    pub fn is_reference(&self) -> bool {
        self.v_scale == 1.0 && self.f_scale == 1.0
    }

    /// Multiplier applied to power values.
    pub fn power_factor(&self) -> f64 {
        self.v_scale * self.v_scale * self.f_scale
    }

    /// Multiplier applied to time values.
    pub fn time_factor(&self) -> f64 {
        (1.0 / self.v_scale) * self.f_scale
    }
}

/// Task id to level name, one entry per scalable task.
pub type VoltageAssignment = BTreeMap<String, String>;

/// Reads `level NAME voltage=V v_scale=S f_scale=F` lines.
pub fn parse_levels(text: &str) -> Result<Vec<VoltageLevel>, ScheduleError> {
    let mut cur = Cursor::new(text)?;
    let mut levels = Vec::new();
    while !cur.is_done() {
        cur.expect_keyword("level")?;
        let (name, line, _) = cur.expect_ident()?;
        let mut fields: [Option<f64>; 3] = [None; 3];
        while let Some(TokenKind::Ident(key)) = cur.peek().map(|t| t.kind.clone()) {
            let slot = match key.as_str() {
                "voltage" => 0,
                "v_scale" => 1,
                "f_scale" => 2,
                _ => break,
            };
            let (kline, _) = cur.here();
            cur.advance();
            cur.expect(TokenKind::Eq)?;
            if fields[slot].replace(cur.expect_number()?.0).is_some() {
                return Err(ScheduleError::Syntax { line: kline, message: format!("duplicate attribute `{key}`") });
            }
        }
        let get = |i: usize, key: &str| {
            fields[i]
                .ok_or_else(|| ScheduleError::Syntax { line, message: format!("level `{name}` is missing `{key}`") })
        };
        levels.push(VoltageLevel::new(name.clone(), get(0, "voltage")?, get(1, "v_scale")?, get(2, "f_scale")?));
    }
    check_levels(&levels)?;
    Ok(levels)
}

/// Validates a level set and returns it ordered by ascending voltage, which
/// is also the order used to break ties between assignments. The reference
/// level comes last.
pub fn sorted_levels(levels: &[VoltageLevel]) -> Result<Vec<VoltageLevel>, ScheduleError> {
    check_levels(levels)?;
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| a.voltage.total_cmp(&b.voltage));
    Ok(sorted)
}

fn check_levels(levels: &[VoltageLevel]) -> Result<(), ScheduleError> {
    if levels.len() < 2 {
        return Err(ScheduleError::TooFewLevels(levels.len()));
    }
    let mut names = HashSet::new();
    for l in levels {
        let bad = |why: &str| Err(ScheduleError::InvalidLevel(format!("`{}`: {why}", l.name)));
        if !names.insert(l.name.as_str()) {
            return bad("duplicate name");
        }
        if !(l.voltage.is_finite() && l.voltage > 0.0) {
            return bad("voltage must be positive");
        }
        if !(l.v_scale > 0.0 && l.v_scale <= 1.0) || !(l.f_scale > 0.0 && l.f_scale <= 1.0) {
            return bad("v_scale and f_scale must lie in (0, 1]");
        }
    }
    let references: Vec<&VoltageLevel> = levels.iter().filter(|l| l.is_reference()).collect();
    let reference = match references.as_slice() {
        [] => return Err(ScheduleError::NoReferenceLevel),
        [r] => *r,
        _ => return Err(ScheduleError::InvalidLevel("more than one reference level".into())),
    };
    for l in levels {
        if !std::ptr::eq(l, reference) && l.voltage >= reference.voltage {
            return Err(ScheduleError::InvalidLevel(format!(
                "`{}`: voltage must be below the reference voltage {}",
                l.name, reference.voltage
            )));
        }
    }
    let mut voltages: Vec<f64> = levels.iter().map(|l| l.voltage).collect();
    voltages.sort_by(f64::total_cmp);
    if voltages.windows(2).any(|w| w[0] == w[1]) {
        return Err(ScheduleError::InvalidLevel("two levels share a voltage".into()));
    }
    Ok(())
}

pub fn scale_task(t: &TaskNode, level: &VoltageLevel) -> Result<TaskNode, ScheduleError> {
    if level.is_reference() {
        return Ok(t.clone());
    }
    if !t.scalable {
        return Err(ScheduleError::NotScalable { task: t.id.clone(), level: level.name.clone() });
    }
    Ok(TaskNode { time: t.time.scale(level.time_factor())?, power: t.power.scale(level.power_factor())?, ..t.clone() })
}

/// Latest finish time of every task such that everything after it can still
/// finish by `deadline` on average. Inside a sequence, a child must leave
/// room for the expected times of its later siblings; children of AND,
/// race and branch nodes inherit their parent's bound.
pub fn latest_finish_times(root: &FlowNode, deadline: f64) -> Result<BTreeMap<String, f64>, ScheduleError> {
    if !(deadline.is_finite() && deadline > 0.0) {
        return Err(ScheduleError::InvalidDeadline(deadline));
    }
    let mut out = BTreeMap::new();
    lft_node(root, deadline, &AnalysisOptions::default(), &mut out)?;
    Ok(out)
}

fn lft_node(
    node: &FlowNode,
    bound: f64,
    opts: &AnalysisOptions,
    out: &mut BTreeMap<String, f64>,
) -> Result<(), ScheduleError> {
    match node {
        FlowNode::Task(t) => {
            out.insert(t.id.clone(), bound);
        }
        FlowNode::Sequence(cs) => {
            let mut remaining = bound;
            for c in cs.iter().rev() {
                lft_node(c, remaining, opts, out)?;
                remaining -= evaluate(c, opts)?.time.expectation();
            }
        }
        FlowNode::And(cs) | FlowNode::Race(cs) => {
            for c in cs {
                lft_node(c, bound, opts, out)?;
            }
        }
        FlowNode::Branch(arms) => {
            for (_, c) in arms {
                lft_node(c, bound, opts, out)?;
            }
        }
        FlowNode::Subflow(name) => return Err(AnalysisError::SubflowRef(name.clone()).into()),
    }
    Ok(())
}

/// Earliest deadline first, ties broken by task id.
pub fn edf_order(tasks: &[(String, f64)]) -> Vec<String> {
    let mut sorted: Vec<&(String, f64)> = tasks.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    sorted.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Lower bound on the processor count: `ceil(total_time / deadline)`.
pub fn min_processors(total_time: f64, deadline: f64) -> Result<usize, ScheduleError> {
    if !(total_time.is_finite() && total_time > 0.0) {
        return Err(ScheduleError::NonPositive { what: "total time", value: total_time });
    }
    if !(deadline.is_finite() && deadline > 0.0) {
        return Err(ScheduleError::NonPositive { what: "deadline", value: deadline });
    }
    Ok(((total_time / deadline).ceil() as usize).max(1))
}

/// Cycles of the tasks that `best` runs at a lower voltage than `worst`.
pub fn slowdown_cycles(
    best: &VoltageAssignment,
    worst: &VoltageAssignment,
    levels: &[VoltageLevel],
    root: &FlowNode,
) -> Result<u64, ScheduleError> {
    if best.len() != worst.len() || best.keys().zip(worst.keys()).any(|(a, b)| a != b) {
        return Err(ScheduleError::MismatchedTasks);
    }
    let voltage_of = |name: &str| {
        levels
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.voltage)
            .ok_or_else(|| ScheduleError::UnknownLevel(name.to_string()))
    };
    let cycles: HashMap<&str, u64> = root.tasks().into_iter().map(|t| (t.id.as_str(), t.cycles)).collect();
    let mut sn = 0;
    for (task, b) in best {
        let c = *cycles.get(task.as_str()).ok_or(ScheduleError::MismatchedTasks)?;
        if voltage_of(b)? < voltage_of(&worst[task])? {
            sn += c;
        }
    }
    Ok(sn)
}

/// `sn * (v_h^2 - v_l^2)`.
pub fn energy_savings_theoretical(sn: u64, v_h: f64, v_l: f64) -> Result<f64, ScheduleError> {
    if !(v_l > 0.0 && v_h > v_l && v_h.is_finite()) {
        return Err(ScheduleError::InvalidVoltages { v_h, v_l });
    }
    Ok(sn as f64 * (v_h * v_h - v_l * v_l))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationOptions {
    /// Maximum number of scalable tasks.
    pub cap: usize,
    pub analysis: AnalysisOptions,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions { cap: DEFAULT_ENUMERATION_CAP, analysis: AnalysisOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub best: VoltageAssignment,
    pub worst: VoltageAssignment,
    pub best_report: AnalysisReport,
    pub worst_report: AnalysisReport,
    pub slowdown_cycles: u64,
    pub savings_estimated: f64,
    pub savings_theoretical: f64,
    /// Number of assignments meeting the deadline with the confidence.
    pub feasible_count: u64,
    /// Number of assignments evaluated.
    pub evaluated: u64,
    pub deadline: f64,
    pub confidence: f64,
}

impl AssignmentResult {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "deadline = {}", self.deadline).unwrap();
        writeln!(out, "confidence = {}", self.confidence).unwrap();
        writeln!(out, "assignments_evaluated = {}", self.evaluated).unwrap();
        writeln!(out, "assignments_feasible = {}", self.feasible_count).unwrap();
        for (task, level) in &self.best {
            writeln!(out, "task {task} best={level} worst={}", self.worst[task]).unwrap();
        }
        for (tag, r) in [("best", &self.best_report), ("worst", &self.worst_report)] {
            writeln!(out, "{tag}_mean_power = {}", r.mean_power).unwrap();
            writeln!(out, "{tag}_std_power = {}", r.std_power).unwrap();
            writeln!(out, "{tag}_most_probable_power = {}", r.most_probable_power).unwrap();
            writeln!(out, "{tag}_mean_time = {}", r.mean_time).unwrap();
            writeln!(out, "{tag}_confidence_at_deadline = {}", r.confidence_at_deadline.unwrap_or(1.0)).unwrap();
        }
        writeln!(out, "slowdown_cycles = {}", self.slowdown_cycles).unwrap();
        writeln!(out, "savings_estimated = {}", self.savings_estimated).unwrap();
        writeln!(out, "savings_theoretical = {}", self.savings_theoretical).unwrap();
        out
    }
}

/// Summary of one evaluated assignment, ordered for the best and worst
/// reductions.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: u64,
    mean_time: f64,
    mean_power: f64,
}

fn better_best(a: Candidate, b: Candidate) -> Candidate {
    match a.mean_power.total_cmp(&b.mean_power).then(a.index.cmp(&b.index)) {
        std::cmp::Ordering::Greater => b,
        _ => a,
    }
}

// Shortest mean time; equal times prefer the higher power (the assignment
// that does not slow anything down), then the lexicographically smaller one.
fn better_worst(a: Candidate, b: Candidate) -> Candidate {
    let order =
        a.mean_time.total_cmp(&b.mean_time).then(b.mean_power.total_cmp(&a.mean_power)).then(a.index.cmp(&b.index));
    match order {
        std::cmp::Ordering::Greater => b,
        _ => a,
    }
}

/// Exhaustive search over `levels.len()^n` assignments of the `n` scalable
/// tasks. Assignments are indexed in lexicographic order: tasks sorted by
/// id, the first task the most significant digit, levels by ascending
/// voltage.
pub fn enumerate_assignments(
    g: &FlowGraph,
    levels: &[VoltageLevel],
    deadline: f64,
    confidence: f64,
    opts: &EnumerationOptions,
) -> Result<AssignmentResult, ScheduleError> {
    if !(deadline.is_finite() && deadline > 0.0) {
        return Err(ScheduleError::InvalidDeadline(deadline));
    }
    if !(confidence > 0.0 && confidence <= 1.0) {
        return Err(ScheduleError::InvalidConfidence(confidence));
    }
    let levels = sorted_levels(levels)?;
    let root = g.flatten()?;
    let mut scalable: Vec<String> = root.tasks().into_iter().filter(|t| t.scalable).map(|t| t.id.clone()).collect();
    scalable.sort();
    let n = scalable.len();
    if n > opts.cap {
        return Err(ScheduleError::TooManyTasks { n, cap: opts.cap });
    }
    let position: HashMap<&str, usize> = scalable.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let base = levels.len() as u64;
    let total = (0..n)
        .try_fold(1u64, |acc, _| acc.checked_mul(base))
        .ok_or(ScheduleError::TooManyTasks { n, cap: opts.cap })?;

    let digits = |mut index: u64| {
        let mut d = vec![0usize; n];
        for slot in d.iter_mut().rev() {
            *slot = (index % base) as usize;
            index /= base;
        }
        d
    };
    let scaled = |digits: &[usize]| {
        root.map_tasks(&mut |t| match position.get(t.id.as_str()) {
            Some(&i) => scale_task(t, &levels[digits[i]]),
            None => Ok(t.clone()),
        })
    };

    let folded = (0..total)
        .into_par_iter()
        .map(|index| -> Result<Option<Candidate>, ScheduleError> {
            let tree = scaled(&digits(index))?;
            let c = evaluate(&tree, &opts.analysis)?;
            if c.time.cdf_at(deadline) + CONFIDENCE_SLACK < confidence {
                return Ok(None);
            }
            Ok(Some(Candidate { index, mean_time: c.time.expectation(), mean_power: c.power.expectation() }))
        })
        .try_fold(
            || (0u64, None::<(Candidate, Candidate)>),
            |(count, acc), cand| {
                let Some(c) = cand? else { return Ok((count, acc)) };
                let acc = match acc {
                    None => (c, c),
                    Some((b, w)) => (better_best(b, c), better_worst(w, c)),
                };
                Ok::<_, ScheduleError>((count + 1, Some(acc)))
            },
        )
        .try_reduce(
            || (0, None),
            |(n1, a), (n2, b)| {
                let merged = match (a, b) {
                    (None, x) | (x, None) => x,
                    (Some((b1, w1)), Some((b2, w2))) => Some((better_best(b1, b2), better_worst(w1, w2))),
                };
                Ok((n1 + n2, merged))
            },
        )?;

    let (feasible_count, Some((best, worst))) = folded else {
        return Err(ScheduleError::Infeasible);
    };
    let assignment = |index: u64| -> VoltageAssignment {
        scalable.iter().cloned().zip(digits(index).into_iter().map(|d| levels[d].name.clone())).collect()
    };
    let report = |index: u64| -> Result<AnalysisReport, ScheduleError> {
        let c = evaluate(&scaled(&digits(index))?, &opts.analysis)?;
        Ok(AnalysisReport::from_parts(c.time, c.power, Some(deadline)))
    };
    let best_assignment = assignment(best.index);
    let worst_assignment = assignment(worst.index);
    let best_report = report(best.index)?;
    let worst_report = report(worst.index)?;
    let sn = slowdown_cycles(&best_assignment, &worst_assignment, &levels, &root)?;
    let reference = levels.last().expect("at least two levels");
    let savings_theoretical = energy_savings_theoretical(sn, reference.voltage, levels[0].voltage)?;
    Ok(AssignmentResult {
        savings_estimated: worst_report.mean_power - best_report.mean_power,
        best: best_assignment,
        worst: worst_assignment,
        best_report,
        worst_report,
        slowdown_cycles: sn,
        savings_theoretical,
        feasible_count,
        evaluated: total,
        deadline,
        confidence,
    })
}
