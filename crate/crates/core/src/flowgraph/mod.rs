//! Hierarchical concurrent flow graphs.
//!
//! A [`FlowGraph`] is a set of named flows, each a tree of [`FlowNode`]s.
//! Leaves are tasks carrying time and power distributions; interior nodes
//! compose their children in sequence, as AND-concurrent groups (all must
//! finish), as probabilistic branches (exactly one arm runs) or as races
//! (the first to finish wins). A flow may instantiate another flow by name;
//! [`FlowGraph::flatten`] inlines those references into a single tree.

mod text;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use crate::pmf::{Unit, PROBABILITY_TOLERANCE};

pub use crate::pmf::Pmf;
pub use text::{parse_flow_file, serialize_flow_file};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub id: String,
    pub label: String,
    /// Execution time in cycles.
    pub time: Pmf,
    /// Power in microwatts.
    pub power: Pmf,
    /// Nominal cycle count at the reference voltage.
    pub cycles: u64,
    /// Whether voltage scaling may be applied to this task.
    pub scalable: bool,
}

impl TaskNode {
    pub fn new(id: impl Into<String>, time: Pmf, power: Pmf, cycles: u64, scalable: bool) -> Self {
        let id = id.into();
        TaskNode { label: id.clone(), id, time, power, cycles, scalable }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowNode {
    Task(TaskNode),
    Sequence(Vec<FlowNode>),
    And(Vec<FlowNode>),
    Branch(Vec<(f64, FlowNode)>),
    Race(Vec<FlowNode>),
    Subflow(String),
}

impl FlowNode {
    /// Scalable task with point-mass time and power; `cycles` is the time
    /// rounded to an integer.
    pub fn point_task(id: &str, time: f64, power: f64) -> FlowNode {
        FlowNode::Task(TaskNode::new(
            id,
            Pmf::delta(time, Unit::Cycles).expect("time must be finite and nonnegative"),
            Pmf::delta(power, Unit::Microwatts).expect("power must be finite and nonnegative"),
            time.round() as u64,
            true,
        ))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FlowNode::Task(_) => "task",
            FlowNode::Sequence(_) => "seq",
            FlowNode::And(_) => "and",
            FlowNode::Branch(_) => "branch",
            FlowNode::Race(_) => "race",
            FlowNode::Subflow(_) => "sub",
        }
    }

    /// Tasks in pre-order.
    pub fn tasks(&self) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        self.visit_tasks(&mut |t| out.push(t));
        out
    }

    pub fn visit_tasks<'a>(&'a self, f: &mut impl FnMut(&'a TaskNode)) {
        match self {
            FlowNode::Task(t) => f(t),
            FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => cs.iter().for_each(|c| c.visit_tasks(f)),
            FlowNode::Branch(arms) => arms.iter().for_each(|(_, c)| c.visit_tasks(f)),
            FlowNode::Subflow(_) => {}
        }
    }

    /// Rebuilds the tree with every task passed through `f`.
    pub fn map_tasks<E>(&self, f: &mut impl FnMut(&TaskNode) -> Result<TaskNode, E>) -> Result<FlowNode, E> {
        Ok(match self {
            FlowNode::Task(t) => FlowNode::Task(f(t)?),
            FlowNode::Sequence(cs) => FlowNode::Sequence(cs.iter().map(|c| c.map_tasks(f)).collect::<Result<_, _>>()?),
            FlowNode::And(cs) => FlowNode::And(cs.iter().map(|c| c.map_tasks(f)).collect::<Result<_, _>>()?),
            FlowNode::Race(cs) => FlowNode::Race(cs.iter().map(|c| c.map_tasks(f)).collect::<Result<_, _>>()?),
            FlowNode::Branch(arms) => {
                FlowNode::Branch(arms.iter().map(|(p, c)| Ok((*p, c.map_tasks(f)?))).collect::<Result<_, _>>()?)
            }
            FlowNode::Subflow(name) => FlowNode::Subflow(name.clone()),
        })
    }

    pub fn contains_subflow_ref(&self) -> bool {
        match self {
            FlowNode::Subflow(_) => true,
            FlowNode::Task(_) => false,
            FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => {
                cs.iter().any(|c| c.contains_subflow_ref())
            }
            FlowNode::Branch(arms) => arms.iter().any(|(_, c)| c.contains_subflow_ref()),
        }
    }
}

/// Problem found by [`FlowGraph::validate`], located by a slash-separated
/// node path such as `main/seq[2]/branch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("line {line}: duplicate flow `{name}`")]
    DuplicateFlow { name: String, line: usize },
    #[error("unresolved subflow `{name}` referenced from `{path}`")]
    UnresolvedSubflow { name: String, path: String },
    #[error("invalid flow graph: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_diagnostics(ds: &[Diagnostic]) -> String {
    ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    pub flows: BTreeMap<String, FlowNode>,
    pub entry: String,
    /// Completion deadline in cycles.
    pub deadline: Option<f64>,
    /// Required probability of meeting the deadline.
    pub confidence: Option<f64>,
}

impl FlowGraph {
    /// Graph with a single flow named `main`.
    pub fn single(root: FlowNode) -> Self {
        FlowGraph {
            flows: BTreeMap::from([("main".to_string(), root)]),
            entry: "main".into(),
            deadline: None,
            confidence: None,
        }
    }

    pub fn with_deadline(mut self, deadline: f64) -> Self {
        self.deadline = Some(deadline);
        self
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        if !self.flows.contains_key(&self.entry) {
            diags.push(Diagnostic {
                path: self.entry.clone(),
                message: format!("entry flow `{}` does not exist", self.entry),
            });
        }
        if let Some(d) = self.deadline {
            if !(d.is_finite() && d > 0.0) {
                diags.push(Diagnostic { path: "flowgraph".into(), message: format!("deadline {d} must be positive") });
            }
        }
        if let Some(c) = self.confidence {
            if !(c > 0.0 && c <= 1.0) {
                diags.push(Diagnostic {
                    path: "flowgraph".into(),
                    message: format!("confidence {c} must lie in (0, 1]"),
                });
            }
        }
        for (name, root) in &self.flows {
            let mut ids = HashSet::new();
            self.validate_node(root, name, &mut ids, &mut diags);
        }
        for name in self.recursive_flows() {
            diags.push(Diagnostic { path: name, message: "recursive subflow".into() });
        }
        diags
    }

    fn validate_node(&self, node: &FlowNode, path: &str, ids: &mut HashSet<String>, diags: &mut Vec<Diagnostic>) {
        let mut push = |message: String| diags.push(Diagnostic { path: path.to_string(), message });
        match node {
            FlowNode::Task(t) => {
                if !ids.insert(t.id.clone()) {
                    push(format!("duplicate task id `{}`", t.id));
                }
                if t.time.unit() != Unit::Cycles {
                    push(format!("task `{}` time must be in cycles, found {}", t.id, t.time.unit()));
                }
                if t.power.unit() != Unit::Microwatts {
                    push(format!("task `{}` power must be in uW, found {}", t.id, t.power.unit()));
                }
            }
            FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => {
                if cs.is_empty() {
                    push(format!("{} has no children", node.kind_name()));
                }
                for (i, c) in cs.iter().enumerate() {
                    let child = format!("{path}/{}[{i}]", node.kind_name());
                    self.validate_node(c, &child, ids, diags);
                }
            }
            FlowNode::Branch(arms) => {
                if arms.is_empty() {
                    push("branch has no arms".into());
                }
                let mut sum = 0.0;
                for &(p, _) in arms {
                    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                        push(format!("branch probability {p} outside [0, 1]"));
                    }
                    sum += p;
                }
                if !arms.is_empty() && (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                    push(format!("branch probabilities sum to {sum}"));
                }
                for (i, (_, c)) in arms.iter().enumerate() {
                    let child = format!("{path}/branch[{i}]");
                    self.validate_node(c, &child, ids, diags);
                }
            }
            FlowNode::Subflow(name) => {
                if !self.flows.contains_key(name) {
                    push(format!("unresolved subflow `{name}`"));
                }
            }
        }
    }

    /// Flows that can reach themselves through subflow references.
    fn recursive_flows(&self) -> Vec<String> {
        let refs: BTreeMap<&str, BTreeSet<String>> = self
            .flows
            .iter()
            .map(|(name, root)| {
                let mut out = BTreeSet::new();
                collect_refs(root, &mut out);
                (name.as_str(), out)
            })
            .collect();
        let mut recursive = Vec::new();
        for start in self.flows.keys() {
            let mut stack: Vec<&str> = refs[start.as_str()].iter().map(String::as_str).collect();
            let mut seen = HashSet::new();
            while let Some(cur) = stack.pop() {
                if cur == start {
                    recursive.push(start.clone());
                    break;
                }
                if seen.insert(cur) {
                    if let Some(next) = refs.get(cur) {
                        stack.extend(next.iter().map(String::as_str));
                    }
                }
            }
        }
        recursive
    }

    /// Errors with every diagnostic unless the graph is well formed.
    pub fn ensure_valid(&self) -> Result<(), FlowError> {
        let diags = self.validate();
        if diags.is_empty() {
            Ok(())
        } else {
            Err(FlowError::Invalid(diags))
        }
    }

    /// Inlines every subflow reference reachable from the entry flow.
    ///
    /// Tasks of the entry flow keep their ids. A task reached through
    /// subflow instantiations gets `@` followed by the instantiation path,
    /// e.g. `h1@helper#0` or `x@helper#1/inner#0`, where `#k` counts
    /// references to the same flow within the instantiating flow.
    pub fn flatten(&self) -> Result<FlowNode, FlowError> {
        self.ensure_valid()?;
        self.inline(&self.flows[&self.entry], "")
    }

    fn inline(&self, node: &FlowNode, prefix: &str) -> Result<FlowNode, FlowError> {
        let mut counters: BTreeMap<String, usize> = BTreeMap::new();
        self.inline_node(node, prefix, &mut counters)
    }

    fn inline_all(
        &self,
        cs: &[FlowNode],
        prefix: &str,
        counters: &mut BTreeMap<String, usize>,
    ) -> Result<Vec<FlowNode>, FlowError> {
        cs.iter().map(|c| self.inline_node(c, prefix, counters)).collect()
    }

    fn inline_node(
        &self,
        node: &FlowNode,
        prefix: &str,
        counters: &mut BTreeMap<String, usize>,
    ) -> Result<FlowNode, FlowError> {
        Ok(match node {
            FlowNode::Task(t) => {
                let mut t = t.clone();
                if !prefix.is_empty() {
                    t.id = format!("{}@{prefix}", t.id);
                }
                FlowNode::Task(t)
            }
            FlowNode::Sequence(cs) => FlowNode::Sequence(self.inline_all(cs, prefix, counters)?),
            FlowNode::And(cs) => FlowNode::And(self.inline_all(cs, prefix, counters)?),
            FlowNode::Race(cs) => FlowNode::Race(self.inline_all(cs, prefix, counters)?),
            FlowNode::Branch(arms) => FlowNode::Branch(
                arms.iter()
                    .map(|(p, c)| Ok((*p, self.inline_node(c, prefix, counters)?)))
                    .collect::<Result<_, FlowError>>()?,
            ),
            FlowNode::Subflow(name) => {
                let target = self
                    .flows
                    .get(name)
                    .ok_or_else(|| FlowError::UnresolvedSubflow { name: name.clone(), path: prefix.to_string() })?;
                let k = counters.entry(name.clone()).or_insert(0);
                let instance = format!("{name}#{k}");
                *k += 1;
                let nested = if prefix.is_empty() { instance } else { format!("{prefix}/{instance}") };
                self.inline(target, &nested)?
            }
        })
    }
}

fn collect_refs(node: &FlowNode, out: &mut BTreeSet<String>) {
    match node {
        FlowNode::Subflow(name) => {
            out.insert(name.clone());
        }
        FlowNode::Task(_) => {}
        FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => cs.iter().for_each(|c| collect_refs(c, out)),
        FlowNode::Branch(arms) => arms.iter().for_each(|(_, c)| collect_refs(c, out)),
    }
}
