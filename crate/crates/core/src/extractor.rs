//! Flow-graph extraction from a scheduled block-level IR.
//!
//! Every block becomes a flow holding its operations grouped by schedule
//! time: operations issued in the same step run as an AND group, steps
//! follow each other in a sequence. Control flow between blocks becomes a
//! chain of `<block>.path` flows: a block with one successor continues into
//! it, a block with several successors branches with probabilities taken
//! from the profiled edge counts.
//!
//! IR file:
//!
//! ```text
//! block BB1
//!   op ialu @0
//!   op imul @1
//!   succ BB2:30 BB3:70
//! block BB2
//!   op ld @0
//! ```
//!
//! Functional-unit library:
//!
//! ```text
//! fu ialu delay=1 energy={38:0.2, 41:0.6, 45:0.2}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::analysis::branch_probs_from_profile;
use crate::flowgraph::{FlowGraph, FlowNode, TaskNode};
use crate::lexer::{Cursor, LexError, TokenKind};
use crate::pmf::{Pmf, Unit};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtractError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate block `{id}`")]
    DuplicateBlock { id: String, line: usize },
    #[error("line {line}: block `{id}` has no ops")]
    EmptyBlock { id: String, line: usize },
    #[error("edge {from} -> {to} points to an unknown block")]
    DanglingEdge { from: String, to: String },
    #[error("line {line}: duplicate functional unit `{name}`")]
    DuplicateUnit { name: String, line: usize },
    #[error("functional unit `{0}` is not in the library")]
    MissingUnit(String),
    #[error("block `{0}` has several successors but a zero total execution count")]
    ZeroBranchCount(String),
    #[error("control flow cycle through block `{0}`")]
    Cycle(String),
    #[error("IR has no blocks")]
    NoBlocks,
    #[error("transition count must be at least 1")]
    InvalidCount,
}

impl From<LexError> for ExtractError {
    fn from(e: LexError) -> Self {
        ExtractError::Syntax { line: e.line, message: format!("column {}: {}", e.col, e.message) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrOp {
    pub fu_type: String,
    pub schedule_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrBlock {
    pub id: String,
    pub ops: Vec<IrOp>,
}

impl IrBlock {
    /// Number of distinct schedule steps in the block.
    pub fn max_steps(&self) -> usize {
        self.ops.iter().map(|o| o.schedule_time).collect::<HashSet<_>>().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrEdge {
    pub from: String,
    pub to: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrProgram {
    pub blocks: Vec<IrBlock>,
    pub edges: Vec<IrEdge>,
}

impl IrProgram {
    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }
}

pub fn parse_ir(text: &str) -> Result<IrProgram, ExtractError> {
    let mut cur = Cursor::new(text)?;
    let mut blocks: Vec<IrBlock> = Vec::new();
    let mut block_lines: Vec<usize> = Vec::new();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();

    while let Some(tok) = cur.peek().cloned() {
        let TokenKind::Ident(word) = &tok.kind else {
            return Err(cur.error(format!("expected `block`, `op` or `succ`, found {}", tok.kind)).into());
        };
        cur.advance();
        match word.as_str() {
            "block" => {
                let (id, line, _) = cur.expect_ident()?;
                if id.contains('.') {
                    return Err(ExtractError::Syntax { line, message: format!("block id `{id}` may not contain `.`") });
                }
                if !seen.insert(id.clone()) {
                    return Err(ExtractError::DuplicateBlock { id, line });
                }
                blocks.push(IrBlock { id, ops: Vec::new() });
                block_lines.push(line);
            }
            "op" | "succ" if blocks.is_empty() => {
                return Err(ExtractError::Syntax { line: tok.line, message: format!("`{word}` outside of a block") });
            }
            "op" => {
                let (fu_type, _, _) = cur.expect_ident()?;
                cur.expect(TokenKind::At)?;
                let (line, _) = cur.here();
                let (value, raw) = cur.expect_number()?;
                if value < 0.0 {
                    return Err(ExtractError::Syntax { line, message: format!("negative schedule time {raw}") });
                }
                let schedule_time = raw.parse::<u64>().map_err(|_| ExtractError::Syntax {
                    line,
                    message: format!("schedule time `{raw}` is not an integer"),
                })?;
                blocks.last_mut().unwrap().ops.push(IrOp { fu_type, schedule_time });
            }
            "succ" => {
                let from = blocks.last().unwrap().id.clone();
                while matches!(cur.peek().map(|t| &t.kind), Some(TokenKind::Ident(_)))
                    && cur.peek_nth(1).is_some_and(|t| t.kind == TokenKind::Colon)
                {
                    let (to, _, _) = cur.expect_ident()?;
                    cur.expect(TokenKind::Colon)?;
                    let count = cur.expect_uint()?;
                    edges.push(IrEdge { from: from.clone(), to, count });
                }
            }
            other => {
                return Err(ExtractError::Syntax { line: tok.line, message: format!("unknown directive `{other}`") });
            }
        }
    }

    for (block, &line) in blocks.iter().zip(&block_lines) {
        if block.ops.is_empty() {
            return Err(ExtractError::EmptyBlock { id: block.id.clone(), line });
        }
    }
    for e in &edges {
        if !seen.contains(&e.to) {
            return Err(ExtractError::DanglingEdge { from: e.from.clone(), to: e.to.clone() });
        }
    }
    Ok(IrProgram { blocks, edges })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuEntry {
    /// Energy per operation in microwatt-cycles.
    pub energy: Pmf,
    /// Latency in cycles, at least 1.
    pub delay: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FuLibrary {
    pub entries: BTreeMap<String, FuEntry>,
}

pub fn parse_fu_library(text: &str) -> Result<FuLibrary, ExtractError> {
    let mut cur = Cursor::new(text)?;
    let mut entries = BTreeMap::new();
    while !cur.is_done() {
        cur.expect_keyword("fu")?;
        let (name, line, _) = cur.expect_ident()?;
        let mut delay = None;
        let mut energy = None;
        while matches!(cur.peek().map(|t| &t.kind), Some(TokenKind::Ident(k)) if k == "delay" || k == "energy") {
            let (key, kline, _) = cur.expect_ident()?;
            cur.expect(TokenKind::Eq)?;
            if key == "delay" {
                let d = cur.expect_uint()?;
                if d < 1 {
                    return Err(ExtractError::Syntax {
                        line: kline,
                        message: format!("unit `{name}` delay must be at least 1"),
                    });
                }
                delay = Some(d);
            } else {
                let points = cur.expect_pmf_points()?;
                energy = Some(
                    Pmf::new(points, Unit::MicrowattCycles)
                        .map_err(|e| ExtractError::Syntax { line: kline, message: e.to_string() })?,
                );
            }
        }
        let missing = |what: &str| ExtractError::Syntax { line, message: format!("unit `{name}` is missing `{what}`") };
        let entry =
            FuEntry { delay: delay.ok_or_else(|| missing("delay"))?, energy: energy.ok_or_else(|| missing("energy"))? };
        if entries.insert(name.clone(), entry).is_some() {
            return Err(ExtractError::DuplicateUnit { name, line });
        }
    }
    Ok(FuLibrary { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrangement {
    Sequential,
    Concurrent,
}

/// Power weight of each of `n` nodes: `1/n` when they run one after another
/// (their energies average over the longer span), `1` when they run side by
/// side (their powers add).
pub fn transition_probabilities(kind: Arrangement, n: usize) -> Result<f64, ExtractError> {
    if n < 1 {
        return Err(ExtractError::InvalidCount);
    }
    Ok(match kind {
        Arrangement::Sequential => 1.0 / n as f64,
        Arrangement::Concurrent => 1.0,
    })
}

/// Name of the flow that runs `block` and then everything after it.
pub fn path_flow_name(block: &str) -> String {
    format!("{block}.path")
}

pub fn extract_flow(ir: &IrProgram, lib: &FuLibrary) -> Result<FlowGraph, ExtractError> {
    let first = ir.blocks.first().ok_or(ExtractError::NoBlocks)?;
    for op in ir.blocks.iter().flat_map(|b| &b.ops) {
        if !lib.entries.contains_key(&op.fu_type) {
            return Err(ExtractError::MissingUnit(op.fu_type.clone()));
        }
    }

    let mut successors: HashMap<&str, Vec<&IrEdge>> = HashMap::new();
    for e in &ir.edges {
        successors.entry(e.from.as_str()).or_default().push(e);
    }
    check_acyclic(ir, &successors)?;

    let mut flows = BTreeMap::new();
    for block in &ir.blocks {
        flows.insert(block.id.clone(), block_body(block, lib));
        let mut path = vec![FlowNode::Subflow(block.id.clone())];
        match successors.get(block.id.as_str()).map(Vec::as_slice) {
            None | Some([]) => {}
            Some([only]) => path.push(FlowNode::Subflow(path_flow_name(&only.to))),
            Some(many) => {
                let counts: Vec<u64> = many.iter().map(|e| e.count).collect();
                let probs =
                    branch_probs_from_profile(&counts).map_err(|_| ExtractError::ZeroBranchCount(block.id.clone()))?;
                let arms = probs
                    .into_iter()
                    .zip(many.iter())
                    .map(|(p, e)| (p, FlowNode::Subflow(path_flow_name(&e.to))))
                    .collect();
                path.push(FlowNode::Branch(arms));
            }
        }
        flows.insert(path_flow_name(&block.id), FlowNode::Sequence(path));
    }

    Ok(FlowGraph { flows, entry: path_flow_name(&first.id), deadline: None, confidence: None })
}

fn block_body(block: &IrBlock, lib: &FuLibrary) -> FlowNode {
    let mut steps: BTreeMap<u64, Vec<FlowNode>> = BTreeMap::new();
    for (i, op) in block.ops.iter().enumerate() {
        let unit = &lib.entries[&op.fu_type];
        let task = TaskNode {
            id: format!("{}_op{i}", block.id),
            label: op.fu_type.clone(),
            time: Pmf::delta(unit.delay as f64, Unit::Cycles).expect("delay is a positive integer"),
            power: unit.energy.with_unit(Unit::Microwatts),
            cycles: unit.delay,
            scalable: true,
        };
        steps.entry(op.schedule_time).or_default().push(FlowNode::Task(task));
    }
    FlowNode::Sequence(
        steps
            .into_values()
            .map(|mut group| if group.len() == 1 { group.pop().unwrap() } else { FlowNode::And(group) })
            .collect(),
    )
}

fn check_acyclic(ir: &IrProgram, successors: &HashMap<&str, Vec<&IrEdge>>) -> Result<(), ExtractError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    let mut marks: HashMap<&str, Mark> = ir.blocks.iter().map(|b| (b.id.as_str(), Mark::Fresh)).collect();
    for block in &ir.blocks {
        if marks[block.id.as_str()] != Mark::Fresh {
            continue;
        }
        // Iterative DFS: (block, index of next successor to visit).
        let mut stack = vec![(block.id.as_str(), 0usize)];
        marks.insert(block.id.as_str(), Mark::Active);
        while let Some((node, idx)) = stack.pop() {
            let succ = successors.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if idx < succ.len() {
                stack.push((node, idx + 1));
                let next = succ[idx].to.as_str();
                match marks[next] {
                    Mark::Active => return Err(ExtractError::Cycle(next.to_string())),
                    Mark::Fresh => {
                        marks.insert(next, Mark::Active);
                        stack.push((next, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks.insert(node, Mark::Done);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LIB: &str = "fu ialu delay=1 energy={38:0.2, 41:0.6, 45:0.2}\nfu imul delay=3 energy={120:0.5, 140:0.5}\nfu ld delay=2 energy={60:1}\n";

    fn lib() -> FuLibrary {
        parse_fu_library(LIB).unwrap()
    }

    #[test]
    fn parses_two_blocks_one_edge() {
        let ir = parse_ir("block BB1\n  op ialu @0\n  succ BB2:5\nblock BB2\n  op ld @0\n").unwrap();
        assert_eq!(ir.blocks.len(), 2);
        assert_eq!(ir.edges, vec![IrEdge { from: "BB1".into(), to: "BB2".into(), count: 5 }]);
    }

    #[test]
    fn ir_errors() {
        let err = parse_ir("block BB1\n  op ialu @-1\n").unwrap_err();
        assert!(
            matches!(err, ExtractError::Syntax { line: 2, ref message } if message.contains("negative")),
            "{err:?}"
        );
        assert_eq!(
            parse_ir("block BB1\nblock BB2\n  op ialu @0\n").unwrap_err(),
            ExtractError::EmptyBlock { id: "BB1".into(), line: 1 }
        );
        assert!(matches!(
            parse_ir("block A\n op x @0\nblock A\n op x @0"),
            Err(ExtractError::DuplicateBlock { line: 3, .. })
        ));
        assert!(matches!(parse_ir("block A\n op x @0\n succ B:1"), Err(ExtractError::DanglingEdge { .. })));
        assert!(matches!(parse_ir("op x @0"), Err(ExtractError::Syntax { line: 1, .. })));
    }

    #[test]
    fn library_parsing() {
        let l = lib();
        assert_eq!(l.entries["imul"].delay, 3);
        assert_eq!(l.entries["ialu"].energy.expectation(), 38.0 * 0.2 + 41.0 * 0.6 + 45.0 * 0.2);
        assert!(parse_fu_library("fu x delay=0 energy={1:1}").is_err());
        assert!(parse_fu_library("fu x energy={1:1}").is_err());
        assert!(matches!(
            parse_fu_library("fu x delay=1 energy={1:1}\nfu x delay=1 energy={1:1}"),
            Err(ExtractError::DuplicateUnit { .. })
        ));
    }

    #[test]
    fn same_step_ops_form_an_and_group() {
        let ir = parse_ir("block B\n op ialu @0\n op ialu @0\n op imul @1\n").unwrap();
        let g = extract_flow(&ir, &lib()).unwrap();
        let FlowNode::Sequence(steps) = &g.flows["B"] else { panic!() };
        assert_eq!(steps.len(), 2);
        assert!(matches!(&steps[0], FlowNode::And(cs) if cs.len() == 2));
        let FlowNode::Task(mul) = &steps[1] else { panic!() };
        assert_eq!((mul.label.as_str(), mul.cycles), ("imul", 3));
        assert_eq!(mul.time, Pmf::delta(3.0, Unit::Cycles).unwrap());
        assert_eq!(mul.power.unit(), Unit::Microwatts);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn profile_counts_become_branch_probabilities() {
        let ir = parse_ir("block A\n op ialu @0\n succ B:30 C:70\nblock B\n op ld @0\nblock C\n op ld @0\n").unwrap();
        let g = extract_flow(&ir, &lib()).unwrap();
        assert_eq!(g.entry, "A.path");
        let FlowNode::Sequence(path) = &g.flows["A.path"] else { panic!() };
        let FlowNode::Branch(arms) = &path[1] else { panic!() };
        assert_eq!(arms.iter().map(|a| a.0).collect::<Vec<_>>(), vec![0.3, 0.7]);
        assert_eq!(arms[0].1, FlowNode::Subflow("B.path".into()));
    }

    #[test]
    fn single_op_program() {
        let g = extract_flow(&parse_ir("block only\n op ld @4\n").unwrap(), &lib()).unwrap();
        let flat = g.flatten().unwrap();
        assert_eq!(flat.tasks().len(), 1);
    }

    #[test]
    fn extraction_errors() {
        let ir = parse_ir("block A\n op fpu @0\n").unwrap();
        assert_eq!(extract_flow(&ir, &lib()), Err(ExtractError::MissingUnit("fpu".into())));
        let ir = parse_ir("block A\n op ld @0\n succ B:0 C:0\nblock B\n op ld @0\nblock C\n op ld @0").unwrap();
        assert_eq!(extract_flow(&ir, &lib()), Err(ExtractError::ZeroBranchCount("A".into())));
        let ir = parse_ir("block A\n op ld @0\n succ B:1\nblock B\n op ld @0\n succ A:1").unwrap();
        assert!(matches!(extract_flow(&ir, &lib()), Err(ExtractError::Cycle(_))));
    }

    #[test]
    fn transition_weights() {
        assert_eq!(transition_probabilities(Arrangement::Sequential, 3).unwrap(), 1.0 / 3.0);
        assert_eq!(transition_probabilities(Arrangement::Concurrent, 3).unwrap(), 1.0);
        assert_eq!(transition_probabilities(Arrangement::Sequential, 1).unwrap(), 1.0);
        assert_eq!(transition_probabilities(Arrangement::Sequential, 0), Err(ExtractError::InvalidCount));
    }
}
