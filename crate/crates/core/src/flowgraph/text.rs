//! Flow-file reader and canonical writer.
//!
//! ```text
//! flowgraph entry=main deadline=966 confidence=0.95
//! flow main {
//!   seq {
//!     task t1 time={10:0.5, 12:0.5} power={40:1.0} cycles=10 scalable
//!     and { task t2 time={5:1} power={30:1} cycles=5  sub helper }
//!     branch { 0.3: task t4 ...  0.7: task t5 ... }
//!     race { ... }
//!   }
//! }
//! flow helper { task h1 time={3:1.0} power={20:1.0} cycles=3 }
//! ```
//!
//! A flow body holding several nodes is read as an implicit `seq`. The
//! header line is optional; without it the entry is `main`, or the only flow
//! when there is just one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{FlowError, FlowGraph, FlowNode, TaskNode};
use crate::lexer::{is_identifier, Cursor, LexError, TokenKind};
use crate::pmf::{Pmf, Unit, PROBABILITY_TOLERANCE};

impl From<LexError> for FlowError {
    fn from(e: LexError) -> Self {
        FlowError::Syntax { line: e.line, col: e.col, message: e.message }
    }
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> FlowError {
    FlowError::Syntax { line, col, message: message.into() }
}

pub fn parse_flow_file(text: &str) -> Result<FlowGraph, FlowError> {
    let mut cur = Cursor::new(text)?;
    let mut entry = None;
    let mut deadline = None;
    let mut confidence = None;

    if cur.peek_is_ident("flowgraph") {
        cur.advance();
        while let Some(TokenKind::Ident(key)) = cur.peek().map(|t| t.kind.clone()) {
            if key == "flow" {
                break;
            }
            let (line, col) = cur.here();
            cur.advance();
            cur.expect(TokenKind::Eq)?;
            match key.as_str() {
                "entry" => entry = Some(cur.expect_ident()?.0),
                "deadline" => deadline = Some(cur.expect_number()?.0),
                "confidence" => confidence = Some(cur.expect_number()?.0),
                other => return Err(syntax(line, col, format!("unknown flowgraph attribute `{other}`"))),
            }
        }
    }

    let mut flows = BTreeMap::new();
    while !cur.is_done() {
        cur.expect_keyword("flow")?;
        let (name, line, _) = cur.expect_ident()?;
        let body = parse_block_body(&mut cur)?;
        let root = if body.len() == 1 { body.into_iter().next().unwrap() } else { FlowNode::Sequence(body) };
        if flows.insert(name.clone(), root).is_some() {
            return Err(FlowError::DuplicateFlow { name, line });
        }
    }

    let entry = match entry {
        Some(e) => e,
        None if flows.contains_key("main") || flows.len() != 1 => "main".to_string(),
        None => flows.keys().next().unwrap().clone(),
    };
    let graph = FlowGraph { flows, entry, deadline, confidence };
    for (name, root) in &graph.flows {
        if let Some(missing) = first_unresolved(&graph, root) {
            return Err(FlowError::UnresolvedSubflow { name: missing, path: name.clone() });
        }
    }
    graph.ensure_valid()?;
    Ok(graph)
}

fn first_unresolved(graph: &FlowGraph, node: &FlowNode) -> Option<String> {
    match node {
        FlowNode::Subflow(name) if !graph.flows.contains_key(name) => Some(name.clone()),
        FlowNode::Subflow(_) | FlowNode::Task(_) => None,
        FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => {
            cs.iter().find_map(|c| first_unresolved(graph, c))
        }
        FlowNode::Branch(arms) => arms.iter().find_map(|(_, c)| first_unresolved(graph, c)),
    }
}

/// `{ node* }`
fn parse_block_body(cur: &mut Cursor) -> Result<Vec<FlowNode>, FlowError> {
    let (line, col) = cur.here();
    cur.expect(TokenKind::LBrace)?;
    let mut nodes = Vec::new();
    while !cur.peek_is(&TokenKind::RBrace) {
        if cur.is_done() {
            return Err(syntax(line, col, "unclosed `{`"));
        }
        nodes.push(parse_node(cur)?);
    }
    cur.advance();
    if nodes.is_empty() {
        return Err(syntax(line, col, "empty block"));
    }
    Ok(nodes)
}

fn parse_node(cur: &mut Cursor) -> Result<FlowNode, FlowError> {
    let (keyword, line, col) = cur.expect_ident()?;
    match keyword.as_str() {
        "task" => parse_task(cur).map(FlowNode::Task),
        "seq" => Ok(FlowNode::Sequence(parse_block_body(cur)?)),
        "and" => Ok(FlowNode::And(parse_block_body(cur)?)),
        "race" => Ok(FlowNode::Race(parse_block_body(cur)?)),
        "sub" => Ok(FlowNode::Subflow(cur.expect_ident()?.0)),
        "branch" => {
            cur.expect(TokenKind::LBrace)?;
            let mut arms = Vec::new();
            while !cur.peek_is(&TokenKind::RBrace) {
                let (arm_line, arm_col) = cur.here();
                let (p, _) = cur.expect_number()?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(syntax(arm_line, arm_col, format!("branch probability {p} outside [0, 1]")));
                }
                cur.expect(TokenKind::Colon)?;
                arms.push((p, parse_node(cur)?));
            }
            cur.advance();
            if arms.is_empty() {
                return Err(syntax(line, col, "branch has no arms"));
            }
            let sum: f64 = arms.iter().map(|(p, _)| p).sum();
            if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                return Err(syntax(line, col, format!("branch probabilities sum to {sum}")));
            }
            Ok(FlowNode::Branch(arms))
        }
        other => Err(syntax(line, col, format!("expected a node keyword, found `{other}`"))),
    }
}

fn parse_task(cur: &mut Cursor) -> Result<TaskNode, FlowError> {
    let (id, line, col) = cur.expect_ident()?;
    let mut label = None;
    let mut time = None;
    let mut power = None;
    let mut cycles = None;
    let mut scalable = false;
    loop {
        let is_attr = |k: &str| matches!(k, "time" | "power" | "cycles" | "label");
        let key = match cur.peek().map(|t| &t.kind) {
            Some(TokenKind::Ident(k)) if k == "scalable" => {
                cur.advance();
                scalable = true;
                continue;
            }
            Some(TokenKind::Ident(k)) if is_attr(k) && cur.peek_nth(1).is_some_and(|t| t.kind == TokenKind::Eq) => {
                k.clone()
            }
            _ => break,
        };
        let (kline, kcol) = cur.here();
        cur.advance();
        cur.advance();
        let pmf_at = |cur: &mut Cursor, unit| -> Result<Pmf, FlowError> {
            let (pl, pc) = cur.here();
            let points = cur.expect_pmf_points()?;
            Pmf::new(points, unit).map_err(|e| syntax(pl, pc, e.to_string()))
        };
        let duplicate = match key.as_str() {
            "time" => time.replace(pmf_at(cur, Unit::Cycles)?).is_some(),
            "power" => power.replace(pmf_at(cur, Unit::Microwatts)?).is_some(),
            "cycles" => cycles.replace(cur.expect_uint()?).is_some(),
            "label" => match cur.advance() {
                Some(t) => match t.kind {
                    TokenKind::Str(s) => label.replace(s).is_some(),
                    other => return Err(syntax(t.line, t.col, format!("expected string, found {other}"))),
                },
                None => return Err(cur.error("expected string, found end of input").into()),
            },
            _ => unreachable!(),
        };
        if duplicate {
            return Err(syntax(kline, kcol, format!("duplicate attribute `{key}`")));
        }
    }
    let missing = |what: &str| syntax(line, col, format!("task `{id}` is missing `{what}`"));
    Ok(TaskNode {
        label: label.unwrap_or_else(|| id.clone()),
        time: time.ok_or_else(|| missing("time"))?,
        power: power.ok_or_else(|| missing("power"))?,
        cycles: cycles.ok_or_else(|| missing("cycles"))?,
        scalable,
        id,
    })
}

/// Canonical text: flows in name order, two-space indentation, numbers in
/// their shortest round-trip decimal form.
pub fn serialize_flow_file(g: &FlowGraph) -> Result<String, FlowError> {
    g.ensure_valid()?;
    for (name, root) in &g.flows {
        check_names(name, root)?;
    }
    let mut out = String::new();
    write!(out, "flowgraph entry={}", g.entry).unwrap();
    if let Some(d) = g.deadline {
        write!(out, " deadline={d}").unwrap();
    }
    if let Some(c) = g.confidence {
        write!(out, " confidence={c}").unwrap();
    }
    out.push('\n');
    for (name, root) in &g.flows {
        writeln!(out, "flow {name} {{").unwrap();
        write_node(&mut out, root, 1);
        out.push_str("}\n");
    }
    Ok(out)
}

fn check_names(flow: &str, node: &FlowNode) -> Result<(), FlowError> {
    let bad = |what: &str, name: &str| {
        Err(FlowError::Invalid(vec![super::Diagnostic {
            path: flow.to_string(),
            message: format!("{what} `{name}` is not a valid identifier"),
        }]))
    };
    if !is_identifier(flow) {
        return bad("flow name", flow);
    }
    match node {
        FlowNode::Task(t) if !is_identifier(&t.id) => bad("task id", &t.id),
        FlowNode::Subflow(s) if !is_identifier(s) => bad("subflow name", s),
        FlowNode::Task(_) | FlowNode::Subflow(_) => Ok(()),
        FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => {
            cs.iter().try_for_each(|c| check_names(flow, c))
        }
        FlowNode::Branch(arms) => arms.iter().try_for_each(|(_, c)| check_names(flow, c)),
    }
}

fn write_node(out: &mut String, node: &FlowNode, depth: usize) {
    out.push_str(&"  ".repeat(depth));
    write_node_inline(out, node, depth);
}

fn write_node_inline(out: &mut String, node: &FlowNode, depth: usize) {
    match node {
        FlowNode::Task(t) => {
            write!(out, "task {}", t.id).unwrap();
            if t.label != t.id {
                let escaped = t.label.replace('\\', "\\\\").replace('"', "\\\"");
                write!(out, " label=\"{escaped}\"").unwrap();
            }
            write!(out, " time={} power={} cycles={}", t.time, t.power, t.cycles).unwrap();
            if t.scalable {
                out.push_str(" scalable");
            }
            out.push('\n');
        }
        FlowNode::Subflow(name) => writeln!(out, "sub {name}").unwrap(),
        FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => {
            writeln!(out, "{} {{", node.kind_name()).unwrap();
            for c in cs {
                write_node(out, c, depth + 1);
            }
            out.push_str(&"  ".repeat(depth));
            out.push_str("}\n");
        }
        FlowNode::Branch(arms) => {
            out.push_str("branch {\n");
            for (p, c) in arms {
                write!(out, "{}{p}: ", "  ".repeat(depth + 1)).unwrap();
                write_node_inline(out, c, depth + 1);
            }
            out.push_str(&"  ".repeat(depth));
            out.push_str("}\n");
        }
    }
}
