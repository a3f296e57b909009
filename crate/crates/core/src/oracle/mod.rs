//! Independent checkers for the analytical path: exact enumeration of every
//! joint outcome, Monte Carlo simulation, and brute-force searches over
//! voltage assignments and processor counts.
//!
//! Nothing here reuses the composition or search code it checks. The
//! distributions are recombined from realized outcomes, and the searches
//! walk their spaces with plain nested recursion.
//!
//! Two modelling rules are shared with the analytical path by definition
//! rather than by code: a sequence's power averages its children weighted
//! by their expected durations, and on a race tie the finishers split the
//! win equally.

mod search;
mod simulate;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::flowgraph::{FlowError, FlowNode};
use crate::pmf::{Pmf, PmfError, Unit};

pub use search::{brute_force_min_processors, brute_force_voltage};
pub use simulate::{monte_carlo, within_standard_errors, SimResult, TRIAL_CHUNK};

/// Largest number of joint outcomes [`enumerate_exact`] will walk.
pub const OUTCOME_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{count} joint outcomes exceed the enumeration cap of {cap}")]
    TooManyOutcomes { count: u128, cap: u128 },
    #[error("unflattened subflow reference `{0}`")]
    SubflowRef(String),
    #[error("sequence has zero total expected duration")]
    ZeroDuration,
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

/// Upper bound on the number of joint outcomes: the product of every task's
/// time and power support sizes and every branch's arity.
pub fn outcome_count(node: &FlowNode) -> u128 {
    let product = |it: &mut dyn Iterator<Item = u128>| it.fold(1u128, |acc, x| acc.saturating_mul(x));
    match node {
        FlowNode::Task(t) => (t.time.len() as u128).saturating_mul(t.power.len() as u128),
        FlowNode::Sequence(cs) | FlowNode::And(cs) | FlowNode::Race(cs) => product(&mut cs.iter().map(outcome_count)),
        FlowNode::Branch(arms) => {
            (arms.len() as u128).saturating_mul(product(&mut arms.iter().map(|(_, c)| outcome_count(c))))
        }
        FlowNode::Subflow(_) => 1,
    }
}

/// One realized execution: its probability, duration and power.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    prob: f64,
    time: f64,
    power: f64,
}

/// Exact time and power distributions of a flattened tree, by walking every
/// combination of branch choices and support values.
pub fn enumerate_exact(root: &FlowNode) -> Result<(Pmf, Pmf), OracleError> {
    let count = outcome_count(root);
    if count > OUTCOME_CAP {
        return Err(OracleError::TooManyOutcomes { count, cap: OUTCOME_CAP });
    }
    let outcomes = outcomes(root)?;
    let time = Pmf::new(outcomes.iter().map(|o| (o.time, o.prob)), Unit::Cycles)?;
    let power = Pmf::new(outcomes.iter().map(|o| (o.power, o.prob)), Unit::Microwatts)?;
    Ok((time, power))
}

fn outcomes(node: &FlowNode) -> Result<Vec<Outcome>, OracleError> {
    match node {
        FlowNode::Task(t) => Ok(t
            .time
            .points()
            .iter()
            .flat_map(|&(tv, tp)| {
                t.power.points().iter().map(move |&(pv, pp)| Outcome { prob: tp * pp, time: tv, power: pv })
            })
            .collect()),
        FlowNode::Subflow(name) => Err(OracleError::SubflowRef(name.clone())),
        FlowNode::Branch(arms) => {
            let mut out = Vec::new();
            for (p, c) in arms {
                out.extend(outcomes(c)?.into_iter().map(|o| Outcome { prob: o.prob * p, ..o }));
            }
            Ok(out)
        }
        FlowNode::Sequence(cs) => {
            let parts: Vec<Vec<Outcome>> = cs.iter().map(outcomes).collect::<Result<_, _>>()?;
            let means: Vec<f64> = parts.iter().map(|os| os.iter().map(|o| o.prob * o.time).sum()).collect();
            let total: f64 = means.iter().sum();
            if total <= 0.0 {
                return Err(OracleError::ZeroDuration);
            }
            let weights: Vec<f64> = means.iter().map(|m| m / total).collect();
            Ok(product(&parts, |picked| Outcome {
                prob: picked.iter().map(|o| o.prob).product(),
                time: picked.iter().map(|o| o.time).sum(),
                power: picked.iter().zip(&weights).map(|(o, w)| o.power * w).sum(),
            }))
        }
        FlowNode::And(cs) => {
            let parts: Vec<Vec<Outcome>> = cs.iter().map(outcomes).collect::<Result<_, _>>()?;
            Ok(product(&parts, |picked| Outcome {
                prob: picked.iter().map(|o| o.prob).product(),
                time: picked.iter().map(|o| o.time).fold(f64::NEG_INFINITY, f64::max),
                power: picked.iter().map(|o| o.power).sum(),
            }))
        }
        FlowNode::Race(cs) => {
            let parts: Vec<Vec<Outcome>> = cs.iter().map(outcomes).collect::<Result<_, _>>()?;
            let mut out = Vec::new();
            for_each_combination(&parts, &mut |picked| {
                let prob: f64 = picked.iter().map(|o| o.prob).product();
                let first = picked.iter().map(|o| o.time).fold(f64::INFINITY, f64::min);
                let winners: Vec<&Outcome> = picked.iter().filter(|o| o.time == first).copied().collect();
                let share = prob / winners.len() as f64;
                out.extend(winners.iter().map(|w| Outcome { prob: share, time: first, power: w.power }));
            });
            Ok(out)
        }
    }
}

fn product(parts: &[Vec<Outcome>], combine: impl Fn(&[&Outcome]) -> Outcome) -> Vec<Outcome> {
    let mut out = Vec::new();
    for_each_combination(parts, &mut |picked| out.push(combine(picked)));
    out
}

fn for_each_combination<'a>(parts: &'a [Vec<Outcome>], f: &mut dyn FnMut(&[&'a Outcome])) {
    fn go<'a>(parts: &'a [Vec<Outcome>], picked: &mut Vec<&'a Outcome>, f: &mut dyn FnMut(&[&'a Outcome])) {
        match parts.split_first() {
            None => f(picked),
            Some((head, rest)) => {
                for o in head {
                    picked.push(o);
                    go(rest, picked, f);
                    picked.pop();
                }
            }
        }
    }
    go(parts, &mut Vec::with_capacity(parts.len()), f);
}

/// Exact time distribution of a subtree, composed directly on value maps
/// without any support limit.
pub(crate) fn naive_time_distribution(node: &FlowNode) -> Result<BTreeMap<u64, f64>, OracleError> {
    fn pairwise(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>, op: fn(f64, f64) -> f64) -> BTreeMap<u64, f64> {
        let mut out = BTreeMap::new();
        for (&x, &px) in a {
            for (&y, &py) in b {
                let v = op(f64::from_bits(x), f64::from_bits(y));
                *out.entry(key(v)).or_insert(0.0) += px * py;
            }
        }
        out
    }
    let fold = |cs: &[FlowNode], op: fn(f64, f64) -> f64| -> Result<BTreeMap<u64, f64>, OracleError> {
        let mut acc: Option<BTreeMap<u64, f64>> = None;
        for c in cs {
            let d = naive_time_distribution(c)?;
            acc = Some(match acc {
                None => d,
                Some(a) => pairwise(&a, &d, op),
            });
        }
        Ok(acc.unwrap_or_default())
    };
    match node {
        FlowNode::Task(t) => Ok(t.time.points().iter().map(|&(v, p)| (key(v), p)).collect()),
        FlowNode::Subflow(name) => Err(OracleError::SubflowRef(name.clone())),
        FlowNode::Sequence(cs) => fold(cs, |x, y| x + y),
        FlowNode::And(cs) => fold(cs, f64::max),
        FlowNode::Race(cs) => fold(cs, f64::min),
        FlowNode::Branch(arms) => {
            let mut out = BTreeMap::new();
            for (p, c) in arms {
                for (v, q) in naive_time_distribution(c)? {
                    *out.entry(v).or_insert(0.0) += p * q;
                }
            }
            Ok(out)
        }
    }
}

/// Map key for a nonnegative value; `+0.0` and `-0.0` collapse.
fn key(v: f64) -> u64 {
    (v + 0.0).to_bits()
}

pub(crate) fn mean_of(dist: &BTreeMap<u64, f64>) -> f64 {
    dist.iter().map(|(&v, &p)| f64::from_bits(v) * p).sum()
}

/// Largest per-point gap between two distributions; infinite when their
/// supports differ in size.
pub fn max_point_deviation(a: &Pmf, b: &Pmf) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.points()
        .iter()
        .zip(b.points())
        .map(|(&(va, pa), &(vb, pb))| (va - vb).abs().max((pa - pb).abs()))
        .fold(0.0, f64::max)
}
