//! Analytical composition of time and power distributions over a flow tree.
//!
//! Time: a sequence adds child times (convolution), an AND group takes the
//! maximum, a race the minimum, and a branch mixes its arms.
//!
//! Power: an AND group adds child powers (concurrent units draw power
//! together); a branch mixes its arms; a sequence averages its children
//! weighted by expected duration, `sum_k P_k * E[t_k] / sum_j E[t_j]`, which
//! with equal durations is the plain `1/n` average; a race takes the power of
//! whichever arm finishes first, with simultaneous finishers sharing the
//! win equally.
//!
//! All task distributions are treated as independent. After every
//! composition step the support is capped at
//! [`AnalysisOptions::support_cap`] points.

use std::fmt::Write as _;

use thiserror::Error;

use crate::flowgraph::{FlowError, FlowGraph, FlowNode};
use crate::pmf::{values_equal, Pmf, PmfError, DEFAULT_SUPPORT_CAP};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Pmf(#[from] PmfError),
    #[error("unflattened subflow reference `{0}`")]
    SubflowRef(String),
    #[error("sequence has zero total expected duration")]
    ZeroDuration,
    #[error("profile counts are all zero")]
    ZeroCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub support_cap: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { support_cap: DEFAULT_SUPPORT_CAP }
    }
}

/// Time and power distribution of one subtree.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub time: Pmf,
    pub power: Pmf,
}

pub fn time_pmf(root: &FlowNode, opts: &AnalysisOptions) -> Result<Pmf, AnalysisError> {
    Ok(evaluate(root, opts)?.time)
}

pub fn power_pmf(root: &FlowNode, opts: &AnalysisOptions) -> Result<Pmf, AnalysisError> {
    Ok(evaluate(root, opts)?.power)
}

/// Computes both distributions of a flattened tree in one pass.
pub fn evaluate(node: &FlowNode, opts: &AnalysisOptions) -> Result<Composite, AnalysisError> {
    let cap = opts.support_cap;
    match node {
        FlowNode::Task(t) => Ok(Composite { time: t.time.rebin(cap)?, power: t.power.rebin(cap)? }),
        FlowNode::Subflow(name) => Err(AnalysisError::SubflowRef(name.clone())),
        FlowNode::Sequence(children) => {
            let parts = evaluate_all(children, opts)?;
            let durations: Vec<f64> = parts.iter().map(|c| c.time.expectation()).collect();
            let total: f64 = durations.iter().sum();
            if total <= 0.0 {
                return Err(AnalysisError::ZeroDuration);
            }
            let mut time = parts[0].time.clone();
            for part in &parts[1..] {
                time = time.convolve_sum_capped(&part.time, cap)?;
            }
            let mut power: Option<Pmf> = None;
            for (part, duration) in parts.iter().zip(&durations) {
                let weight = duration / total;
                if weight <= 0.0 {
                    continue;
                }
                let weighted = part.power.scale(weight)?;
                power = Some(match power {
                    None => weighted,
                    Some(acc) => acc.convolve_sum_capped(&weighted, cap)?,
                });
            }
            Ok(Composite { time, power: power.expect("positive total duration has a positive weight") })
        }
        FlowNode::And(children) => {
            let parts = evaluate_all(children, opts)?;
            let mut time = parts[0].time.clone();
            let mut power = parts[0].power.clone();
            for part in &parts[1..] {
                time = time.max_of(&part.time)?.rebin(cap)?;
                power = power.convolve_sum_capped(&part.power, cap)?;
            }
            Ok(Composite { time, power })
        }
        FlowNode::Race(children) => {
            let parts = evaluate_all(children, opts)?;
            let mut time = parts[0].time.clone();
            for part in &parts[1..] {
                time = time.min_of(&part.time)?.rebin(cap)?;
            }
            let times: Vec<&Pmf> = parts.iter().map(|c| &c.time).collect();
            let wins = race_win_probabilities(&times);
            let components: Vec<(f64, &Pmf)> = wins.iter().zip(&parts).map(|(&w, c)| (w, &c.power)).collect();
            let power = Pmf::mixture(&components)?.rebin(cap)?;
            Ok(Composite { time, power })
        }
        FlowNode::Branch(arms) => {
            let parts: Vec<(f64, Composite)> = arms
                .iter()
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, c)| Ok((*p, evaluate(c, opts)?)))
                .collect::<Result<_, AnalysisError>>()?;
            let total: f64 = parts.iter().map(|(p, _)| p).sum();
            let times: Vec<(f64, &Pmf)> = parts.iter().map(|(p, c)| (p / total, &c.time)).collect();
            let powers: Vec<(f64, &Pmf)> = parts.iter().map(|(p, c)| (p / total, &c.power)).collect();
            Ok(Composite { time: Pmf::mixture(&times)?.rebin(cap)?, power: Pmf::mixture(&powers)?.rebin(cap)? })
        }
    }
}

fn evaluate_all(children: &[FlowNode], opts: &AnalysisOptions) -> Result<Vec<Composite>, AnalysisError> {
    if children.is_empty() {
        return Err(FlowError::Invalid(vec![]).into());
    }
    children.iter().map(|c| evaluate(c, opts)).collect()
}

/// Probability that each independent racer finishes first. On a tie among
/// `m` racers each is credited `1/m`.
pub fn race_win_probabilities(times: &[&Pmf]) -> Vec<f64> {
    let n = times.len();
    let mut wins = vec![0.0; n];
    for (k, racer) in times.iter().enumerate() {
        for &(x, px) in racer.points() {
            // coeffs[m] = P(all others finish no earlier than x, exactly m tie at x)
            let mut coeffs = vec![1.0];
            for (j, other) in times.iter().enumerate() {
                if j == k {
                    continue;
                }
                let (later, equal) = split_at(other, x);
                let mut next = vec![0.0; coeffs.len() + 1];
                for (m, &c) in coeffs.iter().enumerate() {
                    next[m] += c * later;
                    next[m + 1] += c * equal;
                }
                coeffs = next;
            }
            let share: f64 = coeffs.iter().enumerate().map(|(m, c)| c / (m as f64 + 1.0)).sum();
            wins[k] += px * share;
        }
    }
    wins
}

/// (P(X > x), P(X = x)).
fn split_at(pmf: &Pmf, x: f64) -> (f64, f64) {
    let mut later = 0.0;
    let mut equal = 0.0;
    for &(v, p) in pmf.points().iter().rev() {
        if values_equal(v, x) {
            equal += p;
        } else if v > x {
            later += p;
        } else {
            break;
        }
    }
    (later, equal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub time: Pmf,
    pub power: Pmf,
    pub mean_time: f64,
    pub mean_power: f64,
    pub std_power: f64,
    pub most_probable_power: f64,
    pub deadline: Option<f64>,
    /// P(time <= deadline), present when a deadline is set.
    pub confidence_at_deadline: Option<f64>,
}

impl AnalysisReport {
    pub fn from_parts(time: Pmf, power: Pmf, deadline: Option<f64>) -> Self {
        AnalysisReport {
            mean_time: time.expectation(),
            mean_power: power.expectation(),
            std_power: power.std_dev(),
            most_probable_power: power.most_probable(),
            confidence_at_deadline: deadline.map(|d| time.cdf_at(d)),
            deadline,
            time,
            power,
        }
    }

    /// Flat `key = value` block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "mean_time = {}", self.mean_time).unwrap();
        writeln!(out, "std_time = {}", self.time.std_dev()).unwrap();
        writeln!(out, "mean_power = {}", self.mean_power).unwrap();
        writeln!(out, "std_power = {}", self.std_power).unwrap();
        writeln!(out, "most_probable_power = {}", self.most_probable_power).unwrap();
        writeln!(out, "time_support = {}", self.time.len()).unwrap();
        writeln!(out, "power_support = {}", self.power.len()).unwrap();
        if let (Some(d), Some(c)) = (self.deadline, self.confidence_at_deadline) {
            writeln!(out, "deadline = {d}").unwrap();
            writeln!(out, "confidence_at_deadline = {c}").unwrap();
        }
        out
    }
}

/// Flattens `g` and computes its full report.
pub fn analyze(g: &FlowGraph, opts: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    let root = g.flatten()?;
    let Composite { time, power } = evaluate(&root, opts)?;
    Ok(AnalysisReport::from_parts(time, power, g.deadline))
}

/// Branch probabilities from profile counts: `count_k / sum(counts)`.
pub fn branch_probs_from_profile(counts: &[u64]) -> Result<Vec<f64>, AnalysisError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(AnalysisError::ZeroCounts);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
