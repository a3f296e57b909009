//! Monte Carlo simulation of a flow graph.
//!
//! Trials are split into chunks of [`TRIAL_CHUNK`]. Chunk `k` draws from a
//! ChaCha8 generator seeded with the run seed and switched to stream `k`, so
//! results depend only on the seed and trial count, never on how many
//! worker threads run the chunks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{key, mean_of, naive_time_distribution, OracleError};
use crate::flowgraph::{FlowGraph, FlowNode};
use crate::pmf::{Pmf, Unit};

pub const TRIAL_CHUNK: u64 = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub empirical_time: Pmf,
    pub empirical_power: Pmf,
    pub trials: u64,
    pub seed: u64,
}

/// Inverse-CDF sampler over a finite support.
#[derive(Debug)]
struct Sampler {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(pmf: &Pmf) -> Self {
        let mut acc = 0.0;
        let (values, cumulative) = pmf
            .points()
            .iter()
            .map(|&(v, p)| {
                acc += p;
                (v, acc)
            })
            .unzip();
        Sampler { values, cumulative }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.values.len() - 1);
        self.values[i]
    }
}

#[derive(Debug)]
enum SimNode {
    Task { time: Sampler, power: Sampler },
    Sequence { children: Vec<SimNode>, weights: Vec<f64> },
    And(Vec<SimNode>),
    Race(Vec<SimNode>),
    Branch { cumulative: Vec<f64>, arms: Vec<SimNode> },
}

impl SimNode {
    fn build(node: &FlowNode) -> Result<SimNode, OracleError> {
        let all = |cs: &[FlowNode]| cs.iter().map(SimNode::build).collect::<Result<Vec<_>, _>>();
        Ok(match node {
            FlowNode::Task(t) => SimNode::Task { time: Sampler::new(&t.time), power: Sampler::new(&t.power) },
            FlowNode::Subflow(name) => return Err(OracleError::SubflowRef(name.clone())),
            FlowNode::Sequence(cs) => {
                let means: Vec<f64> =
                    cs.iter().map(|c| Ok(mean_of(&naive_time_distribution(c)?))).collect::<Result<_, OracleError>>()?;
                let total: f64 = means.iter().sum();
                if total <= 0.0 {
                    return Err(OracleError::ZeroDuration);
                }
                SimNode::Sequence { children: all(cs)?, weights: means.iter().map(|m| m / total).collect() }
            }
            FlowNode::And(cs) => SimNode::And(all(cs)?),
            FlowNode::Race(cs) => SimNode::Race(all(cs)?),
            FlowNode::Branch(arms) => {
                let mut acc = 0.0;
                let cumulative = arms
                    .iter()
                    .map(|(p, _)| {
                        acc += p;
                        acc
                    })
                    .collect();
                let arms = arms.iter().map(|(_, c)| SimNode::build(c)).collect::<Result<_, _>>()?;
                SimNode::Branch { cumulative, arms }
            }
        })
    }

    /// One realized (time, power).
    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self {
            SimNode::Task { time, power } => {
                let t = time.draw(rng);
                (t, power.draw(rng))
            }
            SimNode::Sequence { children, weights } => {
                let mut time = 0.0;
                let mut power = 0.0;
                for (c, w) in children.iter().zip(weights) {
                    let (t, p) = c.sample(rng);
                    time += t;
                    power += p * w;
                }
                (time, power)
            }
            SimNode::And(children) => {
                let mut time = f64::NEG_INFINITY;
                let mut power = 0.0;
                for c in children {
                    let (t, p) = c.sample(rng);
                    time = time.max(t);
                    power += p;
                }
                (time, power)
            }
            SimNode::Race(children) => {
                let draws: Vec<(f64, f64)> = children.iter().map(|c| c.sample(rng)).collect();
                let first = draws.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
                let winners: Vec<f64> = draws.iter().filter(|d| d.0 == first).map(|d| d.1).collect();
                let pick = if winners.len() == 1 { 0 } else { rng.random_range(0..winners.len()) };
                (first, winners[pick])
            }
            SimNode::Branch { cumulative, arms } => {
                let u: f64 = rng.random();
                let i = cumulative.partition_point(|&c| c <= u).min(arms.len() - 1);
                arms[i].sample(rng)
            }
        }
    }
}

/// Samples the flattened graph `trials` times.
pub fn monte_carlo(g: &FlowGraph, trials: u64, seed: u64) -> Result<SimResult, OracleError> {
    if trials == 0 {
        return Err(OracleError::NoTrials);
    }
    let root = SimNode::build(&g.flatten()?)?;
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let samples: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let n = TRIAL_CHUNK.min(trials - k * TRIAL_CHUNK);
            (0..n).map(|_| root.sample(&mut rng)).collect()
        })
        .collect();

    let mut time_counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut power_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for &(t, p) in samples.iter().flatten() {
        *time_counts.entry(key(t)).or_insert(0) += 1;
        *power_counts.entry(key(p)).or_insert(0) += 1;
    }
    let empirical = |counts: BTreeMap<u64, u64>, unit| {
        Pmf::new(counts.into_iter().map(|(v, c)| (f64::from_bits(v), c as f64 / trials as f64)), unit)
    };
    Ok(SimResult {
        empirical_time: empirical(time_counts, Unit::Cycles)?,
        empirical_power: empirical(power_counts, Unit::Microwatts)?,
        trials,
        seed,
    })
}

/// Whether the empirical mean lies within four standard errors of the
/// analytical mean.
pub fn within_standard_errors(analytical: &Pmf, empirical: &Pmf, trials: u64) -> bool {
    let bound = 4.0 * analytical.std_dev() / (trials as f64).sqrt() + 1e-9;
    (analytical.expectation() - empirical.expectation()).abs() <= bound
}
