//! Discrete probability mass functions over nonnegative quantities.
//!
//! A [`Pmf`] is the value type every analysis step produces and consumes:
//! execution time in cycles, power in microwatts, or energy in
//! microwatt-cycles. Independent random variables are combined with
//! [`Pmf::convolve_sum`] (X + Y), [`Pmf::max_of`] (max(X, Y)),
//! [`Pmf::min_of`] (min(X, Y)) and [`Pmf::mixture`] (probabilistic choice).
//!
//! Values are kept strictly increasing. Two values closer than
//! [`VALUE_TOLERANCE`] (relative, with an absolute floor) are considered the
//! same support point, so sums computed in different orders land on one
//! point instead of two nearly-identical neighbours.

use std::fmt;

use thiserror::Error;

use crate::lexer::{Cursor, LexError};

/// Default upper bound on the number of support points kept after a
/// composition step.
pub const DEFAULT_SUPPORT_CAP: usize = 1024;

/// Probabilities must sum to one within this tolerance.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Relative distance below which two support values are merged.
pub const VALUE_TOLERANCE: f64 = 1e-12;

/// Total mass is only rescaled when it is further than this from one, which
/// keeps already-normalized inputs bit-for-bit unchanged.
const RESCALE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    Cycles,
    Microwatts,
    MicrowattCycles,
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Cycles => "cycles",
            Unit::Microwatts => "uW",
            Unit::MicrowattCycles => "uW*cycles",
            Unit::Dimensionless => "dimensionless",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PmfError {
    #[error("all probabilities are zero")]
    ZeroMass,
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error("probability {0} is not finite")]
    NonFiniteProbability(f64),
    #[error("value {0} is negative or not finite")]
    InvalidValue(f64),
    #[error("unit mismatch: {0} vs {1}")]
    UnitMismatch(Unit, Unit),
    #[error("mixture weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("mixture of zero components")]
    EmptyMixture,
    #[error("scale factor {0} must be positive and finite")]
    InvalidScale(f64),
    #[error("rebin target {0} must be at least 2")]
    InvalidBinCount(usize),
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
}

impl From<LexError> for PmfError {
    fn from(e: LexError) -> Self {
        PmfError::Syntax { line: e.line, col: e.col, message: e.message }
    }
}

/// Whether two support values denote the same point.
pub fn values_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    points: Vec<(f64, f64)>,
    unit: Unit,
}

impl Pmf {
    /// Builds a normalized distribution from raw `(value, weight)` pairs.
    ///
    /// Weights need not sum to one; they are rescaled. Zero weights are
    /// dropped and duplicate values merged.
    pub fn new<I>(points: I, unit: Unit) -> Result<Self, PmfError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw: Vec<(f64, f64)> = Vec::new();
        for (value, prob) in points {
            if !prob.is_finite() {
                return Err(PmfError::NonFiniteProbability(prob));
            }
            if prob < 0.0 {
                return Err(PmfError::NegativeProbability(prob));
            }
            if !value.is_finite() || value < 0.0 {
                return Err(PmfError::InvalidValue(value));
            }
            raw.push((value, prob));
        }
        Self::from_checked(raw, unit)
    }

    /// Point mass at `value`.
    pub fn delta(value: f64, unit: Unit) -> Result<Self, PmfError> {
        Self::new([(value, 1.0)], unit)
    }

    // Points are known to be finite and nonnegative here.
    fn from_checked(mut raw: Vec<(f64, f64)>, unit: Unit) -> Result<Self, PmfError> {
        raw.retain(|&(_, p)| p > 0.0);
        if raw.is_empty() {
            return Err(PmfError::ZeroMass);
        }
        if !raw.windows(2).all(|w| w[0].0 < w[1].0) {
            raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (value, prob) in raw {
            match merged.last_mut() {
                Some(last) if values_equal(last.0, value) => last.1 += prob,
                _ => merged.push((value, prob)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > RESCALE_THRESHOLD {
            for point in &mut merged {
                point.1 /= total;
            }
        }
        Ok(Pmf { points: merged, unit })
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// `(value, probability)` pairs in strictly increasing value order.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(v, _)| v)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min_value(&self) -> f64 {
        self.points[0].0
    }

    pub fn max_value(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Same distribution under a different unit tag.
    pub fn with_unit(&self, unit: Unit) -> Pmf {
        Pmf { points: self.points.clone(), unit }
    }

    pub fn expectation(&self) -> f64 {
        self.points.iter().map(|&(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.expectation();
        let second: f64 = self.points.iter().map(|&(v, p)| v * v * p).sum();
        (second - mean * mean).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Value carrying the largest probability; ties go to the smallest value.
    pub fn most_probable(&self) -> f64 {
        let mut best = self.points[0];
        for &point in &self.points[1..] {
            if point.1 > best.1 {
                best = point;
            }
        }
        best.0
    }

    /// P(X <= x).
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x >= self.max_value() {
            return 1.0;
        }
        self.points.iter().take_while(|&&(v, _)| v <= x).fold(0.0, |acc, &(_, p)| acc + p)
    }

    fn check_unit(&self, other: &Pmf) -> Result<(), PmfError> {
        if self.unit != other.unit {
            return Err(PmfError::UnitMismatch(self.unit, other.unit));
        }
        Ok(())
    }

    /// Distribution of X + Y for independent X ~ self, Y ~ other, rebinned to
    /// [`DEFAULT_SUPPORT_CAP`] points.
    pub fn convolve_sum(&self, other: &Pmf) -> Result<Pmf, PmfError> {
        self.convolve_sum_capped(other, DEFAULT_SUPPORT_CAP)
    }

    pub fn convolve_sum_capped(&self, other: &Pmf, cap: usize) -> Result<Pmf, PmfError> {
        self.check_unit(other)?;
        let mut raw = Vec::with_capacity(self.len() * other.len());
        for &(a, pa) in &self.points {
            for &(b, pb) in &other.points {
                raw.push((a + b, pa * pb));
            }
        }
        Self::from_checked(raw, self.unit)?.rebin(cap)
    }

    /// Merged support of two distributions with each side's CDF evaluated at
    /// every support point.
    fn aligned_cdfs(&self, other: &Pmf) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut grid: Vec<f64> = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let next = match (self.points.get(i), other.points.get(j)) {
                (Some(a), Some(b)) if a.0 <= b.0 => a.0,
                (Some(_), Some(b)) => b.0,
                (Some(a), None) => a.0,
                (None, Some(b)) => b.0,
                (None, None) => unreachable!(),
            };
            match grid.last() {
                Some(&last) if values_equal(last, next) => {}
                _ => grid.push(next),
            }
            if self.points.get(i).is_some_and(|a| values_equal(a.0, next) || a.0 < next) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let cdf_on_grid = |pmf: &Pmf| {
            let mut out = Vec::with_capacity(grid.len());
            let mut k = 0;
            let mut acc = 0.0;
            for &g in &grid {
                while k < pmf.len() && (pmf.points[k].0 <= g || values_equal(pmf.points[k].0, g)) {
                    acc += pmf.points[k].1;
                    k += 1;
                }
                out.push(acc);
            }
            out
        };
        let fa = cdf_on_grid(self);
        let fb = cdf_on_grid(other);
        (grid, fa, fb)
    }

    /// Distribution of max(X, Y) for independent X ~ self, Y ~ other.
    pub fn max_of(&self, other: &Pmf) -> Result<Pmf, PmfError> {
        self.check_unit(other)?;
        let (grid, fa, fb) = self.aligned_cdfs(other);
        let mut prev = 0.0;
        let mut raw = Vec::with_capacity(grid.len());
        for (k, &g) in grid.iter().enumerate() {
            let joint = fa[k] * fb[k];
            raw.push((g, joint - prev));
            prev = joint;
        }
        Self::from_checked(raw, self.unit)
    }

    /// Distribution of min(X, Y) for independent X ~ self, Y ~ other.
    pub fn min_of(&self, other: &Pmf) -> Result<Pmf, PmfError> {
        self.check_unit(other)?;
        let (grid, _, _) = self.aligned_cdfs(other);
        // Survival functions from suffix sums: monotone without cancellation.
        let survival = |pmf: &Pmf| {
            let mut out = vec![0.0; grid.len()];
            let mut k = pmf.len();
            let mut acc = 0.0;
            for idx in (0..grid.len()).rev() {
                let g = grid[idx];
                while k > 0 && pmf.points[k - 1].0 > g && !values_equal(pmf.points[k - 1].0, g) {
                    acc += pmf.points[k - 1].1;
                    k -= 1;
                }
                out[idx] = acc;
            }
            out
        };
        let sa = survival(self);
        let sb = survival(other);
        let mut prev = 1.0;
        let mut raw = Vec::with_capacity(grid.len());
        for (k, &g) in grid.iter().enumerate() {
            let joint = sa[k] * sb[k];
            raw.push((g, prev - joint));
            prev = joint;
        }
        Self::from_checked(raw, self.unit)
    }

    /// Probabilistic choice: component `k` is taken with probability `w_k`.
    pub fn mixture(components: &[(f64, &Pmf)]) -> Result<Pmf, PmfError> {
        let (_, first) = components.first().ok_or(PmfError::EmptyMixture)?;
        let unit = first.unit;
        let mut total = 0.0;
        let mut raw = Vec::new();
        for &(weight, pmf) in components {
            if !weight.is_finite() {
                return Err(PmfError::NonFiniteProbability(weight));
            }
            if weight < 0.0 {
                return Err(PmfError::NegativeProbability(weight));
            }
            if pmf.unit != unit {
                return Err(PmfError::UnitMismatch(unit, pmf.unit));
            }
            total += weight;
            raw.extend(pmf.points.iter().map(|&(v, p)| (v, weight * p)));
        }
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(PmfError::WeightsNotNormalized(total));
        }
        Self::from_checked(raw, unit)
    }

    /// Multiplies every value by `factor`.
    pub fn scale(&self, factor: f64) -> Result<Pmf, PmfError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(PmfError::InvalidScale(factor));
        }
        let raw = self.points.iter().map(|&(v, p)| (v * factor, p)).collect();
        Self::from_checked(raw, self.unit)
    }

    /// Reduces the support to at most `max_points` equal-width bins over
    /// `[min, max]`, each represented by its probability-weighted mean. Total
    /// mass and expectation are preserved.
    pub fn rebin(&self, max_points: usize) -> Result<Pmf, PmfError> {
        if max_points < 2 {
            return Err(PmfError::InvalidBinCount(max_points));
        }
        if self.len() <= max_points {
            return Ok(self.clone());
        }
        let lo = self.min_value();
        let width = (self.max_value() - lo) / max_points as f64;
        let mut mass = vec![0.0; max_points];
        let mut moment = vec![0.0; max_points];
        for &(v, p) in &self.points {
            let bin = (((v - lo) / width).floor() as usize).min(max_points - 1);
            mass[bin] += p;
            moment[bin] += v * p;
        }
        let raw = mass.iter().zip(&moment).filter(|(&m, _)| m > 0.0).map(|(&m, &mv)| (mv / m, m)).collect();
        Self::from_checked(raw, self.unit)
    }

    /// Parses the `{ v1:p1, v2:p2, ... }` literal syntax.
    pub fn parse_literal(text: &str, unit: Unit) -> Result<Pmf, PmfError> {
        let mut cursor = Cursor::new(text)?;
        let points = cursor.expect_pmf_points()?;
        if !cursor.is_done() {
            return Err(cursor.error("trailing input after distribution literal").into());
        }
        Pmf::new(points, unit)
    }

    /// `value,probability` table with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,probability\n");
        for &(v, p) in &self.points {
            out.push_str(&format!("{v},{p}\n"));
        }
        out
    }
}

/// Literal syntax; the shortest decimal that round-trips each `f64` is used,
/// so `Pmf::parse_literal(&p.to_string(), unit) == p`.
impl fmt::Display for Pmf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, p)) in self.points.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}:{p}")?;
        }
        f.write_str("}")
    }
}

/// Edge weight `p * z^X`: the probability of traversing a path together with
/// the distribution of the cost it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmittance {
    path_prob: f64,
    dist: Pmf,
}

impl Transmittance {
    pub fn new(path_prob: f64, dist: Pmf) -> Result<Self, PmfError> {
        if !(path_prob > 0.0 && path_prob <= 1.0) {
            return Err(PmfError::NegativeProbability(path_prob));
        }
        Ok(Transmittance { path_prob, dist })
    }

    pub fn path_prob(&self) -> f64 {
        self.path_prob
    }

    pub fn dist(&self) -> &Pmf {
        &self.dist
    }

    /// The derivative of the transmittance at z = 1: `p * E[X]`.
    pub fn expected_contribution(&self) -> f64 {
        self.path_prob * self.dist.expectation()
    }

    /// Cost distribution when the path is skipped with probability `1 - p`
    /// (contributing zero).
    pub fn effective(&self) -> Result<Pmf, PmfError> {
        if self.path_prob >= 1.0 {
            return Ok(self.dist.clone());
        }
        let zero = Pmf::delta(0.0, self.dist.unit)?;
        Pmf::mixture(&[(self.path_prob, &self.dist), (1.0 - self.path_prob, &zero)])
    }
}
