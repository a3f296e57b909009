//! Analytical execution-time and power estimation for stochastic task
//! graphs, with energy-aware voltage assignment and multiprocessor
//! scheduling under soft real-time deadlines.
//!
//! The pipeline is:
//!
//! 1. [`extractor`] turns a scheduled block-level IR plus a functional-unit
//!    energy library into a [`flowgraph::FlowGraph`].
//! 2. [`analysis`] composes per-task time and power distributions
//!    ([`pmf::Pmf`]) through the graph's sequence / AND / branch / race
//!    structure.
//! 3. [`scheduler`] searches voltage assignments and builds multiprocessor
//!    schedules that meet a deadline with a required confidence.
//! 4. [`oracle`] holds independent checkers (exhaustive enumeration, Monte
//!    Carlo, brute-force search) used by the test suites and `verify`.

pub mod analysis;
pub mod extractor;
pub mod flowgraph;
pub mod lexer;
pub mod oracle;
pub mod pmf;
pub mod scheduler;

pub use analysis::{analyze, AnalysisOptions, AnalysisReport};
pub use flowgraph::{FlowGraph, FlowNode, TaskNode};
pub use pmf::{Pmf, Unit};
