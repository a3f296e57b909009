//! `taskpower` command implementations.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 infeasible deadline,
//! 4 verification failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use taskpower_core::analysis::{analyze, evaluate, AnalysisOptions};
use taskpower_core::extractor::{extract_flow, parse_fu_library, parse_ir};
use taskpower_core::flowgraph::{parse_flow_file, serialize_flow_file, FlowGraph};
use taskpower_core::oracle::{
    enumerate_exact, max_point_deviation, monte_carlo, outcome_count, within_standard_errors, OUTCOME_CAP,
};
use taskpower_core::scheduler::{
    enumerate_assignments, multiproc_schedule, parse_levels, EnumerationOptions, MultiprocOptions, ScheduleError,
    VoltageLevel,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Per-point tolerance between the analytical and enumerated distributions.
pub const EXACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "taskpower", version, about = "Time and power distributions for stochastic task graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a flow file from a scheduled IR and a functional-unit library.
    Extract {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        fu: PathBuf,
        /// Flow file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the time and power distributions of a flow file.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Search voltage assignments that meet the deadline.
    Schedule {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        levels: PathBuf,
    },
    /// Schedule on the fewest processors that meet the deadline.
    Multiproc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        levels: PathBuf,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
        max_procs: u32,
    },
    /// Cross-check the analysis against enumeration and simulation.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Perturbs the analytical power distribution; a negative control.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub flow: PathBuf,
    /// Output prefix; files are written as `<prefix>.<kind>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the flow file's deadline.
    #[arg(long)]
    pub deadline: Option<f64>,
    /// Overrides the flow file's confidence.
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long, default_value_t = taskpower_core::pmf::DEFAULT_SUPPORT_CAP, value_parser = parse_support_cap)]
    pub support_cap: usize,
}

fn parse_support_cap(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        _ => Err(format!("`{s}` is not an integer of at least 2")),
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn input(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INPUT, message: message.into() }
}

fn schedule_failure(e: ScheduleError) -> Failure {
    let code = match e {
        ScheduleError::Infeasible | ScheduleError::NoProcessorCount { .. } => EXIT_INFEASIBLE,
        _ => EXIT_INPUT,
    };
    Failure { code, message: e.to_string() }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(report) => {
            let _ = stdout.write_all(report.as_bytes());
            EXIT_OK
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Runs one command and returns the text it prints on success.
pub fn execute(command: &Command) -> Result<String, Failure> {
    match command {
        Command::Extract { ir, fu, out } => cmd_extract(ir, fu, out),
        Command::Estimate { common } => cmd_estimate(common),
        Command::Schedule { common, levels } => cmd_schedule(common, levels),
        Command::Multiproc { common, levels, max_procs } => cmd_multiproc(common, levels, *max_procs as usize),
        Command::Verify { common, trials, seed, inject_fault } => cmd_verify(common, *trials, *seed, *inject_fault),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reads the flow file and applies command-line overrides.
fn load_flow(common: &Common) -> Result<FlowGraph, Failure> {
    let text = read(&common.flow)?;
    let mut g = parse_flow_file(&text).map_err(|e| input(format!("{}: {e}", common.flow.display())))?;
    if let Some(d) = common.deadline {
        g.deadline = Some(d);
    }
    if let Some(c) = common.confidence {
        g.confidence = Some(c);
    }
    g.ensure_valid().map_err(|e| input(e.to_string()))?;
    Ok(g)
}

fn load_levels(path: &Path) -> Result<Vec<VoltageLevel>, Failure> {
    parse_levels(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn cmd_extract(ir: &Path, fu: &Path, out: &Path) -> Result<String, Failure> {
    let program = parse_ir(&read(ir)?).map_err(|e| input(format!("{}: {e}", ir.display())))?;
    let library = parse_fu_library(&read(fu)?).map_err(|e| input(format!("{}: {e}", fu.display())))?;
    let graph = extract_flow(&program, &library).map_err(|e| input(e.to_string()))?;
    let text = serialize_flow_file(&graph).map_err(|e| input(e.to_string()))?;
    write(out, &text)?;
    Ok(format!(
        "wrote {} ({} blocks, {} ops, {} flows)\n",
        out.display(),
        program.blocks.len(),
        program.op_count(),
        graph.flows.len()
    ))
}

pub fn cmd_estimate(common: &Common) -> Result<String, Failure> {
    let g = load_flow(common)?;
    let report = analyze(&g, &AnalysisOptions { support_cap: common.support_cap }).map_err(|e| input(e.to_string()))?;
    let text = report.to_text();
    if let Some(prefix) = &common.out {
        write(&with_suffix(prefix, ".report.txt"), &text)?;
        write(&with_suffix(prefix, ".time.csv"), &report.time.to_csv())?;
        write(&with_suffix(prefix, ".power.csv"), &report.power.to_csv())?;
    }
    Ok(text)
}

fn enumeration_options(common: &Common) -> EnumerationOptions {
    EnumerationOptions { analysis: AnalysisOptions { support_cap: common.support_cap }, ..Default::default() }
}

pub fn cmd_schedule(common: &Common, levels: &Path) -> Result<String, Failure> {
    let g = load_flow(common)?;
    let levels = load_levels(levels)?;
    let deadline = g.deadline.ok_or_else(|| input("no deadline: set one in the flow file or pass --deadline"))?;
    let confidence = g.confidence.unwrap_or(1.0);
    let result = enumerate_assignments(&g, &levels, deadline, confidence, &enumeration_options(common))
        .map_err(schedule_failure)?;
    let text = result.to_text();
    if let Some(prefix) = &common.out {
        write(&with_suffix(prefix, ".schedule.txt"), &text)?;
        write(&with_suffix(prefix, ".best.power.csv"), &result.best_report.power.to_csv())?;
        write(&with_suffix(prefix, ".worst.power.csv"), &result.worst_report.power.to_csv())?;
    }
    Ok(text)
}

pub fn cmd_multiproc(common: &Common, levels: &Path, max_procs: usize) -> Result<String, Failure> {
    let g = load_flow(common)?;
    let levels = load_levels(levels)?;
    let deadline = g.deadline.ok_or_else(|| input("no deadline: set one in the flow file or pass --deadline"))?;
    let confidence = g.confidence.unwrap_or(1.0);
    let opts = MultiprocOptions { max_processors: max_procs, enumeration: enumeration_options(common) };
    let schedule = multiproc_schedule(&g, deadline, confidence, &levels, &opts).map_err(schedule_failure)?;
    let text = schedule.to_text();
    if let Some(prefix) = &common.out {
        write(&with_suffix(prefix, ".multiproc.txt"), &text)?;
        for (k, power) in schedule.per_lane_power.iter().enumerate() {
            write(&with_suffix(prefix, &format!(".lane{k}.power.csv")), &power.to_csv())?;
        }
    }
    Ok(text)
}

pub fn cmd_verify(common: &Common, trials: u64, seed: u64, inject_fault: bool) -> Result<String, Failure> {
    let g = load_flow(common)?;
    let root = g.flatten().map_err(|e| input(e.to_string()))?;
    let opts = AnalysisOptions { support_cap: common.support_cap };
    let mut analytic = evaluate(&root, &opts).map_err(|e| input(e.to_string()))?;
    if inject_fault {
        analytic.power = analytic.power.scale(1.1).map_err(|e| input(e.to_string()))?;
    }
    let mut out = String::new();
    let mut pass = true;
    writeln!(out, "analysis mean_time = {} mean_power = {}", analytic.time.expectation(), analytic.power.expectation())
        .unwrap();

    let count = outcome_count(&root);
    if count <= OUTCOME_CAP {
        let (time, power) = enumerate_exact(&root).map_err(|e| input(e.to_string()))?;
        let dt = max_point_deviation(&analytic.time, &time);
        let dp = max_point_deviation(&analytic.power, &power);
        let ok = dt <= EXACT_TOLERANCE && dp <= EXACT_TOLERANCE;
        pass &= ok;
        writeln!(out, "exact mean_time = {} mean_power = {}", time.expectation(), power.expectation()).unwrap();
        writeln!(out, "exact max_deviation_time = {dt} max_deviation_power = {dp} {}", verdict(ok)).unwrap();
    } else {
        writeln!(out, "exact skipped: {count} joint outcomes exceed {OUTCOME_CAP}").unwrap();
    }

    let sim = monte_carlo(&g, trials, seed).map_err(|e| input(e.to_string()))?;
    let time_ok = within_standard_errors(&analytic.time, &sim.empirical_time, trials);
    let power_ok = within_standard_errors(&analytic.power, &sim.empirical_power, trials);
    pass &= time_ok && power_ok;
    writeln!(
        out,
        "monte_carlo trials = {trials} seed = {seed} mean_time = {} mean_power = {}",
        sim.empirical_time.expectation(),
        sim.empirical_power.expectation()
    )
    .unwrap();
    writeln!(out, "monte_carlo time {} power {}", verdict(time_ok), verdict(power_ok)).unwrap();
    writeln!(out, "verdict = {}", verdict(pass)).unwrap();

    if let Some(prefix) = &common.out {
        write(&with_suffix(prefix, ".sim.time.csv"), &sim.empirical_time.to_csv())?;
        write(&with_suffix(prefix, ".sim.power.csv"), &sim.empirical_power.to_csv())?;
    }
    if pass {
        Ok(out)
    } else {
        Err(Failure { code: EXIT_VERIFY, message: format!("verification failed\n{out}") })
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}
