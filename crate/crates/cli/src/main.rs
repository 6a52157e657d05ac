use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pmbugs::crash_enum::{simulate, CrashPoints, CrashSimReport, Verdict, DEFAULT_PENDING_CAP};
use pmbugs::explorer::{compare_policies, run_exploration, GraphSpec, Policy, QConfig};
use pmbugs::levelhash::{crash_sweep, generate_workload, BugKnob, WorkloadConfig};
use pmbugs::oracles::render;
use pmbugs::{check_trace, parse_trace, summarize, write_trace, BugReport, Trace};

/// Persistent-memory trace analysis: bug oracles, crash images, a level
/// hashing workload generator and an exploration harness.
#[derive(Debug, Parser)]
#[command(name = "pmbugs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the bug oracles over a trace. Exits 1 when bugs are found.
    Check {
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Enumerate and check crash images.
    CrashSim {
        trace: PathBuf,
        /// Crash point (event index); repeatable. Defaults to the trace's
        /// crash records, or its end.
        #[arg(long = "at", conflicts_with = "every_fence")]
        at: Vec<usize>,
        /// Crash immediately before and after every fence.
        #[arg(long)]
        every_fence: bool,
        /// Largest flush-pending set to enumerate.
        #[arg(long, default_value_t = DEFAULT_PENDING_CAP)]
        cap: usize,
        #[arg(long, value_enum, default_value_t = Checker::Levelhash)]
        checker: Checker,
    },
    /// Generate a level hashing workload trace.
    Levelhash {
        #[arg(long, default_value_t = 100)]
        ops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Bug knob as NAME or NAME:SITES; repeatable.
        #[arg(long = "knob", value_parser = parse_knob)]
        knobs: Vec<BugKnob>,
        /// log2 of the initial bottom-level bucket count.
        #[arg(long, default_value_t = 2)]
        initial_exp: u32,
        /// Resize instead of trying one-step movement.
        #[arg(long)]
        no_movement: bool,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explore a workload graph with a state-selection policy.
    Explore {
        #[arg(long, value_enum, default_value_t = PolicyArg::Qlearn)]
        policy: PolicyArg,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Graph spec (JSON).
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = QConfig::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = QConfig::default().gamma)]
        gamma: f64,
        #[arg(long, default_value_t = QConfig::default().epsilon)]
        epsilon: f64,
    },
    /// Summarize a bug-report file or a trace as a bar chart.
    Report { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Checker {
    Levelhash,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Random,
    PmAware,
    Qlearn,
    All,
}

/// Bad option values that clap cannot catch.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse_knob(s: &str) -> Result<BugKnob, String> {
    s.parse().map_err(|e: pmbugs::LevelHashError| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Check { trace, format } => check(&trace, format),
        Command::CrashSim {
            trace,
            at,
            every_fence,
            cap,
            checker,
        } => {
            let points = if every_fence {
                CrashPoints::EveryFence
            } else if at.is_empty() {
                CrashPoints::Markers
            } else {
                CrashPoints::At(at)
            };
            crash_sim(&trace, points, cap, checker)
        }
        Command::Levelhash {
            ops,
            seed,
            knobs,
            initial_exp,
            no_movement,
            out,
        } => {
            if initial_exp > 24 {
                bail!(UsageError("--initial-exp must be at most 24".into()));
            }
            let config = WorkloadConfig {
                ops,
                seed,
                initial_exp,
                movement: !no_movement,
                knobs,
            };
            let workload = generate_workload(&config)?;
            match out {
                Some(path) => {
                    let file = File::create(&path)
                        .with_context(|| format!("cannot create {}", path.display()))?;
                    let mut w = BufWriter::new(file);
                    write_trace(&workload.trace, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let mut w = BufWriter::new(io::stdout().lock());
                    write_trace(&workload.trace, &mut w)?;
                    w.flush()?;
                }
            }
            Ok(0)
        }
        Command::Explore {
            policy,
            budget,
            seed,
            graph,
            alpha,
            gamma,
            epsilon,
        } => {
            let config = QConfig {
                alpha,
                gamma,
                epsilon,
                seed,
                ..QConfig::default()
            };
            config.validate().map_err(|e| UsageError(e.to_string()))?;
            if budget == 0 {
                bail!(UsageError("--budget must be at least 1".into()));
            }
            let text = fs::read_to_string(&graph)
                .with_context(|| format!("cannot read {}", graph.display()))?;
            let spec = GraphSpec::from_json(&text)?;
            let json = match policy {
                PolicyArg::All => {
                    serde_json::to_string_pretty(&compare_policies(&spec, budget, &config)?)?
                }
                p => {
                    let p = match p {
                        PolicyArg::Random => Policy::Random,
                        PolicyArg::PmAware => Policy::PmAware,
                        _ => Policy::QLearn,
                    };
                    serde_json::to_string_pretty(&run_exploration(&spec, p, budget, &config)?)?
                }
            };
            println!("{json}");
            Ok(0)
        }
        Command::Report { file } => report(&file),
    }
}

fn load_trace(path: &Path) -> Result<Trace> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_trace(BufReader::new(file)).with_context(|| format!("invalid trace {}", path.display()))
}

fn check(path: &Path, format: Format) -> Result<u8> {
    let outcome = check_trace(&load_trace(path)?);
    let text = match format {
        Format::Json => render::json(&outcome.reports) + "\n",
        Format::Csv => render::csv(&outcome.reports),
        Format::Text => render::text(&outcome.reports),
    };
    io::stdout().write_all(text.as_bytes())?;
    Ok(u8::from(!outcome.reports.is_empty()))
}

fn crash_sim(path: &Path, points: CrashPoints, cap: usize, checker: Checker) -> Result<u8> {
    let trace = load_trace(path)?;
    let single = matches!(&points, CrashPoints::At(v) if v.len() == 1)
        || (points == CrashPoints::Markers
            && CrashPoints::Markers.resolve(&trace.events).len() == 1);
    let reports: Vec<CrashSimReport> = match checker {
        Checker::Levelhash => crash_sweep(&trace, &points, cap)?,
        Checker::None => simulate(&trace, &points, cap, &mut (), |_, _, _| {
            |_: &pmbugs::CrashImage| Verdict::Consistent
        })?,
    };
    let json = if single {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(&reports)?
    };
    println!("{json}");
    Ok(0)
}

fn report(path: &Path) -> Result<u8> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let reports: Vec<BugReport> = match serde_json::from_str(&text) {
        Ok(reports) => reports,
        Err(_) => {
            let trace = parse_trace(text.as_bytes()).with_context(|| {
                format!("{} is neither a report array nor a trace", path.display())
            })?;
            check_trace(&trace).reports
        }
    };
    print!("{}", render::bar_chart(&summarize(&reports)));
    Ok(0)
}
