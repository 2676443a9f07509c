use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

use pid_sim::metrics::{
    campus_pages, pages_per_course, pages_to_reams, pages_to_trees, CourseUsage, PaperConversion,
};
use pid_sim::pidctl::{ChannelGate, NoPause};
use pid_sim::runner::{run, write_log, write_report_dir, RunArtifacts};
use pid_sim::scenario::load_scenario;

#[derive(Parser)]
#[command(
    name = "pid-sim",
    version,
    about = "Proactive information delivery simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios.
    Run(RunArgs),
    /// Load and validate scenarios without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Paper-savings arithmetic.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, env = "PID_SIM_SEED")]
    seed: Option<u64>,
    /// Wait for enter between stepped-mode phases.
    #[arg(long)]
    step: bool,
    /// Directory for events.log, report.txt and summary.txt.
    #[arg(long, value_name = "DIR")]
    report: Option<PathBuf>,
    /// Write the event log to this file.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Scenarios to run in parallel.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: u32,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, requires_all = ["pages", "weeks"], conflicts_with_all = ["campus", "convert"])]
    students: Option<u64>,
    /// Pages per student per week.
    #[arg(long)]
    pages: Option<u64>,
    #[arg(long)]
    weeks: Option<u64>,
    /// Number of instructors on campus.
    #[arg(long, requires_all = ["fraction", "pages_each"], conflicts_with = "convert")]
    campus: Option<u64>,
    /// Share of instructors counted, as a fraction such as 1/4.
    #[arg(long, value_parser = parse_fraction)]
    fraction: Option<Ratio<u64>>,
    /// Pages per counted instructor per semester.
    #[arg(long)]
    pages_each: Option<u64>,
    /// Convert a page count to reams and trees.
    #[arg(long, value_name = "PAGES")]
    convert: Option<u64>,
}

fn parse_fraction(text: &str) -> Result<Ratio<u64>, String> {
    let parsed = match text.split_once('/') {
        Some((n, d)) => {
            let n: u64 = n
                .trim()
                .parse()
                .map_err(|_| format!("bad numerator in {text:?}"))?;
            let d: u64 = d
                .trim()
                .parse()
                .map_err(|_| format!("bad denominator in {text:?}"))?;
            if d == 0 {
                return Err("denominator must be non-zero".into());
            }
            Ratio::new(n, d)
        }
        None => Ratio::from_integer(
            text.trim()
                .parse()
                .map_err(|_| format!("bad fraction {text:?}"))?,
        ),
    };
    Ok(parsed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { scenarios } => cmd_validate(&scenarios),
        Command::Metrics(args) => cmd_metrics(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn banner() -> String {
    format!("pid-sim {}", env!("CARGO_PKG_VERSION"))
}

fn cmd_validate(paths: &[PathBuf]) -> Result<(), String> {
    let mut failed = false;
    for path in paths {
        match load_scenario(path) {
            Ok(s) => {
                println!("ok {}", path.display());
                print!("{}", s.describe());
            }
            Err(e) => {
                eprintln!("invalid {}: {e}", path.display());
                failed = true;
            }
        }
    }
    if failed {
        Err("validation failed".into())
    } else {
        Ok(())
    }
}

fn run_one(path: &Path, seed: Option<u64>, interactive: bool) -> Result<RunArtifacts, String> {
    let scenario = load_scenario(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let result = if interactive {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in io::stdin().lock().lines() {
                if line.is_err() || tx.send(()).is_err() {
                    break;
                }
            }
        });
        let mut gate = ChannelGate::new(rx, io::stdout());
        run(&scenario, seed, &mut gate)
    } else {
        run(&scenario, seed, &mut NoPause)
    };
    result.map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<(), String> {
    let many = args.scenarios.len() > 1;
    if many && (args.step || args.log.is_some()) {
        return Err("--step and --log take a single scenario".into());
    }

    let jobs = (args.jobs as usize).min(args.scenarios.len()).max(1);
    let mut results: Vec<Option<Result<RunArtifacts, String>>> = vec![None; args.scenarios.len()];
    if jobs == 1 {
        for (slot, path) in results.iter_mut().zip(&args.scenarios) {
            *slot = Some(run_one(path, args.seed, args.step));
        }
    } else {
        let chunk = args.scenarios.len().div_ceil(jobs);
        thread::scope(|scope| {
            for (paths, slots) in args.scenarios.chunks(chunk).zip(results.chunks_mut(chunk)) {
                let seed = args.seed;
                scope.spawn(move || {
                    for (slot, path) in slots.iter_mut().zip(paths) {
                        *slot = Some(run_one(path, seed, false));
                    }
                });
            }
        });
    }

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(out, "{}", banner());
    let mut failures = Vec::new();
    for (path, result) in args.scenarios.iter().zip(results) {
        let artifacts = match result.expect("every scenario ran") {
            Ok(a) => a,
            Err(e) => {
                failures.push(e);
                continue;
            }
        };
        if many {
            let _ = writeln!(out, "== {} ==", path.display());
        }
        if args.step {
            let _ = write!(out, "{}", artifacts.summary);
        } else {
            let _ = write!(out, "{}", artifacts.stdout_text());
        }
        if let Some(dir) = &args.report {
            let dir = if many {
                dir.join(path.file_stem().unwrap_or_default())
            } else {
                dir.clone()
            };
            write_report_dir(&artifacts, &dir).map_err(|e| e.to_string())?;
        }
        if let Some(log) = &args.log {
            write_log(&artifacts, log).map_err(|e| e.to_string())?;
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("\n"))
    }
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), String> {
    let c = PaperConversion::default();
    println!(
        "conversion pages_per_tree={} reams_per_tree={} pages_per_ream={}",
        c.pages_per_tree,
        c.reams_per_tree,
        c.pages_per_ream()
    );
    let pages = if let Some(students) = args.students {
        let usage = CourseUsage::new(students, args.pages.unwrap_or(0), args.weeks.unwrap_or(0));
        println!(
            "course students={} pages_per_student_week={} weeks={}",
            usage.students, usage.pages_per_student_week, usage.weeks
        );
        println!(
            "pages_per_week={}",
            usage.students * usage.pages_per_student_week
        );
        pages_per_course(&usage)
    } else if let Some(instructors) = args.campus {
        let fraction = args.fraction.expect("required by clap");
        let each = args.pages_each.expect("required by clap");
        println!("campus instructors={instructors} fraction={fraction} pages_each={each}");
        campus_pages(instructors, fraction, each).map_err(|e| e.to_string())?
    } else if let Some(pages) = args.convert {
        pages
    } else {
        return Err("metrics needs --students/--pages/--weeks, --campus/--fraction/--pages-each, or --convert".into());
    };
    println!("pages={pages}");
    println!("reams={}", pages_to_reams(pages, &c));
    println!("trees={}", pages_to_trees(pages, &c));
    Ok(())
}
