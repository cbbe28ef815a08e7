//! `ttrl-guard` command-line tool.
//!
//! Failures print a single tab-separated line to stderr,
//! `error<TAB>kind<TAB>message`, and exit with status 1 (2 for usage errors).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ttrl_guard::harness::{
    analyze_log, load_config, parse_grid_arg, render_report, run_experiment, sweep,
    AnalyticsReport, ExperimentConfig, Method, RunSummary, SweepCell, SweepGrid,
};
use ttrl_guard::Error;

#[derive(Parser)]
#[command(
    name = "ttrl-guard",
    version,
    about = "Guarded majority-vote test-time RL on a synthetic policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its trajectory log and summary.
    Run(Common),
    /// Analyse an existing trajectory log.
    Analyze {
        log: PathBuf,
        /// CSV with columns problem_id,ground_truth.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a grid of guard parameters over several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One axis, e.g. `lambda1=0.25,0.5,0.75`. Repeat for more axes.
        #[arg(long)]
        grid: Vec<String>,
        /// Comma-separated seeds; defaults to the single run seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Tabulate run summaries into CSV and text reports.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for both scenario generation and sampling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig, Error> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c = c.with_seed(s);
        }
        if let Some(m) = self.method {
            c.method = m;
        }
        if let Some(t) = self.steps {
            c.total_steps = t;
        }
        c.validate()?;
        Ok(c)
    }
}

fn out_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialise");
    s.push('\n');
    s
}

fn fates_line(a: &AnalyticsReport) -> String {
    match &a.fates {
        Some(f) => format!(
            "total_degraded={:.4} degraded={:.4} learned={:.4} stable_always_right={:.4} always_wrong={:.4}",
            f.total_degraded, f.degraded, f.learned, f.stable_always_right, f.always_wrong
        ),
        None => "fates=unavailable".into(),
    }
}

fn run(common: Common) -> Result<(), Error> {
    let mut c = common.experiment()?;
    out_dir(&common.out)?;
    let log = common.out.join("trajectory.jsonl");
    c.log_path = Some(log.clone());
    let out = run_experiment(&c)?;
    write(&common.out.join("summary.json"), &to_json(&out.summary))?;
    let s = &out.summary;
    print!(
        "method={} seed={} steps={} pass@1 {:.4} -> {:.4}",
        s.method, s.seed, s.total_steps, s.initial_expected_pass_at_1, s.final_expected_pass_at_1
    );
    match &s.analytics {
        Some(a) => println!(" {}", fates_line(a)),
        None => println!(),
    }
    for n in &s.notices {
        eprintln!("notice\t{n}");
    }
    Ok(())
}

fn analyze(log: &Path, ground_truth: Option<&Path>, out: &Path) -> Result<(), Error> {
    let report = analyze_log(log, ground_truth)?;
    out_dir(out)?;
    write(&out.join("analysis.json"), &to_json(&report))?;
    println!(
        "problems={} steps={} {}",
        report.n_problems,
        report.total_steps,
        fates_line(&report)
    );
    for n in &report.notices {
        eprintln!("notice\t{n}");
    }
    Ok(())
}

fn run_sweep(common: Common, grid: &[String], seeds: &[u64]) -> Result<(), Error> {
    let base = common.experiment()?;
    let grid: SweepGrid = grid
        .iter()
        .map(|g| parse_grid_arg(g))
        .collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds.to_vec()
    };
    let cells = sweep(&base, &grid, &seeds)?;
    out_dir(&common.out)?;
    let csv = SweepCell::to_csv(&cells);
    write(&common.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn report(paths: &[PathBuf], out: &Path) -> Result<(), Error> {
    let mut summaries = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        let s: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        summaries.push(s);
    }
    let r = render_report(&summaries)?;
    out_dir(out)?;
    write(&out.join("report.csv"), &r.csv)?;
    write(&out.join("report.txt"), &r.text)?;
    print!("{}", r.text);
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            eprintln!(
                "error\tusage\t{}",
                one_line(first.trim_start_matches("error: "))
            );
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(common) => run(common),
        Command::Analyze {
            log,
            ground_truth,
            out,
        } => analyze(&log, ground_truth.as_deref(), &out),
        Command::Sweep {
            common,
            grid,
            seeds,
        } => run_sweep(common, &grid, &seeds),
        Command::Report { summaries, out } => report(&summaries, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error\t{}\t{}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
