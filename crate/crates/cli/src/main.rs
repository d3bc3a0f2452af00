use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drivefalsify_core::campaign::{
    ladder_table, render_summary, replay_file, run_campaign, run_ladder, simulate_once, CampaignConfig,
    CampaignError, LadderConfig, ReplayFile, SimulateRequest,
};
use drivefalsify_core::search::Candidate;

/// Search-based falsification of a versioned cruise controller.
#[derive(Debug, Parser)]
#[command(name = "drivefalsify", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one campaign (one search per seed) from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a set of campaigns and print the version-ladder table.
    Ladder {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one concrete candidate and write its traces.
    Simulate {
        #[arg(long)]
        version: String,
        /// Bundled sequence name or `.tst` path.
        #[arg(long)]
        sequence: String,
        /// Parameter value, `name=value`; repeat for each parameter.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        /// Assessment id or path; repeat. Defaults to the version's requirements.
        #[arg(long = "assessment")]
        assessments: Vec<String>,
        /// Controller fields to replace, as a JSON object.
        #[arg(long)]
        overrides: Option<String>,
        #[arg(long, default_value_t = 0.001)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a replay file and report its fitness.
    Replay {
        file: PathBuf,
        /// Also run at this sampling period and compare.
        #[arg(long)]
        compare_dt: Option<f64>,
        /// Write the full trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

fn parse_params(params: &[String]) -> Result<Candidate, CampaignError> {
    let mut candidate = Candidate::default();
    for param in params {
        let (name, value) = param
            .split_once('=')
            .ok_or_else(|| CampaignError::Config(format!("`{param}` is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CampaignError::Config(format!("`{value}` is not a number")))?;
        candidate.insert(name.trim().to_string(), value);
    }
    Ok(candidate)
}

fn fitness(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.6}")
    } else {
        format!("{f}")
    }
}

fn run(cli: Cli) -> Result<(), CampaignError> {
    match cli.command {
        Command::Run { config, out } => {
            let mut config = CampaignConfig::load(&config)?;
            if out.is_some() {
                config.output_dir = out;
            }
            let report = run_campaign(&config)?;
            let _ = std::io::stdout().write_all(render_summary(&report).as_bytes());
            if let Some(dir) = &config.output_dir {
                say!("\nreport written to {}", dir.display());
            }
        }
        Command::Ladder { config, out } => {
            let mut config = LadderConfig::load(&config)?;
            if out.is_some() {
                config.output_dir = out;
            }
            let report = run_ladder(&config)?;
            let _ = std::io::stdout().write_all(ladder_table(&report.rows).as_bytes());
        }
        Command::Simulate {
            version,
            sequence,
            params,
            assessments,
            overrides,
            dt,
            out,
        } => {
            let mut request = SimulateRequest::new(&version, &sequence, parse_params(&params)?);
            if !assessments.is_empty() {
                request.assessments = Some(assessments);
            }
            if let Some(text) = overrides {
                request.overrides = Some(
                    serde_json::from_str(&text)
                        .map_err(|e| CampaignError::Config(format!("--overrides: {e}")))?,
                );
            }
            request.dt = dt;
            request.output_dir = out;
            let run = simulate_once(&request)?;
            let samples = run.trace.as_ref().map_or(0, |t| t.len());
            say!("samples   {samples}");
            say!("fitness   {}", fitness(run.report.fitness));
            say!("verdict   {:?}", run.report.verdict);
            for r in &run.requirements {
                say!("  {:<4} {}", r.id, fitness(r.min_robustness));
            }
        }
        Command::Replay {
            file,
            compare_dt,
            trace,
        } => {
            let replay = ReplayFile::load(&file)?;
            let outcome = replay_file(&replay, compare_dt, trace.is_some())?;
            let report = &outcome.run.report;
            say!(
                "fitness   {} (dt = {} s)",
                fitness(report.fitness),
                replay.plant.dt
            );
            if let Some(recorded) = replay.fitness {
                say!("recorded  {}", fitness(recorded));
            }
            say!("violated  {}", report.violated_requirements.join(", "));
            if let Some((dt, other)) = &outcome.compared {
                say!("fitness   {} (dt = {dt} s)", fitness(other.fitness));
                say!("verdicts  {:?} vs {:?}", report.verdict, other.verdict);
            }
            if let (Some(path), Some(t)) = (trace, &outcome.run.trace) {
                t.write_csv(&path)
                    .map_err(|e| CampaignError::Simulation(format!("{}: {e}", path.display())))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
