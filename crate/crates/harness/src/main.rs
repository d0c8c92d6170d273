use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steinrl::{run_with_threads, ExperimentConfig, Format, HarnessError, Scenario};

#[derive(Parser)]
#[command(
    name = "steinrl",
    version,
    about = "Simulate critic-free policy-gradient baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline MSE against the true prompt values across rollout counts.
    MseSweep(Common),
    /// Trace variance of the policy gradient, Monte Carlo and micro-batch meters.
    GradVariance(Common),
    /// Plug-in shrinkage coefficient across rollout counts.
    LambdaCurve(Common),
    /// Exact enumeration checks; exits 2 if any check fails.
    OracleCheck(Common),
    /// Gradient ascent on a tabular policy with the exact objective per step.
    ToyTrain(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output path. Without either, the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

impl Command {
    fn split(&self) -> (Scenario, &Common) {
        match self {
            Command::MseSweep(c) => (Scenario::MseSweep, c),
            Command::GradVariance(c) => (Scenario::GradVariance, c),
            Command::LambdaCurve(c) => (Scenario::LambdaCurve, c),
            Command::OracleCheck(c) => (Scenario::OracleCheck, c),
            Command::ToyTrain(c) => (Scenario::ToyTrain, c),
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, HarnessError> {
    let (scenario, args) = cli.command.split();
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.scenario != scenario {
        return Err(HarnessError::field(
            "scenario",
            format!("config is for `{}`, not `{scenario}`", config.scenario),
        ));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output = Some(out.clone());
    }
    if let Some(format) = args.format {
        config.format = format;
    }
    let report = run_with_threads(&config, args.threads.map(usize::from))?;
    match &config.output {
        Some(path) => {
            let file = File::create(path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let mut w = BufWriter::new(file);
            report.write(config.format, &mut w)?;
            w.flush()?;
        }
        None => report.write(config.format, std::io::stdout().lock())?,
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("steinrl: one or more oracle checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("steinrl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
