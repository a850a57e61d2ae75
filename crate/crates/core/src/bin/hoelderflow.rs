use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoelderflow::cli::{parse_seeds, run, Command, RunOptions, EXIT_CONFIG, EXIT_OTHER};

#[derive(Parser)]
#[command(name = "hoelderflow", version, about = "Young-ODE experiments driven by fractional Brownian paths")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample fractional Brownian paths.
    SampleFbm(RunArgs),
    /// Evaluate a Young integral by Riemann–Stieltjes sums and the fractional representation.
    Integrate(RunArgs),
    /// Solve a Young ODE with the Euler and/or exponential-Euler scheme.
    Solve(RunArgs),
    /// Solve the scalar linear-noise problem through the Doss–Sussmann transform.
    Doss(RunArgs),
    /// Run the unit-interval stability iteration.
    Stability(RunArgs),
    /// Check the Gronwall-type recursion on a stored sequence.
    Gronwall(RunArgs),
    /// Turn report files into plot data.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seed list such as `1,2,10..20` or `0..=24`; overrides the config's `seeds`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (default: all cores). The HOELDERFLOW_JOBS variable takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::SampleFbm(a) => (Command::SampleFbm, a),
        Sub::Integrate(a) => (Command::Integrate, a),
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Doss(a) => (Command::Doss, a),
        Sub::Stability(a) => (Command::Stability, a),
        Sub::Gronwall(a) => (Command::Gronwall, a),
        Sub::Report(a) => (Command::Report, a),
    };
    let fail = |code: i32, msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(code as u8)
    };
    let raw = match std::fs::read_to_string(&args.config) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", args.config.display())),
    };
    let seeds = match args.seeds.as_deref().map(parse_seeds).transpose() {
        Ok(s) => s,
        Err(e) => return fail(e.code, e.message),
    };
    let jobs = match std::env::var("HOELDERFLOW_JOBS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => return fail(EXIT_CONFIG, format!("HOELDERFLOW_JOBS must be a non-negative integer, got `{v}`")),
        },
        Err(_) => args.jobs,
    };
    let opts = RunOptions {
        output_dir: args.output_dir,
        seeds,
        jobs,
        base_dir: args.config.parent().map(PathBuf::from).unwrap_or_default(),
    };
    match run(command, &raw, &opts) {
        Ok(summary) => {
            println!("{} files written to {}", summary.files.len() + 1, summary.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let name = args.config.display();
            fail(if e.code == 0 { EXIT_OTHER } else { e.code }, format!("{name}: {}", e.message))
        }
    }
}
