use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfglab_cli::{run, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mfglab", version, about = "Mean-field games with absorption: solvers and Monte Carlo studies")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the truncated fixed point and write the flow, policy and value.
    SolveMfg(Args),
    /// Simulate the N-player game.
    SimulateNplayer(Args),
    /// Distance of N-player survivors to the mean-field flow, over a list of N.
    ChaosStudy(Args),
    /// Cost improvement of a unilateral deviation, over a list of N.
    NashGap(Args),
    /// Run the built-in checks; exits with 3 if any fails.
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Output directory; overrides MFGLAB_OUTPUT_DIR and the config.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::SolveMfg(a) => (Command::SolveMfg, a),
        Sub::SimulateNplayer(a) => (Command::SimulateNplayer, a),
        Sub::ChaosStudy(a) => (Command::ChaosStudy, a),
        Sub::NashGap(a) => (Command::NashGap, a),
        Sub::Validate(a) => (Command::Validate, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|c| run(command, &c, args.output.as_deref()));
    match result {
        Ok(out) => {
            println!("{}", out.directory.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
