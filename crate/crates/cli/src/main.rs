use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scatter_rl_cli::{load_config, run, Command};

#[derive(Parser)]
#[command(
    name = "scatter-rl",
    version,
    about = "Learned sensor placement and frequency selection for inverse scattering"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Run configuration (flat `key = value` file).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configured location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate and calibrate the scatterer dataset.
    GenData(Common),
    /// Train the policy and value networks with PPO.
    Train(Common),
    /// Evaluate the configured strategies on the test set.
    Eval(Common),
    /// Run one strategy on one test scatterer and dump images.
    Reconstruct(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, common) = match cli.command {
        Sub::GenData(c) => (Command::GenData, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::Reconstruct(c) => (Command::Reconstruct, c),
    };
    let result = load_config(&common.config)
        .and_then(|cfg| run(command, &cfg, common.out.as_deref(), &mut std::io::stdout()));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
