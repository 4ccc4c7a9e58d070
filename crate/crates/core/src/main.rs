use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedkmeans::harness::{generate_data, load_config, run_config};

#[derive(Parser)]
#[command(
    name = "fedkmeans",
    version,
    about = "Federated k-means experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its results.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Write the generated datasets and client partitions only.
    GenData { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => load_config(config).and_then(|(c, base)| run_config(&c, &base)),
        Command::Validate { config } => load_config(config).map(|(c, _)| {
            let runs = c.expand().len();
            println!(
                "{}: ok ({} seed(s), {} method(s), {runs} sweep point(s))",
                config.display(),
                c.seeds.len(),
                c.methods.len()
            );
            Vec::new()
        }),
        Command::GenData { config } => {
            load_config(config).and_then(|(c, base)| generate_data(&c, &base))
        }
    };
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
