//! Command-line front end for the `cbmat` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod report;

use clap::error::ErrorKind;
use clap::CommandFactory;

use config::{load_file, Cli, Command, FileConfig, RunConfig, SimulateConfig};
use error::CliError;

fn file_config(path: Option<&std::path::Path>) -> Result<FileConfig, CliError> {
    path.map_or(Ok(FileConfig::default()), load_file)
}

fn fail(err: &CliError) -> i32 {
    eprintln!("{}", err.to_json());
    err.exit_code()
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Test(args) => {
            let file = match file_config(args.config.as_deref()) {
                Ok(f) => f,
                Err(e) => return fail(&e),
            };
            let cfg = match RunConfig::resolve(&args, &file) {
                Ok(c) => c,
                Err(Ok(missing)) => {
                    let mut cmd = Cli::command();
                    let sub = cmd.find_subcommand_mut("test").expect("test subcommand");
                    sub.error(
                        ErrorKind::MissingRequiredArgument,
                        format!("the required option {} was given neither as a flag nor in --config", missing.0),
                    )
                    .exit()
                }
                Err(Err(e)) => return fail(&e),
            };
            match commands::run_test(&cfg).and_then(|doc| doc.to_json()) {
                Ok(json) => match commands::write_output(cfg.out.as_deref(), &(json + "\n")) {
                    Ok(()) => 0,
                    Err(e) => fail(&e),
                },
                Err(e) => fail(&e),
            }
        }
        Command::Simulate(args) => {
            let cfg = file_config(args.config.as_deref()).and_then(|file| SimulateConfig::resolve(&args, &file));
            match cfg.and_then(|c| commands::run_simulate(&c)) {
                Ok(_) => 0,
                Err(e) => fail(&e),
            }
        }
    }
}
