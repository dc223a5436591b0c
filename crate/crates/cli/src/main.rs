use std::process::ExitCode;

use clap::Parser;
use gridfed_cli::args::{Cli, Command};
use gridfed_cli::run;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run::cmd_run(args),
        Command::Cost(args) => run::cmd_cost(args),
        Command::Gen(args) => run::cmd_gen(args),
        Command::Replay(args) => run::cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.one_line());
            ExitCode::FAILURE
        }
    }
}
