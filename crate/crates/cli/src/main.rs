use clap::Parser;
use skillflow_cli::args::{Cli, Command};
use skillflow_cli::commands;

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::BuildBank(args) => commands::build_bank::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Plan(args) => commands::plan::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
